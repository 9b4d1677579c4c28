#include "carl/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace carl {

using nlohmann::json;

namespace {

const char* kSplitNames[] = {"train", "val", "eval"};

WaveFamily wave_family_from_name(const std::string& name) {
  for (int i = 0; i < 5; ++i) {
    auto f = static_cast<WaveFamily>(i);
    if (name == wave_family_name(f)) return f;
  }
  throw PipelineError("unknown waveform family '" + name + "' in vocab.json");
}

EnvelopeShape envelope_from_name(const std::string& name) {
  for (int i = 0; i < 3; ++i) {
    auto e = static_cast<EnvelopeShape>(i);
    if (name == envelope_name(e)) return e;
  }
  throw PipelineError("unknown envelope '" + name + "' in vocab.json");
}

json params_to_json(const GeneratorParams& p) {
  return json{{"family", wave_family_name(p.family)},
              {"freq_lo_hz", p.freq_lo_hz},
              {"freq_hi_hz", p.freq_hi_hz},
              {"dur_lo_s", p.dur_lo_s},
              {"dur_hi_s", p.dur_hi_s},
              {"envelope", envelope_name(p.envelope)},
              {"chirp_octaves", p.chirp_octaves},
              {"am_rate_hz", p.am_rate_hz},
              {"am_depth", p.am_depth},
              {"bandwidth_oct", p.bandwidth_oct},
              {"harmonics", p.harmonics},
              {"harmonic_decay", p.harmonic_decay}};
}

GeneratorParams params_from_json(const json& j) {
  GeneratorParams p;
  p.family = wave_family_from_name(j.at("family").get<std::string>());
  p.freq_lo_hz = j.at("freq_lo_hz").get<double>();
  p.freq_hi_hz = j.at("freq_hi_hz").get<double>();
  p.dur_lo_s = j.at("dur_lo_s").get<double>();
  p.dur_hi_s = j.at("dur_hi_s").get<double>();
  p.envelope = envelope_from_name(j.at("envelope").get<std::string>());
  p.chirp_octaves = j.at("chirp_octaves").get<double>();
  p.am_rate_hz = j.at("am_rate_hz").get<double>();
  p.am_depth = j.at("am_depth").get<double>();
  p.bandwidth_oct = j.at("bandwidth_oct").get<double>();
  p.harmonics = j.at("harmonics").get<int>();
  p.harmonic_decay = j.at("harmonic_decay").get<double>();
  return p;
}

void write_waveform(const std::filesystem::path& path, const std::vector<double>& wav) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PipelineError("cannot write " + path.string());
  std::vector<float> f32(wav.size());
  for (size_t i = 0; i < wav.size(); ++i) f32[i] = static_cast<float>(wav[i]);
  out.write(reinterpret_cast<const char*>(f32.data()),
            static_cast<std::streamsize>(f32.size() * sizeof(float)));
  if (!out) throw PipelineError("short write to " + path.string());
}

json record_to_json(const ClipRecord& rec) {
  json j{{"id", rec.id},
         {"labels", rec.labels},
         {"polyphony", rec.polyphony},
         {"seed", rec.seed},
         {"path", rec.path}};
  if (!rec.probe.empty()) j["probe"] = rec.probe;
  return j;
}

// Picks replacement labels that are forced to contain class `forced_id`.
std::vector<int> forced_labels(const std::vector<SourceClass>& vocab, int forced_id,
                               const std::vector<double>& polyphony_dist, Rng& rng) {
  int p = sample_polyphony(polyphony_dist, rng);
  p = std::min(p, static_cast<int>(vocab.size()));
  std::vector<int> others;
  for (const SourceClass& c : vocab) {
    if (c.id != forced_id) others.push_back(c.id);
  }
  std::vector<size_t> order = rng.permutation(others.size());
  std::vector<int> labels{forced_id};
  for (int i = 0; i + 1 < p; ++i) labels.push_back(others[order[static_cast<size_t>(i)]]);
  std::sort(labels.begin(), labels.end());
  return labels;
}

}  // namespace

void make_dataset(const std::filesystem::path& dir,
                  const std::vector<SourceClass>& vocab, const DatasetSizes& sizes,
                  const std::vector<double>& polyphony_dist, uint64_t seed,
                  bool force) {
  namespace fs = std::filesystem;
  if (vocab.empty()) throw ConfigError("cannot build a dataset from an empty vocabulary");
  if (sizes.train < 0 || sizes.val < 0 || sizes.eval < 0) {
    throw ConfigError("dataset split sizes must be non-negative");
  }
  if (fs::exists(dir)) {
    if (!force) {
      throw ConfigError("dataset directory " + dir.string() +
                        " already exists; pass force to replace it");
    }
    fs::remove_all(dir);
  }

  std::vector<SourceClass> seen_vocab;
  std::vector<int> unseen_ids;
  for (const SourceClass& c : vocab) {
    if (c.seen) seen_vocab.push_back(c);
    else unseen_ids.push_back(c.id);
  }
  if (seen_vocab.size() < 2) throw ConfigError("vocabulary must have at least 2 seen classes");

  const std::map<std::string, int> split_sizes{
      {"train", sizes.train}, {"val", sizes.val}, {"eval", sizes.eval}};

  // Phase 1: label sets. Train/val draw from seen classes, eval from all.
  std::map<std::string, std::vector<std::vector<int>>> labels;
  for (const char* split : kSplitNames) {
    const std::vector<SourceClass>& pool =
        std::string(split) == "eval" ? vocab : seen_vocab;
    const int count = split_sizes.at(split);
    auto& out = labels[split];
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
      Rng rng(derive_seed(seed, std::string("labels:") + split + ":" + std::to_string(i)));
      out.push_back(sample_labels(pool, polyphony_dist, rng));
    }
  }

  // Phase 2: make sure each unseen class appears in both probe halves of the
  // eval split (half = clip index parity). Uncovered classes get injected by
  // rewriting the label set of a clip that is not the sole cover of anything.
  if (!unseen_ids.empty() && sizes.eval > 0) {
    const std::set<int> unseen_set(unseen_ids.begin(), unseen_ids.end());
    auto& eval_labels = labels["eval"];
    for (int round = 0; ; ++round) {
      if (round > 4 * static_cast<int>(unseen_ids.size()) + 16) {
        throw PipelineError("eval split too small to cover every unseen class in both probe halves");
      }
      int missing_class = -1, missing_half = -1;
      std::map<int, int> cover[2];
      for (size_t i = 0; i < eval_labels.size(); ++i) {
        for (int c : eval_labels[i]) ++cover[i % 2][c];
      }
      for (int half = 0; half < 2 && missing_class < 0; ++half) {
        if (sizes.eval <= half) continue;  // a one-clip eval split has one half
        for (int c : unseen_ids) {
          if (cover[half][c] == 0) {
            missing_class = c;
            missing_half = half;
            break;
          }
        }
      }
      if (missing_class < 0) break;
      // Highest-index clip in the half whose labels all have spare coverage.
      int target = -1;
      for (int i = sizes.eval - 1; i >= 0; --i) {
        if (i % 2 != missing_half) continue;
        bool safe = true;
        for (int c : eval_labels[static_cast<size_t>(i)]) {
          if (unseen_set.count(c) && cover[missing_half][c] <= 1) safe = false;
        }
        if (safe) {
          target = i;
          break;
        }
      }
      if (target < 0) target = missing_half < sizes.eval ? missing_half : 0;
      Rng rng(derive_seed(seed, "repair:" + std::to_string(missing_half) + ":" +
                                    std::to_string(missing_class) + ":" + std::to_string(round)));
      eval_labels[static_cast<size_t>(target)] =
          forced_labels(vocab, missing_class, polyphony_dist, rng);
    }
  }

  // Phase 3: render and persist.
  fs::create_directories(dir / "wav");
  std::ostringstream manifest_bytes;
  for (const char* split : kSplitNames) {
    fs::create_directories(dir / "wav" / split);
    std::ofstream manifest(dir / (std::string("manifest_") + split + ".jsonl"));
    if (!manifest) throw PipelineError("cannot write manifest for split " + std::string(split));
    const int count = split_sizes.at(split);
    for (int i = 0; i < count; ++i) {
      const uint64_t clip_seed =
          derive_seed(seed, std::string("clip:") + split + ":" + std::to_string(i));
      AudioScene scene = synthesize_scene_with_labels(vocab, labels[split][static_cast<size_t>(i)], clip_seed);
      char name[32];
      std::snprintf(name, sizeof(name), "%06d.f32", i);
      ClipRecord rec;
      rec.id = i;
      rec.labels = scene.labels;
      rec.polyphony = scene.polyphony;
      rec.seed = clip_seed;
      rec.path = std::string("wav/") + split + "/" + name;
      if (std::string(split) == "eval") rec.probe = i % 2 == 0 ? "train" : "test";
      write_waveform(dir / rec.path, scene.mixture);
      const std::string line = record_to_json(rec).dump();
      manifest << line << "\n";
      manifest_bytes << line << "\n";
    }
  }

  json vocab_json = json::array();
  for (const SourceClass& c : vocab) {
    vocab_json.push_back(json{{"id", c.id},
                              {"name", c.name},
                              {"split", c.seen ? "seen" : "unseen"},
                              {"generator_params", params_to_json(c.params)}});
  }
  std::ofstream(dir / "vocab.json") << vocab_json.dump(2) << "\n";

  const std::string manifest_blob = manifest_bytes.str();
  json meta{{"root_seed", seed},
            {"n_seen", static_cast<int>(seen_vocab.size())},
            {"n_unseen", static_cast<int>(unseen_ids.size())},
            {"sizes", {{"train", sizes.train}, {"val", sizes.val}, {"eval", sizes.eval}}},
            {"polyphony_dist", polyphony_dist},
            {"sample_rate", kSampleRate},
            {"clip_samples", kSceneSamples},
            {"fingerprint", hex64(fnv1a(manifest_blob.data(), manifest_blob.size()))}};
  std::ofstream(dir / "dataset_meta.json") << meta.dump(2) << "\n";
}

const std::vector<ClipRecord>& Dataset::split(const std::string& split) const {
  auto it = splits_.find(split);
  if (it == splits_.end()) throw PipelineError("dataset has no split '" + split + "'");
  return it->second;
}

std::vector<double> Dataset::load_waveform(const ClipRecord& rec) const {
  const std::filesystem::path path = dir_ / rec.path;
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw PipelineError("cannot read " + path.string());
  const std::streamsize bytes = in.tellg();
  if (bytes != static_cast<std::streamsize>(kSceneSamples * sizeof(float))) {
    throw PipelineError("waveform " + path.string() + " has unexpected size " +
                        std::to_string(bytes));
  }
  in.seekg(0);
  std::vector<float> f32(kSceneSamples);
  in.read(reinterpret_cast<char*>(f32.data()), bytes);
  if (!in) throw PipelineError("short read from " + path.string());
  std::vector<double> wav(kSceneSamples);
  for (int i = 0; i < kSceneSamples; ++i) wav[static_cast<size_t>(i)] = f32[static_cast<size_t>(i)];
  return wav;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.dir_ = dir;

  std::ifstream vocab_in(dir / "vocab.json");
  if (!vocab_in) throw PipelineError("no vocab.json under " + dir.string());
  json vocab_json = json::parse(vocab_in);
  for (const json& j : vocab_json) {
    SourceClass c;
    c.id = j.at("id").get<int>();
    c.name = j.at("name").get<std::string>();
    c.seen = j.at("split").get<std::string>() == "seen";
    c.params = params_from_json(j.at("generator_params"));
    ds.vocab_.push_back(std::move(c));
    if (ds.vocab_.back().seen) ++ds.n_seen_;
    else ++ds.n_unseen_;
  }

  std::ifstream meta_in(dir / "dataset_meta.json");
  if (!meta_in) throw PipelineError("no dataset_meta.json under " + dir.string());
  json meta = json::parse(meta_in);
  ds.root_seed_ = meta.at("root_seed").get<uint64_t>();
  ds.fingerprint_ = meta.at("fingerprint").get<std::string>();

  for (const char* split : kSplitNames) {
    std::ifstream in(dir / (std::string("manifest_") + split + ".jsonl"));
    if (!in) continue;
    std::vector<ClipRecord> records;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json j = json::parse(line);
      ClipRecord rec;
      rec.id = j.at("id").get<int>();
      rec.labels = j.at("labels").get<std::vector<int>>();
      rec.polyphony = j.at("polyphony").get<int>();
      rec.seed = j.at("seed").get<uint64_t>();
      rec.path = j.at("path").get<std::string>();
      if (j.contains("probe")) rec.probe = j.at("probe").get<std::string>();
      records.push_back(std::move(rec));
    }
    ds.splits_[split] = std::move(records);
  }
  return ds;
}

}  // namespace carl
