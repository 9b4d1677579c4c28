#include "carl/pipelines.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "carl/posenc.hpp"
#include "carl/report.hpp"

namespace carl {

namespace {

namespace fs = std::filesystem;
using ad::Tape;
using ad::Var;

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PipelineError("cannot write " + path.string());
  out << content;
}

MelParams mel_params_for(int bins) {
  MelParams p;
  p.mel_bins = bins;
  return p;
}

EncoderModel load_or_init_encoder(const Config& cfg) {
  const std::string ckpt = cfg.encoder_ckpt();
  if (!ckpt.empty()) {
    EncoderModel enc = EncoderModel::load(ckpt);
    enc.set_frozen(true);
    return enc;
  }
  EncoderModel enc(cfg.encoder.arch);
  enc.set_frozen(true);
  return enc;
}

// Frozen-encoder outputs for one split, cached in RAM as float32; the
// cropped mel spectrogram rides along when a spectrogram target needs it.
class ClipStore {
 public:
  ClipStore(const Dataset& ds, const std::vector<ClipRecord>& recs,
            const EncoderModel& enc, int mel_bins, bool keep_mel,
            const char* label)
      : ds_(ds), recs_(recs), frontend_(mel_params_for(mel_bins)) {
    shape_ = derive_target_shape(enc.config(), mel_bins);
    feats_.reserve(recs.size());
    if (keep_mel) mels_.reserve(recs.size());
    const std::size_t report_every = std::max<std::size_t>(1, recs.size() / 5);
    for (std::size_t i = 0; i < recs.size(); ++i) {
      const MelSpectrogram mel = frontend_.compute(ds.load_waveform(recs[i]), kSampleRate);
      const PatchEmbeddings e = enc.encode(mel);
      feats_.push_back(e.values.cast<float>());
      if (keep_mel) {
        mels_.push_back(mel.values.topLeftCorner(shape_.t, shape_.f).cast<float>());
      }
      if ((i + 1) % report_every == 0 || i + 1 == recs.size()) {
        std::cerr << "[" << label << "] encoded " << (i + 1) << "/" << recs.size()
                  << " clips\n";
      }
    }
  }

  int size() const { return static_cast<int>(recs_.size()); }
  const ClipRecord& record(int i) const { return recs_[static_cast<std::size_t>(i)]; }
  const TargetShape& shape() const { return shape_; }

  Mat features(int i) const { return feats_[static_cast<std::size_t>(i)].cast<double>(); }

  Mat mel_crop(int i) const {
    if (mels_.empty()) throw PipelineError("mel targets were not cached for this run");
    return mels_[static_cast<std::size_t>(i)].cast<double>();
  }

  Vec clip_embed(int i) const {
    return feats_[static_cast<std::size_t>(i)].cast<double>().colwise().mean().transpose();
  }

 private:
  const Dataset& ds_;
  const std::vector<ClipRecord>& recs_;
  MelFrontend frontend_;
  TargetShape shape_;
  std::vector<Eigen::MatrixXf> feats_;
  std::vector<Eigen::MatrixXf> mels_;
};

struct TermValues {
  std::optional<double> ce, recon, sparsity, disjoint;
  double total = 0.0;
};

void check_terms_finite(const TermValues& vals, int step) {
  auto bad = [](const std::optional<double>& v) {
    return v.has_value() && !std::isfinite(*v);
  };
  const char* which = nullptr;
  if (bad(vals.ce)) which = "cross-entropy";
  if (bad(vals.recon)) which = "reconstruction";
  if (bad(vals.sparsity)) which = "sparsity";
  if (bad(vals.disjoint)) which = "disjointedness";
  if (which == nullptr && !std::isfinite(vals.total)) which = "combined";
  if (which != nullptr) {
    throw PipelineError(std::string("loss term '") + which + "' became non-finite at step " +
                        std::to_string(step));
  }
}

// Joint supervised loss for one clip; the assignment from PIT matching also
// scopes the disjointedness term to matched slot pairs.
Var supervised_clip_loss(Tape& t, CarlModel& model, const Mat& feats, const Mat* mel_crop,
                         const std::vector<int>& labels, const LossWeights& w,
                         TermValues* vals) {
  Var feats_pe = t.constant(feats + model.slot_pe);
  Var slots = model.slots.apply(t, feats_pe);
  SlotPredictions pred = model.classifier.classify(t, slots);
  PitResult pit = pit_cross_entropy(t, pred, labels);

  LossTerms terms;
  if (w.w_ce > 0) terms.ce = pit.loss;
  if (w.w_recon > 0) {
    Var target = mel_crop != nullptr ? t.constant(*mel_crop) : t.constant(feats);
    DecoderOutput out = model.decoder.decode(t, slots, target);
    terms.recon = reconstruction_loss(t, out.composite, target);
  }
  if (w.w_sparsity > 0) terms.sparsity = sparsity_penalty(t, pred);
  if (w.w_disjoint > 0) {
    terms.disjoint = disjointedness_penalty(t, slots, model.projection(), &pit.assignment);
  }
  Var total = combined_loss(t, terms, w);

  if (vals != nullptr) {
    vals->ce = t.val(pit.loss)(0, 0);
    if (terms.recon) vals->recon = t.val(*terms.recon)(0, 0);
    if (terms.sparsity) vals->sparsity = t.val(*terms.sparsity)(0, 0);
    if (terms.disjoint) vals->disjoint = t.val(*terms.disjoint)(0, 0);
    vals->total = t.val(total)(0, 0);
  }
  return total;
}

// Stage-1 loss: reconstruction plus all-pairs disjointedness. Labels never
// enter this function; that is the whole point of stage 1.
Var stage1_clip_loss(Tape& t, CarlModel& model, const Mat& feats, const Mat* mel_crop,
                     const LossWeights& w, TermValues* vals) {
  Var feats_pe = t.constant(feats + model.slot_pe);
  Var slots = model.slots.apply(t, feats_pe);

  LossTerms terms;
  if (w.w_recon > 0) {
    Var target = mel_crop != nullptr ? t.constant(*mel_crop) : t.constant(feats);
    DecoderOutput out = model.decoder.decode(t, slots, target);
    terms.recon = reconstruction_loss(t, out.composite, target);
  }
  if (w.w_disjoint > 0) {
    terms.disjoint = disjointedness_penalty(t, slots, model.projection(), nullptr);
  }
  Var total = combined_loss(t, terms, w);

  if (vals != nullptr) {
    if (terms.recon) vals->recon = t.val(*terms.recon)(0, 0);
    if (terms.disjoint) vals->disjoint = t.val(*terms.disjoint)(0, 0);
    vals->total = t.val(total)(0, 0);
  }
  return total;
}

// PIT cross-entropy of a fixed (precomputed) slot matrix through a head;
// used by the probe, baseline, and generalization pipelines.
Var head_clip_loss(Tape& t, ClassifierHead& head, const Mat& slot_rows,
                   const std::vector<int>& labels, TermValues* vals) {
  Var slots = t.constant(slot_rows);
  SlotPredictions pred = head.classify(t, slots);
  PitResult pit = pit_cross_entropy(t, pred, labels);
  if (vals != nullptr) {
    vals->ce = t.val(pit.loss)(0, 0);
    vals->total = vals->ce.value();
  }
  return pit.loss;
}

struct LossCsv {
  std::ofstream out;
  explicit LossCsv(const fs::path& path) : out(path, std::ios::binary) {
    if (!out) throw PipelineError("cannot write " + path.string());
    out << "step,ce,recon,sparsity,disjoint,total\n";
  }
  void row(int step, const TermValues& vals) {
    out << step << ',' << vals.ce.value_or(0.0) << ',' << vals.recon.value_or(0.0) << ','
        << vals.sparsity.value_or(0.0) << ',' << vals.disjoint.value_or(0.0) << ','
        << vals.total << '\n';
  }
};

void accumulate(TermValues* mean, const TermValues& one, int batch) {
  auto add = [batch](std::optional<double>* into, const std::optional<double>& v) {
    if (!v.has_value()) return;
    *into = into->value_or(0.0) + *v / batch;
  };
  add(&mean->ce, one.ce);
  add(&mean->recon, one.recon);
  add(&mean->sparsity, one.sparsity);
  add(&mean->disjoint, one.disjoint);
  mean->total += one.total / batch;
}

nn::AdamConfig adam_config(const OptimizerSection& opt, int total_steps) {
  nn::AdamConfig a;
  a.lr = opt.lr;
  a.clip_norm = opt.clip_norm;
  a.total_steps = opt.cosine ? total_steps : 0;
  return a;
}

// ---------------------------------------------------------------------------
// Shared evaluation. The forward callback fills, for one clip, the k x l
// softmax, the k x d slot rows used for silhouette points, and the k x l
// log-softmax used to match slots to true labels.
using EvalForward =
    std::function<void(const ClipRecord&, Mat* softmax, Mat* slot_rows, Mat* logp)>;

EvalReport evaluate_records(const std::vector<const ClipRecord*>& recs, int n_classes,
                            const std::string& dataset_fingerprint, int silhouette_cap,
                            uint64_t seed, const std::string& config_hash,
                            const EvalForward& forward) {
  if (recs.empty()) throw PipelineError("evaluation split is empty");
  const Eigen::Index n = static_cast<Eigen::Index>(recs.size());
  Mat scores(n, n_classes);
  std::vector<std::vector<int>> labels(recs.size());
  std::vector<int> polyphony(recs.size());
  std::vector<Vec> sil_points;
  std::vector<int> sil_classes;

  for (Eigen::Index i = 0; i < n; ++i) {
    const ClipRecord& rec = *recs[static_cast<std::size_t>(i)];
    Mat softmax, slot_rows, logp;
    forward(rec, &softmax, &slot_rows, &logp);
    scores.row(i) = aggregate_max_per_slot(softmax).transpose();
    labels[static_cast<std::size_t>(i)] = rec.labels;
    polyphony[static_cast<std::size_t>(i)] = rec.polyphony;

    std::vector<int> matchable;
    for (int c : rec.labels) {
      if (c < n_classes) matchable.push_back(c);
    }
    if (!matchable.empty() &&
        static_cast<Eigen::Index>(matchable.size()) <= slot_rows.rows()) {
      Mat cost(static_cast<Eigen::Index>(matchable.size()), logp.rows());
      for (Eigen::Index r = 0; r < cost.rows(); ++r) {
        for (Eigen::Index s = 0; s < cost.cols(); ++s) {
          cost(r, s) = -logp(s, matchable[static_cast<std::size_t>(r)]);
        }
      }
      MatchAssignment match = hungarian_match(cost);
      for (const auto& [label_idx, slot_idx] : match.pairs) {
        sil_points.push_back(slot_rows.row(slot_idx).transpose());
        sil_classes.push_back(matchable[static_cast<std::size_t>(label_idx)]);
      }
    }
  }

  EvalReport report;
  MapReport map = mean_average_precision(scores, labels, polyphony);
  report.map_overall = map.overall;
  report.map_by_polyphony = map.by_polyphony;
  report.per_class_ap = map.per_class;
  if (!sil_points.empty()) {
    Mat points(static_cast<Eigen::Index>(sil_points.size()), sil_points.front().size());
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
      points.row(i) = sil_points[static_cast<std::size_t>(i)].transpose();
    }
    report.silhouette = supervised_silhouette(points, sil_classes, silhouette_cap, seed);
  }
  report.config_hash = config_hash;
  report.dataset_hash = dataset_fingerprint;
  return report;
}

std::vector<const ClipRecord*> select_records(
    const std::vector<ClipRecord>& recs,
    const std::function<bool(const ClipRecord&)>& filter) {
  std::vector<const ClipRecord*> out;
  for (const ClipRecord& r : recs) {
    if (!filter || filter(r)) out.push_back(&r);
  }
  return out;
}

EvalReport evaluate_carl(CarlModel& model, const Dataset& ds, const std::string& split,
                         int silhouette_cap, uint64_t seed, const std::string& config_hash,
                         const std::function<bool(const ClipRecord&)>& filter = nullptr) {
  MelFrontend frontend(mel_params_for(model.mel_bins));
  auto forward = [&](const ClipRecord& rec, Mat* softmax, Mat* slot_rows, Mat* logp) {
    const MelSpectrogram mel = frontend.compute(ds.load_waveform(rec), kSampleRate);
    const PatchEmbeddings e = model.encoder.encode(mel);
    Tape t;
    Var slots = model.slots.apply(t, t.constant(e.values + model.slot_pe));
    SlotPredictions pred = model.classifier.classify(t, slots);
    *softmax = t.val(pred.softmax);
    *slot_rows = t.val(slots);
    *logp = t.val(pred.log_softmax);
  };
  return evaluate_records(select_records(ds.split(split), filter),
                          model.classifier.n_classes(), ds.fingerprint(), silhouette_cap,
                          seed, config_hash, forward);
}

EvalReport evaluate_baseline(BaselineModel& model, const Dataset& ds, const std::string& split,
                             int silhouette_cap, uint64_t seed,
                             const std::string& config_hash) {
  MelFrontend frontend(mel_params_for(model.mel_bins));
  auto forward = [&](const ClipRecord& rec, Mat* softmax, Mat* slot_rows, Mat* logp) {
    const MelSpectrogram mel = frontend.compute(ds.load_waveform(rec), kSampleRate);
    const PatchEmbeddings e = model.encoder.encode(mel);
    const Vec embed = clip_embedding(e);
    Mat rows(model.k, embed.size());
    for (int s = 0; s < model.k; ++s) rows.row(s) = embed.transpose();
    Tape t;
    SlotPredictions pred = model.head.classify(t, t.constant(rows));
    *softmax = t.val(pred.softmax);
    *slot_rows = rows;
    *logp = t.val(pred.log_softmax);
  };
  return evaluate_records(select_records(ds.split(split), nullptr), model.head.n_classes(),
                          ds.fingerprint(), silhouette_cap, seed, config_hash, forward);
}

// ---------------------------------------------------------------------------
// Run-directory plumbing.

std::string short_hash(const std::string& hash) { return hash.substr(0, 12); }

fs::path prepare_run_dir(const fs::path& out_root, const std::string& id) {
  fs::path dir = out_root / id;
  fs::create_directories(dir);
  return dir;
}

void write_run_artifacts(RunRecord* rec, const Config& cfg, const std::string& kind,
                         const fs::path& dir) {
  write_text_file(dir / "config.json", cfg.resolved.dump(2) + "\n");
  write_text_file(dir / "eval.json", rec->eval.to_json());
  write_text_file(dir / "eval.txt", rec->eval.to_table());
  for (const auto& [name, extra] : rec->extra_evals) {
    write_text_file(dir / ("eval_" + name + ".json"), extra.to_json());
    write_text_file(dir / ("eval_" + name + ".txt"), extra.to_table());
  }
  nlohmann::json j;
  j["id"] = rec->id;
  j["kind"] = kind;
  j["config_hash"] = rec->config_hash;
  j["dataset_fingerprint"] = rec->dataset_fingerprint;
  j["final_checkpoint"] = rec->final_checkpoint;
  j["checkpoints"] = rec->checkpoints;
  j["wall_seconds"] = rec->wall_seconds;
  j["final_losses"] = rec->final_losses;
  nlohmann::json evals;
  evals["eval"] = nlohmann::json::parse(rec->eval.to_json());
  for (const auto& [name, extra] : rec->extra_evals) {
    evals[name] = nlohmann::json::parse(extra.to_json());
  }
  j["evals"] = evals;
  write_text_file(dir / "run.json", j.dump(2) + "\n");
}

Dataset open_dataset(const Config& cfg) {
  const std::string dir = cfg.dataset_dir();
  if (dir.empty()) throw ConfigError("dataset.dir is required for this command");
  return load_dataset(dir);
}

void store_final_losses(RunRecord* rec, const TermValues& first, const TermValues& last) {
  rec->final_losses["total"] = last.total;
  rec->final_losses["initial_total"] = first.total;
  if (last.ce) rec->final_losses["ce"] = *last.ce;
  if (last.recon) rec->final_losses["recon"] = *last.recon;
  if (last.recon && first.recon) rec->final_losses["initial_recon"] = *first.recon;
  if (last.sparsity) rec->final_losses["sparsity"] = *last.sparsity;
  if (last.disjoint) rec->final_losses["disjoint"] = *last.disjoint;
}

}  // namespace

std::string synth_dataset(const Config& cfg, bool force) {
  const std::string dir = cfg.dataset_dir();
  if (dir.empty()) throw ConfigError("dataset.dir is required for synth");
  std::vector<SourceClass> vocab =
      build_vocabulary(cfg.seed, cfg.dataset.n_seen, cfg.dataset.n_unseen);
  DatasetSizes sizes;
  sizes.train = cfg.dataset.train_clips;
  sizes.val = cfg.dataset.val_clips;
  sizes.eval = cfg.dataset.eval_clips;
  make_dataset(dir, vocab, sizes, cfg.dataset.polyphony_dist, cfg.seed, force);
  Dataset ds = load_dataset(dir);
  std::cerr << "[synth] " << dir << ": train=" << ds.split("train").size()
            << " val=" << ds.split("val").size() << " eval=" << ds.split("eval").size()
            << " classes=" << ds.vocab().size() << " fingerprint=" << ds.fingerprint()
            << "\n";
  return ds.fingerprint();
}

PretrainResult pretrain_encoder(const Config& cfg, const fs::path& out_path) {
  Dataset ds = open_dataset(cfg);
  const auto& train = ds.split("train");
  const int n = std::min<int>(cfg.encoder.pretrain_clips, static_cast<int>(train.size()));
  if (n < 1) throw ConfigError("encoder.pretrain_clips must be at least 1");
  MelFrontend frontend(mel_params_for(cfg.mel_bins));
  std::vector<MelSpectrogram> clips;
  clips.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    clips.push_back(frontend.compute(ds.load_waveform(train[static_cast<std::size_t>(i)]),
                                     kSampleRate));
  }
  EncoderModel enc(cfg.encoder.arch);
  enc.set_frozen(false);
  PretrainResult result = pretrain_masked(enc, clips, cfg.encoder.mask_ratio,
                                          cfg.encoder.pretrain_steps,
                                          cfg.encoder.pretrain_batch,
                                          derive_seed(cfg.seed, "pretrain"),
                                          adam_config(cfg.optimizer, cfg.encoder.pretrain_steps));
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  enc.save(out_path);
  std::cerr << "[pretrain] loss " << result.initial_loss << " -> " << result.final_loss
            << " over " << cfg.encoder.pretrain_steps << " steps, saved " << out_path
            << "\n";
  return result;
}

RunRecord train_supervised(const Config& cfg, const fs::path& out_root) {
  const double t0 = now_seconds();
  Dataset ds = open_dataset(cfg);
  CarlModel model(cfg, ds.n_seen(), load_or_init_encoder(cfg));
  const uint64_t enc_fp = model.encoder.weight_fingerprint();

  const LossWeights w = apply_ablation(cfg.loss.weights, cfg.loss.ablate);
  const bool spect_target =
      model.decoder.config().target == ReconTargetKind::kSpectrogram && w.w_recon > 0;
  ClipStore store(ds, ds.split("train"), model.encoder, cfg.mel_bins, spect_target,
                  "supervised");

  RunRecord rec;
  rec.id = "supervised-" + short_hash(cfg.hash);
  rec.config_hash = cfg.hash;
  rec.dataset_fingerprint = ds.fingerprint();
  const fs::path dir = prepare_run_dir(out_root, rec.id);
  rec.dir = dir.string();

  nn::Adam adam(model.trainable({true, true, true, true}),
                adam_config(cfg.optimizer, cfg.optimizer.steps));
  Rng order(derive_seed(cfg.seed, "order"));
  LossCsv csv(dir / "losses.csv");
  TermValues first, last;
  const int progress = std::max(1, cfg.optimizer.steps / 10);
  for (int step = 1; step <= cfg.optimizer.steps; ++step) {
    TermValues mean;
    for (int b = 0; b < cfg.optimizer.batch; ++b) {
      const int idx = static_cast<int>(order.below(static_cast<uint64_t>(store.size())));
      Tape t;
      Mat mel_crop;
      const Mat* mel_ptr = nullptr;
      if (spect_target) {
        mel_crop = store.mel_crop(idx);
        mel_ptr = &mel_crop;
      }
      const Mat feats = store.features(idx);
      TermValues vals;
      Var total = supervised_clip_loss(t, model, feats, mel_ptr, store.record(idx).labels,
                                       w, &vals);
      check_terms_finite(vals, step);
      accumulate(&mean, vals, cfg.optimizer.batch);
      t.backward(t.scale(total, 1.0 / cfg.optimizer.batch));
    }
    adam.step();
    if (step == 1) first = mean;
    last = mean;
    if (step % cfg.train.log_every == 0 || step == 1 || step == cfg.optimizer.steps) {
      csv.row(step, mean);
    }
    if (step % progress == 0 || step == cfg.optimizer.steps) {
      std::cerr << "[supervised] step " << step << "/" << cfg.optimizer.steps
                << " total=" << mean.total << "\n";
    }
    if (cfg.train.checkpoint_every > 0 && step % cfg.train.checkpoint_every == 0 &&
        step != cfg.optimizer.steps) {
      char name[32];
      std::snprintf(name, sizeof(name), "step_%06d.ckpt", step);
      nlohmann::json extra = {{"config_hash", cfg.hash}, {"step", step}};
      model.save(dir / name, extra);
      rec.checkpoints.push_back((dir / name).string());
    }
  }
  if (model.encoder.weight_fingerprint() != enc_fp) {
    throw PipelineError("frozen encoder was modified during supervised training");
  }

  nlohmann::json extra = {{"config_hash", cfg.hash}, {"step", cfg.optimizer.steps}};
  model.save(dir / "final.ckpt", extra);
  rec.final_checkpoint = (dir / "final.ckpt").string();
  rec.checkpoints.push_back(rec.final_checkpoint);
  rec.eval = evaluate_carl(model, ds, "eval", cfg.train.silhouette_cap,
                           derive_seed(cfg.seed, "eval"), cfg.hash);
  store_final_losses(&rec, first, last);
  rec.wall_seconds = now_seconds() - t0;
  write_run_artifacts(&rec, cfg, "supervised", dir);
  return rec;
}

RunRecord train_unsupervised_stage1(const Config& cfg, const fs::path& out_root) {
  const double t0 = now_seconds();
  Dataset ds = open_dataset(cfg);
  CarlModel model(cfg, ds.n_seen(), load_or_init_encoder(cfg));
  const uint64_t enc_fp = model.encoder.weight_fingerprint();
  const uint64_t cls_fp = parameter_fingerprint(model.trainable({false, false, true, false}));

  LossWeights stage1;
  stage1.w_ce = 0.0;
  stage1.w_recon = cfg.loss.stage1_recon;
  stage1.w_sparsity = 0.0;
  stage1.w_disjoint = cfg.loss.stage1_disjoint;
  const LossWeights w = apply_ablation(stage1, cfg.loss.ablate);
  const bool spect_target =
      model.decoder.config().target == ReconTargetKind::kSpectrogram && w.w_recon > 0;
  ClipStore store(ds, ds.split("train"), model.encoder, cfg.mel_bins, spect_target,
                  "stage1");

  RunRecord rec;
  rec.id = "stage1-" + short_hash(cfg.hash);
  rec.config_hash = cfg.hash;
  rec.dataset_fingerprint = ds.fingerprint();
  const fs::path dir = prepare_run_dir(out_root, rec.id);
  rec.dir = dir.string();

  nn::Adam adam(model.trainable({true, true, false, true}),
                adam_config(cfg.optimizer, cfg.optimizer.steps));
  Rng order(derive_seed(cfg.seed, "order"));
  LossCsv csv(dir / "losses.csv");
  TermValues first, last;
  const int progress = std::max(1, cfg.optimizer.steps / 10);
  for (int step = 1; step <= cfg.optimizer.steps; ++step) {
    TermValues mean;
    for (int b = 0; b < cfg.optimizer.batch; ++b) {
      const int idx = static_cast<int>(order.below(static_cast<uint64_t>(store.size())));
      Tape t;
      Mat mel_crop;
      const Mat* mel_ptr = nullptr;
      if (spect_target) {
        mel_crop = store.mel_crop(idx);
        mel_ptr = &mel_crop;
      }
      const Mat feats = store.features(idx);
      TermValues vals;
      Var total = stage1_clip_loss(t, model, feats, mel_ptr, w, &vals);
      check_terms_finite(vals, step);
      accumulate(&mean, vals, cfg.optimizer.batch);
      t.backward(t.scale(total, 1.0 / cfg.optimizer.batch));
    }
    adam.step();
    if (step == 1) first = mean;
    last = mean;
    if (step % cfg.train.log_every == 0 || step == 1 || step == cfg.optimizer.steps) {
      csv.row(step, mean);
    }
    if (step % progress == 0 || step == cfg.optimizer.steps) {
      std::cerr << "[stage1] step " << step << "/" << cfg.optimizer.steps
                << " total=" << mean.total << "\n";
    }
    if (cfg.train.checkpoint_every > 0 && step % cfg.train.checkpoint_every == 0 &&
        step != cfg.optimizer.steps) {
      char name[32];
      std::snprintf(name, sizeof(name), "step_%06d.ckpt", step);
      nlohmann::json extra = {{"config_hash", cfg.hash}, {"step", step}};
      model.save(dir / name, extra);
      rec.checkpoints.push_back((dir / name).string());
    }
  }
  if (model.encoder.weight_fingerprint() != enc_fp) {
    throw PipelineError("frozen encoder was modified during stage-1 training");
  }
  if (parameter_fingerprint(model.trainable({false, false, true, false})) != cls_fp) {
    throw PipelineError("classifier was modified during stage-1 training");
  }

  nlohmann::json extra = {{"config_hash", cfg.hash}, {"step", cfg.optimizer.steps}};
  model.save(dir / "final.ckpt", extra);
  rec.final_checkpoint = (dir / "final.ckpt").string();
  rec.checkpoints.push_back(rec.final_checkpoint);
  rec.eval = evaluate_carl(model, ds, "eval", cfg.train.silhouette_cap,
                           derive_seed(cfg.seed, "eval"), cfg.hash);
  store_final_losses(&rec, first, last);
  rec.wall_seconds = now_seconds() - t0;
  write_run_artifacts(&rec, cfg, "stage1", dir);
  return rec;
}

namespace {

// Precomputed slot rows for a record list, for the head-only pipelines.
std::vector<Mat> cache_slot_rows(CarlModel& model, const Dataset& ds,
                                 const std::vector<const ClipRecord*>& recs,
                                 const char* label) {
  MelFrontend frontend(mel_params_for(model.mel_bins));
  std::vector<Mat> out;
  out.reserve(recs.size());
  const std::size_t report_every = std::max<std::size_t>(1, recs.size() / 5);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const MelSpectrogram mel = frontend.compute(ds.load_waveform(*recs[i]), kSampleRate);
    const PatchEmbeddings e = model.encoder.encode(mel);
    Tape t;
    Var slots = model.slots.apply(t, t.constant(e.values + model.slot_pe));
    out.push_back(t.val(slots));
    if ((i + 1) % report_every == 0 || i + 1 == recs.size()) {
      std::cerr << "[" << label << "] cached slots for " << (i + 1) << "/" << recs.size()
                << " clips\n";
    }
  }
  return out;
}

// Shared head-training loop over cached slot rows.
void train_head(ClassifierHead& head, const std::vector<Mat>& slot_rows,
                const std::vector<const ClipRecord*>& recs, const OptimizerSection& opt,
                int steps, uint64_t order_seed, LossCsv* csv, TermValues* first,
                TermValues* last, const char* label) {
  nn::Adam adam(head.parameters(), adam_config(opt, steps));
  Rng order(order_seed);
  const int progress = std::max(1, steps / 10);
  for (int step = 1; step <= steps; ++step) {
    TermValues mean;
    for (int b = 0; b < opt.batch; ++b) {
      const std::size_t idx = order.below(slot_rows.size());
      Tape t;
      TermValues vals;
      Var total = head_clip_loss(t, head, slot_rows[idx], recs[idx]->labels, &vals);
      check_terms_finite(vals, step);
      accumulate(&mean, vals, opt.batch);
      t.backward(t.scale(total, 1.0 / opt.batch));
    }
    adam.step();
    if (step == 1) *first = mean;
    *last = mean;
    if (csv != nullptr) csv->row(step, mean);
    if (step % progress == 0 || step == steps) {
      std::cerr << "[" << label << "] step " << step << "/" << steps
                << " ce=" << mean.total << "\n";
    }
  }
}

}  // namespace

RunRecord train_probe_stage2(const fs::path& stage1_ckpt, const Config& cfg,
                             const fs::path& out_root) {
  const double t0 = now_seconds();
  Dataset ds = open_dataset(cfg);
  CarlModel model = CarlModel::load(stage1_ckpt);
  const uint64_t enc_fp = model.encoder.weight_fingerprint();
  const uint64_t frozen_fp = parameter_fingerprint(model.trainable({true, true, false, true}));

  const auto& train = ds.split("train");
  std::vector<const ClipRecord*> recs;
  const int cap = cfg.train.stage2_clips > 0
                      ? std::min<int>(cfg.train.stage2_clips, static_cast<int>(train.size()))
                      : static_cast<int>(train.size());
  for (int i = 0; i < cap; ++i) recs.push_back(&train[static_cast<std::size_t>(i)]);

  const std::string material = cfg.hash + "|" + fs::weakly_canonical(stage1_ckpt).string();
  RunRecord rec;
  rec.id = "probe-" + hex64(fnv1a(material.data(), material.size())).substr(0, 12);
  rec.config_hash = cfg.hash;
  rec.dataset_fingerprint = ds.fingerprint();
  const fs::path dir = prepare_run_dir(out_root, rec.id);
  rec.dir = dir.string();

  std::vector<Mat> slot_rows = cache_slot_rows(model, ds, recs, "probe");
  LossCsv csv(dir / "losses.csv");
  TermValues first, last;
  train_head(model.classifier, slot_rows, recs, cfg.optimizer, cfg.train.stage2_steps,
             derive_seed(cfg.seed, "probe-order"), &csv, &first, &last, "probe");

  if (model.encoder.weight_fingerprint() != enc_fp) {
    throw PipelineError("frozen encoder was modified during the probe");
  }
  if (parameter_fingerprint(model.trainable({true, true, false, true})) != frozen_fp) {
    throw PipelineError("frozen slot transformer or decoder was modified during the probe");
  }

  nlohmann::json extra = {{"config_hash", cfg.hash},
                          {"stage1_checkpoint", stage1_ckpt.string()}};
  model.save(dir / "final.ckpt", extra);
  rec.final_checkpoint = (dir / "final.ckpt").string();
  rec.checkpoints.push_back(rec.final_checkpoint);
  rec.eval = evaluate_carl(model, ds, "eval", cfg.train.silhouette_cap,
                           derive_seed(cfg.seed, "eval"), cfg.hash);
  store_final_losses(&rec, first, last);
  rec.wall_seconds = now_seconds() - t0;
  write_run_artifacts(&rec, cfg, "probe", dir);
  return rec;
}

RunRecord baseline_mixture_copy(const Config& cfg, const fs::path& out_root) {
  const double t0 = now_seconds();
  Dataset ds = open_dataset(cfg);
  BaselineModel model(cfg, ds.n_seen(), load_or_init_encoder(cfg));
  const uint64_t enc_fp = model.encoder.weight_fingerprint();

  ClipStore store(ds, ds.split("train"), model.encoder, cfg.mel_bins, false, "baseline");
  const auto& train = ds.split("train");
  std::vector<const ClipRecord*> recs;
  std::vector<Mat> slot_rows;
  recs.reserve(train.size());
  slot_rows.reserve(train.size());
  for (int i = 0; i < store.size(); ++i) {
    recs.push_back(&train[static_cast<std::size_t>(i)]);
    const Vec embed = store.clip_embed(i);
    Mat rows(model.k, embed.size());
    for (int s = 0; s < model.k; ++s) rows.row(s) = embed.transpose();
    slot_rows.push_back(std::move(rows));
  }

  RunRecord rec;
  rec.id = "baseline-" + short_hash(cfg.hash);
  rec.config_hash = cfg.hash;
  rec.dataset_fingerprint = ds.fingerprint();
  const fs::path dir = prepare_run_dir(out_root, rec.id);
  rec.dir = dir.string();

  LossCsv csv(dir / "losses.csv");
  TermValues first, last;
  train_head(model.head, slot_rows, recs, cfg.optimizer, cfg.optimizer.steps,
             derive_seed(cfg.seed, "order"), &csv, &first, &last, "baseline");

  if (model.encoder.weight_fingerprint() != enc_fp) {
    throw PipelineError("frozen encoder was modified during baseline training");
  }

  nlohmann::json extra = {{"config_hash", cfg.hash}};
  model.save(dir / "final.ckpt", extra);
  rec.final_checkpoint = (dir / "final.ckpt").string();
  rec.checkpoints.push_back(rec.final_checkpoint);
  rec.eval = evaluate_baseline(model, ds, "eval", cfg.train.silhouette_cap,
                               derive_seed(cfg.seed, "eval"), cfg.hash);
  store_final_losses(&rec, first, last);
  rec.wall_seconds = now_seconds() - t0;
  write_run_artifacts(&rec, cfg, "baseline", dir);
  return rec;
}

RunRecord generalization_probe(const fs::path& supervised_ckpt, const Config& cfg,
                               const fs::path& out_root) {
  const double t0 = now_seconds();
  Dataset ds = open_dataset(cfg);
  if (ds.n_unseen() == 0) {
    throw PipelineError("generalization probe needs a dataset with unseen classes");
  }
  CarlModel model = CarlModel::load(supervised_ckpt);
  const int n_total = ds.n_seen() + ds.n_unseen();
  // The trained head is discarded; a fresh one covers seen + unseen classes.
  model.classifier = ClassifierHead(model.slots.config().d_s, n_total,
                                    derive_seed(cfg.seed, "generalization-head"));
  const uint64_t enc_fp = model.encoder.weight_fingerprint();
  const uint64_t frozen_fp = parameter_fingerprint(model.trainable({true, true, false, true}));

  std::vector<const ClipRecord*> probe_train = select_records(
      ds.split("eval"), [](const ClipRecord& r) { return r.probe == "train"; });
  if (probe_train.empty()) {
    throw PipelineError("eval split has no probe-train half");
  }
  std::set<int> present;
  for (const ClipRecord* r : probe_train) {
    for (int c : r->labels) present.insert(c);
  }
  for (int c = ds.n_seen(); c < n_total; ++c) {
    if (present.count(c) == 0) {
      throw PipelineError("unseen class " + std::to_string(c) +
                          " is absent from the probe-train half");
    }
  }

  const std::string material = cfg.hash + "|" + fs::weakly_canonical(supervised_ckpt).string();
  RunRecord rec;
  rec.id = "genprobe-" + hex64(fnv1a(material.data(), material.size())).substr(0, 12);
  rec.config_hash = cfg.hash;
  rec.dataset_fingerprint = ds.fingerprint();
  const fs::path dir = prepare_run_dir(out_root, rec.id);
  rec.dir = dir.string();

  std::vector<Mat> slot_rows = cache_slot_rows(model, ds, probe_train, "genprobe");
  LossCsv csv(dir / "losses.csv");
  TermValues first, last;
  train_head(model.classifier, slot_rows, probe_train, cfg.optimizer, cfg.train.stage2_steps,
             derive_seed(cfg.seed, "generalization-order"), &csv, &first, &last, "genprobe");

  if (model.encoder.weight_fingerprint() != enc_fp) {
    throw PipelineError("frozen encoder was modified during the generalization probe");
  }
  if (parameter_fingerprint(model.trainable({true, true, false, true})) != frozen_fp) {
    throw PipelineError(
        "frozen slot transformer or decoder was modified during the generalization probe");
  }

  nlohmann::json extra = {{"config_hash", cfg.hash},
                          {"supervised_checkpoint", supervised_ckpt.string()}};
  model.save(dir / "final.ckpt", extra);
  rec.final_checkpoint = (dir / "final.ckpt").string();
  rec.checkpoints.push_back(rec.final_checkpoint);

  const int n_seen = ds.n_seen();
  auto is_test = [](const ClipRecord& r) { return r.probe == "test"; };
  auto seen_only = [n_seen](const ClipRecord& r) {
    if (r.probe != "test") return false;
    for (int c : r.labels) {
      if (c >= n_seen) return false;
    }
    return true;
  };
  auto with_unseen = [n_seen](const ClipRecord& r) {
    if (r.probe != "test") return false;
    for (int c : r.labels) {
      if (c >= n_seen) return true;
    }
    return false;
  };
  const uint64_t eval_seed = derive_seed(cfg.seed, "eval");
  rec.eval = evaluate_carl(model, ds, "eval", cfg.train.silhouette_cap, eval_seed, cfg.hash,
                           is_test);
  const auto& eval_recs = ds.split("eval");
  if (std::any_of(eval_recs.begin(), eval_recs.end(), seen_only)) {
    rec.extra_evals["seen_only"] = evaluate_carl(model, ds, "eval", cfg.train.silhouette_cap,
                                                 eval_seed, cfg.hash, seen_only);
  }
  if (std::any_of(eval_recs.begin(), eval_recs.end(), with_unseen)) {
    rec.extra_evals["with_unseen"] = evaluate_carl(model, ds, "eval",
                                                   cfg.train.silhouette_cap, eval_seed,
                                                   cfg.hash, with_unseen);
  }
  store_final_losses(&rec, first, last);
  rec.wall_seconds = now_seconds() - t0;
  write_run_artifacts(&rec, cfg, "generalization", dir);
  return rec;
}

EvalReport evaluate_checkpoint(const fs::path& ckpt, const fs::path& dataset_dir,
                               int silhouette_cap, uint64_t seed,
                               const std::string& config_hash) {
  LoadedModel loaded = load_model(ckpt);
  Dataset ds = load_dataset(dataset_dir);
  std::string hash = config_hash;
  if (hash.empty()) hash = loaded.header.value("config_hash", "");
  if (loaded.carl) {
    return evaluate_carl(*loaded.carl, ds, "eval", silhouette_cap, seed, hash);
  }
  return evaluate_baseline(*loaded.baseline, ds, "eval", silhouette_cap, seed, hash);
}

namespace {

using EditFn = std::function<void(nlohmann::json&)>;

Config make_variant(const Config& base, const EditFn& edit) {
  nlohmann::json doc = base.resolved;
  if (edit) edit(doc);
  return config_from_json(doc, base.base_dir);
}

std::string opt_cell(const std::optional<double>& v) {
  return v ? format_double(*v, 4) : "--";
}

std::optional<double> poly_of(const EvalReport& e, int p) {
  auto it = e.map_by_polyphony.find(p);
  if (it == e.map_by_polyphony.end()) return std::nullopt;
  return it->second;
}

// mAP overall, p1..p3, silhouette.
std::vector<std::string> metric_cells(const EvalReport& e) {
  return {opt_cell(e.map_overall), opt_cell(poly_of(e, 1)), opt_cell(poly_of(e, 2)),
          opt_cell(poly_of(e, 3)), opt_cell(e.silhouette)};
}

std::vector<std::string> failed_cells(std::size_t n) {
  return std::vector<std::string>(n, "failed");
}

std::string alpha_cell(const Config& c) {
  if (c.decoder.kind == DecoderKind::kTransformer) return "--";
  return c.decoder.use_alpha ? "yes" : "no";
}

class SuiteRunner {
 public:
  SuiteRunner(const Config& base, const fs::path& out_root, SuiteResult* result)
      : base_(base), out_root_(out_root), result_(result) {}

  const Config& base() const { return base_; }
  const fs::path& out_root() const { return out_root_; }

  // Runs fn once per key; repeats reuse the cached record. Failures are
  // recorded and reported as nullopt so the remaining runs continue.
  const RunRecord* attempt(const std::string& outcome_name, const std::string& key,
                           const std::function<RunRecord()>& fn) {
    auto it = cache_.find(key);
    if (it == cache_.end()) {
      std::cerr << "[suite " << result_->suite_id << "] " << outcome_name << "\n";
      SuiteRunOutcome outcome;
      outcome.name = outcome_name;
      try {
        RunRecord rec = fn();
        outcome.ok = true;
        outcome.record = rec;
        it = cache_.emplace(key, std::move(rec)).first;
      } catch (const std::exception& e) {
        outcome.ok = false;
        outcome.error = e.what();
        std::cerr << "[suite " << result_->suite_id << "] " << outcome_name
                  << " failed: " << e.what() << "\n";
      }
      result_->outcomes.push_back(outcome);
      if (!outcome.ok) return nullptr;
      return &it->second;
    }
    SuiteRunOutcome outcome;
    outcome.name = outcome_name;
    outcome.ok = true;
    outcome.record = it->second;
    result_->outcomes.push_back(outcome);
    return &it->second;
  }

  const RunRecord* supervised(const std::string& name, const Config& cfg) {
    return attempt(name, "supervised:" + cfg.hash,
                   [&] { return train_supervised(cfg, out_root_); });
  }

  // Stage 1 followed by the linear probe; returns the probe record.
  const RunRecord* unsupervised(const std::string& name, const Config& cfg) {
    const RunRecord* stage1 = attempt(name + "-stage1", "stage1:" + cfg.hash, [&] {
      return train_unsupervised_stage1(cfg, out_root_);
    });
    if (stage1 == nullptr) return nullptr;
    const std::string ckpt = stage1->final_checkpoint;
    return attempt(name + "-probe", "probe:" + cfg.hash + "|" + ckpt,
                   [&] { return train_probe_stage2(ckpt, cfg, out_root_); });
  }

  const RunRecord* baseline(const std::string& name, const Config& cfg) {
    return attempt(name, "baseline:" + cfg.hash,
                   [&] { return baseline_mixture_copy(cfg, out_root_); });
  }

  // Supervised training followed by the fresh-head probe over seen + unseen.
  const RunRecord* generalization(const std::string& name, const Config& cfg) {
    const RunRecord* sup = attempt(name + "-train", "supervised:" + cfg.hash,
                                   [&] { return train_supervised(cfg, out_root_); });
    if (sup == nullptr) return nullptr;
    const std::string ckpt = sup->final_checkpoint;
    return attempt(name + "-probe", "genprobe:" + cfg.hash + "|" + ckpt,
                   [&] { return generalization_probe(ckpt, cfg, out_root_); });
  }

 private:
  const Config& base_;
  fs::path out_root_;
  SuiteResult* result_;
  std::map<std::string, RunRecord> cache_;
};

EditFn with_mode(const char* mode, const EditFn& edit) {
  std::string m = mode;
  return [m, edit](nlohmann::json& doc) {
    doc["train"]["mode"] = m;
    doc["loss"]["ablate"] = "none";
    if (edit) edit(doc);
  };
}

void set_decoder(nlohmann::json& doc, const char* kind, const char* target, bool alpha) {
  doc["decoder"]["kind"] = kind;
  doc["decoder"]["target"] = target;
  doc["decoder"]["alpha"] = alpha;
}

// Decoder and loss grid over the supervised objective.
void run_exp1(SuiteRunner& runner, std::vector<std::string>* header,
              std::vector<std::vector<std::string>>* rows) {
  *header = {"run", "decoder", "target", "alpha", "ablation",
             "mAP",  "p1",      "p2",     "p3",    "silhouette"};
  struct Row {
    const char* name;
    const char* kind;
    bool alpha;
    const char* ablate;
  };
  const Row grid[] = {
      {"sup-mlp-feat-alpha", "mlp", true, "none"},
      {"sup-mlp-feat-noalpha", "mlp", false, "none"},
      {"sup-transformer-feat", "transformer", false, "none"},
      {"sup-transformer-ab-recon", "transformer", false, "reconstruction"},
      {"sup-transformer-ab-disjoint", "transformer", false, "disjointedness"},
      {"sup-transformer-ab-sparsity", "transformer", false, "sparsity"},
  };
  for (const Row& g : grid) {
    Config cfg = make_variant(runner.base(), with_mode("supervised", [&](nlohmann::json& doc) {
                                set_decoder(doc, g.kind, "features", g.alpha);
                                doc["loss"]["ablate"] = g.ablate;
                              }));
    std::vector<std::string> row = {g.name, g.kind, "features", alpha_cell(cfg), g.ablate};
    const RunRecord* rec = runner.supervised(g.name, cfg);
    auto cells = rec != nullptr ? metric_cells(rec->eval) : failed_cells(5);
    row.insert(row.end(), cells.begin(), cells.end());
    rows->push_back(row);
  }
}

// Unsupervised decoder grid, attention/disjointedness ablations, slot-width sweep.
void run_exp2(SuiteRunner& runner, std::vector<std::string>* header,
              std::vector<std::vector<std::string>>* rows) {
  *header = {"run", "decoder", "target", "alpha", "attention", "ablation", "d_s",
             "mAP", "p1",      "p2",     "p3",    "silhouette"};
  struct Row {
    std::string name;
    const char* kind;
    const char* target;
    bool alpha;
    const char* attention;
    const char* ablate;
    int d_s;  // 0 keeps the base width
  };
  std::vector<Row> grid = {
      {"unsup-mlp-feat-alpha", "mlp", "features", true, "inverted", "none", 0},
      {"unsup-mlp-feat-noalpha", "mlp", "features", false, "inverted", "none", 0},
      {"unsup-transformer-feat", "transformer", "features", false, "inverted", "none", 0},
      {"unsup-cnn-spec-alpha", "cnn", "spectrogram", true, "inverted", "none", 0},
      {"unsup-cnn-spec-noalpha", "cnn", "spectrogram", false, "inverted", "none", 0},
      {"unsup-mlp-std-attn", "mlp", "features", false, "standard", "none", 0},
      {"unsup-mlp-ab-disjoint", "mlp", "features", false, "inverted", "disjointedness", 0},
  };
  for (int d : runner.base().suite.slot_dims) {
    grid.push_back({"unsup-mlp-ds" + std::to_string(d), "mlp", "features", false, "inverted",
                    "none", d});
  }
  for (const Row& g : grid) {
    Config cfg = make_variant(runner.base(), with_mode("unsupervised", [&](nlohmann::json& doc) {
                                set_decoder(doc, g.kind, g.target, g.alpha);
                                doc["slots"]["attention"] = g.attention;
                                doc["loss"]["ablate"] = g.ablate;
                                if (g.d_s > 0) doc["slots"]["d_s"] = g.d_s;
                              }));
    std::vector<std::string> row = {g.name,      g.kind,   g.target,
                                    alpha_cell(cfg), g.attention, g.ablate,
                                    std::to_string(cfg.slots.d_s)};
    const RunRecord* rec = runner.unsupervised(g.name, cfg);
    auto cells = rec != nullptr ? metric_cells(rec->eval) : failed_cells(5);
    row.insert(row.end(), cells.begin(), cells.end());
    rows->push_back(row);
  }
}

// Baseline comparisons for the unsupervised representation.
void run_exp3(SuiteRunner& runner, std::vector<std::string>* header,
              std::vector<std::vector<std::string>>* rows) {
  *header = {"run", "kind", "mAP", "p1", "p2", "p3", "silhouette"};
  {
    Config cfg = make_variant(runner.base(), with_mode("unsupervised", nullptr));
    std::vector<std::string> row = {"baseline-mixture-copy", "mixture copy"};
    const RunRecord* rec = runner.baseline("baseline-mixture-copy", cfg);
    auto cells = rec != nullptr ? metric_cells(rec->eval) : failed_cells(5);
    row.insert(row.end(), cells.begin(), cells.end());
    rows->push_back(row);
  }
  {
    Config cfg = make_variant(runner.base(), with_mode("unsupervised", [](nlohmann::json& doc) {
                                set_decoder(doc, "mlp", "features", false);
                              }));
    std::vector<std::string> row = {"unsup-mlp-feat-noalpha", "slot model"};
    const RunRecord* rec = runner.unsupervised("unsup-mlp-feat-noalpha", cfg);
    auto cells = rec != nullptr ? metric_cells(rec->eval) : failed_cells(5);
    row.insert(row.end(), cells.begin(), cells.end());
    rows->push_back(row);
  }
  rows->push_back({"source-separation", "external", "out of scope", "--", "--", "--", "--"});
}

// Generalization to unseen classes via the fresh-head probe.
void run_exp4(SuiteRunner& runner, std::vector<std::string>* header,
              std::vector<std::vector<std::string>>* rows) {
  *header = {"run", "decoder", "alpha", "ablation", "mAP", "seen-only", "with-unseen"};
  struct Row {
    const char* name;
    const char* kind;
    bool alpha;
    const char* ablate;
  };
  const Row grid[] = {
      {"gen-transformer", "transformer", false, "none"},
      {"gen-transformer-ab-recon", "transformer", false, "reconstruction"},
      {"gen-transformer-ab-disjoint", "transformer", false, "disjointedness"},
      {"gen-transformer-ab-sparsity", "transformer", false, "sparsity"},
      {"gen-mlp-feat-alpha", "mlp", true, "none"},
      {"gen-mlp-feat-noalpha", "mlp", false, "none"},
  };
  for (const Row& g : grid) {
    Config cfg = make_variant(runner.base(), with_mode("supervised", [&](nlohmann::json& doc) {
                                set_decoder(doc, g.kind, "features", g.alpha);
                                doc["loss"]["ablate"] = g.ablate;
                              }));
    std::vector<std::string> row = {g.name, g.kind, alpha_cell(cfg), g.ablate};
    const RunRecord* rec = runner.generalization(g.name, cfg);
    if (rec != nullptr) {
      row.push_back(opt_cell(rec->eval.map_overall));
      auto sub = [&](const char* key) -> std::string {
        auto it = rec->extra_evals.find(key);
        return it != rec->extra_evals.end() ? opt_cell(it->second.map_overall) : "--";
      };
      row.push_back(sub("seen_only"));
      row.push_back(sub("with_unseen"));
    } else {
      auto cells = failed_cells(3);
      row.insert(row.end(), cells.begin(), cells.end());
    }
    rows->push_back(row);
  }
}

}  // namespace

SuiteResult run_experiment_suite(const std::string& suite_id, const Config& base,
                                 const fs::path& out_root) {
  SuiteResult result;
  result.suite_id = suite_id;
  const fs::path dir = out_root / suite_id;
  fs::create_directories(dir);

  SuiteRunner runner(base, out_root, &result);
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  if (suite_id == "exp1") {
    run_exp1(runner, &header, &rows);
  } else if (suite_id == "exp2") {
    run_exp2(runner, &header, &rows);
  } else if (suite_id == "exp3") {
    run_exp3(runner, &header, &rows);
  } else if (suite_id == "exp4") {
    run_exp4(runner, &header, &rows);
  } else {
    throw ConfigError("unknown suite '" + suite_id + "', expected exp1/exp2/exp3/exp4");
  }

  result.table_text = render_text_table(header, rows);
  result.table_csv = render_csv(header, rows);
  write_text_file(dir / "table.txt", result.table_text);
  write_text_file(dir / "table.csv", result.table_csv);

  nlohmann::json summary;
  summary["suite"] = suite_id;
  summary["config_hash"] = base.hash;
  summary["outcomes"] = nlohmann::json::array();
  for (const SuiteRunOutcome& o : result.outcomes) {
    nlohmann::json j;
    j["name"] = o.name;
    j["ok"] = o.ok;
    if (o.ok) {
      j["run_id"] = o.record.id;
      j["dir"] = o.record.dir;
      if (o.record.eval.map_overall) {
        j["map"] = *o.record.eval.map_overall;
      } else {
        j["map"] = nullptr;
      }
    } else {
      j["error"] = o.error;
    }
    summary["outcomes"].push_back(j);
  }
  write_text_file(dir / "suite.json", summary.dump(2) + "\n");
  std::cerr << result.table_text;
  return result;
}

}  // namespace carl
