#include "carl/config.hpp"

#include "carl/synth.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace carl {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Pulls typed values out of one JSON object, remembering which keys were
// consumed so anything left over can be reported by its full path.
class SectionReader {
 public:
  SectionReader(json j, std::string path) : j_(std::move(j)), path_(std::move(path)) {
    if (!j_.is_object()) {
      throw ConfigError("config section '" + path_ + "' must be an object");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  double number(const char* key, double dflt) {
    const json* v = take(key);
    if (v == nullptr) return dflt;
    if (!v->is_number()) throw type_error(key, "a number");
    return v->get<double>();
  }

  int integer(const char* key, int dflt) {
    const json* v = take(key);
    if (v == nullptr) return dflt;
    if (!v->is_number_integer()) throw type_error(key, "an integer");
    return v->get<int>();
  }

  bool flag(const char* key, bool dflt) {
    const json* v = take(key);
    if (v == nullptr) return dflt;
    if (!v->is_boolean()) throw type_error(key, "a boolean");
    return v->get<bool>();
  }

  std::string str(const char* key, const std::string& dflt) {
    const json* v = take(key);
    if (v == nullptr) return dflt;
    if (!v->is_string()) throw type_error(key, "a string");
    return v->get<std::string>();
  }

  std::vector<double> number_list(const char* key, std::vector<double> dflt) {
    const json* v = take(key);
    if (v == nullptr) return dflt;
    if (!v->is_array()) throw type_error(key, "an array of numbers");
    std::vector<double> out;
    for (const auto& e : *v) {
      if (!e.is_number()) throw type_error(key, "an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  std::vector<int> int_list(const char* key, std::vector<int> dflt) {
    const json* v = take(key);
    if (v == nullptr) return dflt;
    if (!v->is_array()) throw type_error(key, "an array of integers");
    std::vector<int> out;
    for (const auto& e : *v) {
      if (!e.is_number_integer()) throw type_error(key, "an array of integers");
      out.push_back(e.get<int>());
    }
    return out;
  }

  // Sub-object for a nested section; an empty object when absent.
  json sub(const char* key) {
    const json* v = take(key);
    if (v == nullptr) return json::object();
    if (!v->is_object()) throw type_error(key, "an object");
    return *v;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (seen_.count(it.key()) == 0) {
        throw ConfigError("unknown config key: " + join(it.key()));
      }
    }
  }

  std::string join(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const json* take(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  ConfigError type_error(const char* key, const char* want) const {
    return ConfigError("config key " + join(key) + " must be " + want);
  }

  const json j_;
  std::string path_;
  std::set<std::string> seen_;
};

nn::AttentionKind parse_attention(const std::string& s) {
  if (s == "inverted") return nn::AttentionKind::kInverted;
  if (s == "standard") return nn::AttentionKind::kStandard;
  throw ConfigError("slots.attention must be 'inverted' or 'standard', got '" + s + "'");
}

DecoderKind parse_decoder_kind(const std::string& s) {
  if (s == "mlp") return DecoderKind::kMlp;
  if (s == "cnn") return DecoderKind::kCnn;
  if (s == "transformer") return DecoderKind::kTransformer;
  throw ConfigError("decoder.kind must be 'mlp', 'cnn', or 'transformer', got '" + s + "'");
}

ReconTargetKind parse_target(const std::string& s) {
  if (s == "features") return ReconTargetKind::kFeatures;
  if (s == "spectrogram") return ReconTargetKind::kSpectrogram;
  throw ConfigError("decoder.target must be 'features' or 'spectrogram', got '" + s + "'");
}

AblateTerm parse_ablate(const std::string& s) {
  if (s == "none") return AblateTerm::kNone;
  if (s == "reconstruction") return AblateTerm::kReconstruction;
  if (s == "disjointedness") return AblateTerm::kDisjointedness;
  if (s == "sparsity") return AblateTerm::kSparsity;
  throw ConfigError(
      "loss.ablate must be one of none/reconstruction/disjointedness/sparsity, got '" + s + "'");
}

void require_positive(int v, const char* key) {
  if (v <= 0) throw ConfigError(std::string("config key ") + key + " must be positive");
}

}  // namespace

std::string Config::dataset_dir() const {
  if (dataset.dir.empty()) return "";
  fs::path p(dataset.dir);
  if (p.is_absolute() || base_dir.empty()) return p.string();
  return (fs::path(base_dir) / p).lexically_normal().string();
}

std::string Config::encoder_ckpt() const {
  if (encoder.checkpoint.empty()) return "";
  fs::path p(encoder.checkpoint);
  if (p.is_absolute() || base_dir.empty()) return p.string();
  return (fs::path(base_dir) / p).lexically_normal().string();
}

Config config_from_json(const nlohmann::json& doc, const std::string& base_dir,
                        std::optional<uint64_t> seed_override) {
  Config cfg;
  cfg.base_dir = base_dir;

  SectionReader root(doc, "");
  {
    int seed = root.integer("seed", 0);
    if (seed < 0) throw ConfigError("config key seed must be non-negative");
    cfg.seed = static_cast<uint64_t>(seed);
  }
  if (seed_override.has_value()) cfg.seed = *seed_override;

  {
    SectionReader r(root.sub("dataset"), "dataset");
    cfg.dataset.dir = r.str("dir", "");
    cfg.dataset.n_seen = r.integer("n_seen", cfg.dataset.n_seen);
    cfg.dataset.n_unseen = r.integer("n_unseen", cfg.dataset.n_unseen);
    cfg.dataset.train_clips = r.integer("train_clips", cfg.dataset.train_clips);
    cfg.dataset.val_clips = r.integer("val_clips", cfg.dataset.val_clips);
    cfg.dataset.eval_clips = r.integer("eval_clips", cfg.dataset.eval_clips);
    cfg.dataset.polyphony_dist = r.number_list("polyphony_dist", cfg.dataset.polyphony_dist);
    r.finish();
    if (cfg.dataset.n_seen < 2) throw ConfigError("dataset.n_seen must be at least 2");
    if (cfg.dataset.n_unseen < 0) throw ConfigError("dataset.n_unseen must be non-negative");
    require_positive(cfg.dataset.train_clips, "dataset.train_clips");
    require_positive(cfg.dataset.val_clips, "dataset.val_clips");
    require_positive(cfg.dataset.eval_clips, "dataset.eval_clips");
    if (cfg.dataset.polyphony_dist.empty() ||
        cfg.dataset.polyphony_dist.size() > static_cast<std::size_t>(kMaxPolyphony)) {
      throw ConfigError("dataset.polyphony_dist must list 1 to 4 probabilities");
    }
  }

  {
    SectionReader r(root.sub("mel"), "mel");
    cfg.mel_bins = r.integer("bins", cfg.mel_bins);
    r.finish();
    require_positive(cfg.mel_bins, "mel.bins");
  }

  {
    SectionReader r(root.sub("encoder"), "encoder");
    cfg.encoder.checkpoint = r.str("checkpoint", "");
    cfg.encoder.arch.d_p = r.integer("d_p", cfg.encoder.arch.d_p);
    cfg.encoder.arch.depth = r.integer("depth", cfg.encoder.arch.depth);
    cfg.encoder.arch.heads = r.integer("heads", cfg.encoder.arch.heads);
    cfg.encoder.arch.patch_t = r.integer("patch_t", cfg.encoder.arch.patch_t);
    cfg.encoder.arch.patch_f = r.integer("patch_f", cfg.encoder.arch.patch_f);
    cfg.encoder.arch.ffn_mult = r.integer("ffn_mult", cfg.encoder.arch.ffn_mult);
    cfg.encoder.mask_ratio = r.number("mask_ratio", cfg.encoder.mask_ratio);
    cfg.encoder.pretrain_steps = r.integer("pretrain_steps", cfg.encoder.pretrain_steps);
    cfg.encoder.pretrain_batch = r.integer("pretrain_batch", cfg.encoder.pretrain_batch);
    cfg.encoder.pretrain_clips = r.integer("pretrain_clips", cfg.encoder.pretrain_clips);
    r.finish();
  }

  {
    SectionReader r(root.sub("slots"), "slots");
    cfg.slots.k = r.integer("k", cfg.slots.k);
    cfg.slots.d_s = r.integer("d_s", cfg.slots.d_s);
    cfg.slots.layers = r.integer("layers", cfg.slots.layers);
    cfg.slots.heads = r.integer("heads", cfg.slots.heads);
    cfg.slots.ffn_mult = r.integer("ffn_mult", cfg.slots.ffn_mult);
    cfg.slots.attention = parse_attention(r.str("attention", "inverted"));
    r.finish();
  }

  {
    SectionReader r(root.sub("decoder"), "decoder");
    cfg.decoder.kind = parse_decoder_kind(r.str("kind", "mlp"));
    cfg.decoder.target = parse_target(r.str("target", "features"));
    cfg.decoder.use_alpha = r.flag("alpha", cfg.decoder.use_alpha);
    cfg.decoder.mlp_hidden = r.integer("mlp_hidden", cfg.decoder.mlp_hidden);
    cfg.decoder.mlp_layers = r.integer("mlp_layers", cfg.decoder.mlp_layers);
    cfg.decoder.cnn_channels = r.integer("cnn_channels", cfg.decoder.cnn_channels);
    cfg.decoder.ar_layers = r.integer("ar_layers", cfg.decoder.ar_layers);
    cfg.decoder.ar_heads = r.integer("ar_heads", cfg.decoder.ar_heads);
    r.finish();
    validate_decoder_combo(cfg.decoder.kind, cfg.decoder.target, cfg.decoder.use_alpha);
  }

  {
    SectionReader r(root.sub("loss"), "loss");
    cfg.loss.weights.w_ce = r.number("ce", cfg.loss.weights.w_ce);
    cfg.loss.weights.w_recon = r.number("recon", cfg.loss.weights.w_recon);
    cfg.loss.weights.w_sparsity = r.number("sparsity", cfg.loss.weights.w_sparsity);
    cfg.loss.weights.w_disjoint = r.number("disjoint", cfg.loss.weights.w_disjoint);
    cfg.loss.ablate = parse_ablate(r.str("ablate", "none"));
    cfg.loss.proj_dim = r.integer("proj_dim", cfg.loss.proj_dim);
    cfg.loss.stage1_recon = r.number("stage1_recon", cfg.loss.stage1_recon);
    cfg.loss.stage1_disjoint = r.number("stage1_disjoint", cfg.loss.stage1_disjoint);
    r.finish();
    if (cfg.loss.proj_dim < 0) throw ConfigError("loss.proj_dim must be non-negative");
  }

  {
    SectionReader r(root.sub("optimizer"), "optimizer");
    cfg.optimizer.lr = r.number("lr", cfg.optimizer.lr);
    cfg.optimizer.batch = r.integer("batch", cfg.optimizer.batch);
    cfg.optimizer.steps = r.integer("steps", cfg.optimizer.steps);
    cfg.optimizer.clip_norm = r.number("clip_norm", cfg.optimizer.clip_norm);
    cfg.optimizer.cosine = r.flag("cosine", cfg.optimizer.cosine);
    r.finish();
    if (cfg.optimizer.lr <= 0) throw ConfigError("optimizer.lr must be positive");
    require_positive(cfg.optimizer.batch, "optimizer.batch");
    if (cfg.optimizer.steps < 0) throw ConfigError("optimizer.steps must be non-negative");
    if (cfg.optimizer.clip_norm < 0) throw ConfigError("optimizer.clip_norm must be non-negative");
  }

  {
    SectionReader r(root.sub("train"), "train");
    cfg.train.mode = r.str("mode", cfg.train.mode);
    cfg.train.stage2_steps = r.integer("stage2_steps", cfg.train.stage2_steps);
    cfg.train.stage2_clips = r.integer("stage2_clips", cfg.train.stage2_clips);
    cfg.train.checkpoint_every = r.integer("checkpoint_every", cfg.train.checkpoint_every);
    cfg.train.silhouette_cap = r.integer("silhouette_cap", cfg.train.silhouette_cap);
    cfg.train.log_every = r.integer("log_every", cfg.train.log_every);
    r.finish();
    if (cfg.train.mode != "supervised" && cfg.train.mode != "unsupervised") {
      throw ConfigError("train.mode must be 'supervised' or 'unsupervised', got '" +
                        cfg.train.mode + "'");
    }
    if (cfg.train.stage2_steps < 0) throw ConfigError("train.stage2_steps must be non-negative");
    if (cfg.train.stage2_clips < 0) throw ConfigError("train.stage2_clips must be non-negative");
    require_positive(cfg.train.log_every, "train.log_every");
  }

  {
    SectionReader r(root.sub("suite"), "suite");
    cfg.suite.slot_dims = r.int_list("slot_dims", cfg.suite.slot_dims);
    r.finish();
    if (cfg.suite.slot_dims.empty()) throw ConfigError("suite.slot_dims must not be empty");
  }

  root.finish();

  // Per-module seeds all derive from the root seed.
  cfg.encoder.arch.seed = derive_seed(cfg.seed, "encoder");
  cfg.slots.seed = derive_seed(cfg.seed, "slots");
  cfg.decoder.seed = derive_seed(cfg.seed, "decoder");

  // Canonical snapshot with every default materialized; its hash names the run.
  nlohmann::json c;
  c["seed"] = cfg.seed;
  c["dataset"] = {{"dir", cfg.dataset.dir},
                  {"n_seen", cfg.dataset.n_seen},
                  {"n_unseen", cfg.dataset.n_unseen},
                  {"train_clips", cfg.dataset.train_clips},
                  {"val_clips", cfg.dataset.val_clips},
                  {"eval_clips", cfg.dataset.eval_clips},
                  {"polyphony_dist", cfg.dataset.polyphony_dist}};
  c["mel"] = {{"bins", cfg.mel_bins}};
  c["encoder"] = {{"checkpoint", cfg.encoder.checkpoint},
                  {"d_p", cfg.encoder.arch.d_p},
                  {"depth", cfg.encoder.arch.depth},
                  {"heads", cfg.encoder.arch.heads},
                  {"patch_t", cfg.encoder.arch.patch_t},
                  {"patch_f", cfg.encoder.arch.patch_f},
                  {"ffn_mult", cfg.encoder.arch.ffn_mult},
                  {"mask_ratio", cfg.encoder.mask_ratio},
                  {"pretrain_steps", cfg.encoder.pretrain_steps},
                  {"pretrain_batch", cfg.encoder.pretrain_batch},
                  {"pretrain_clips", cfg.encoder.pretrain_clips}};
  c["slots"] = {{"k", cfg.slots.k},
                {"d_s", cfg.slots.d_s},
                {"layers", cfg.slots.layers},
                {"heads", cfg.slots.heads},
                {"ffn_mult", cfg.slots.ffn_mult},
                {"attention",
                 cfg.slots.attention == nn::AttentionKind::kInverted ? "inverted" : "standard"}};
  c["decoder"] = {{"kind", decoder_kind_name(cfg.decoder.kind)},
                  {"target", recon_target_name(cfg.decoder.target)},
                  {"alpha", cfg.decoder.use_alpha},
                  {"mlp_hidden", cfg.decoder.mlp_hidden},
                  {"mlp_layers", cfg.decoder.mlp_layers},
                  {"cnn_channels", cfg.decoder.cnn_channels},
                  {"ar_layers", cfg.decoder.ar_layers},
                  {"ar_heads", cfg.decoder.ar_heads}};
  c["loss"] = {{"ce", cfg.loss.weights.w_ce},
               {"recon", cfg.loss.weights.w_recon},
               {"sparsity", cfg.loss.weights.w_sparsity},
               {"disjoint", cfg.loss.weights.w_disjoint},
               {"ablate", ablate_term_name(cfg.loss.ablate)},
               {"proj_dim", cfg.loss.proj_dim},
               {"stage1_recon", cfg.loss.stage1_recon},
               {"stage1_disjoint", cfg.loss.stage1_disjoint}};
  c["optimizer"] = {{"lr", cfg.optimizer.lr},
                    {"batch", cfg.optimizer.batch},
                    {"steps", cfg.optimizer.steps},
                    {"clip_norm", cfg.optimizer.clip_norm},
                    {"cosine", cfg.optimizer.cosine}};
  c["train"] = {{"mode", cfg.train.mode},
                {"stage2_steps", cfg.train.stage2_steps},
                {"stage2_clips", cfg.train.stage2_clips},
                {"checkpoint_every", cfg.train.checkpoint_every},
                {"silhouette_cap", cfg.train.silhouette_cap},
                {"log_every", cfg.train.log_every}};
  c["suite"] = {{"slot_dims", cfg.suite.slot_dims}};
  cfg.resolved = c;
  const std::string canon = c.dump();
  cfg.hash = hex64(fnv1a(canon.data(), canon.size()));
  return cfg;
}

Config load_config(const std::string& path, std::optional<uint64_t> seed_override) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  return config_from_json(doc, fs::path(path).parent_path().string(), seed_override);
}

}  // namespace carl
