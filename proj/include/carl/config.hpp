// Root configuration: one JSON document covering dataset synthesis, the
// encoder, slot transformer, decoder, losses, optimizer, and experiment
// settings. Unknown keys are rejected with their full path; defaults are
// materialized before hashing so the config hash identifies the resolved run.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "carl/common.hpp"
#include "carl/decoders.hpp"
#include "carl/encoder.hpp"
#include "carl/losses.hpp"
#include "carl/slots.hpp"

#include "json.hpp"

namespace carl {

struct DatasetSection {
  std::string dir;  // as written in the config; resolve via Config::dataset_dir()
  int n_seen = 10;
  int n_unseen = 0;
  int train_clips = 2000;
  int val_clips = 200;
  int eval_clips = 400;
  std::vector<double> polyphony_dist = {0.25, 0.25, 0.25, 0.25};
};

struct EncoderSection {
  std::string checkpoint;  // empty -> randomly initialized frozen encoder
  EncoderConfig arch;
  double mask_ratio = 0.75;
  int pretrain_steps = 300;
  int pretrain_batch = 4;
  int pretrain_clips = 256;
};

struct LossSection {
  LossWeights weights;
  AblateTerm ablate = AblateTerm::kNone;
  int proj_dim = 64;             // disjointedness projection width; 0 = raw slots
  double stage1_recon = 1.0;     // unsupervised stage-1 weights
  double stage1_disjoint = 0.01;
};

struct OptimizerSection {
  double lr = 3e-4;
  int batch = 32;
  int steps = 2000;
  double clip_norm = 1.0;
  bool cosine = true;
};

struct TrainSection {
  std::string mode = "supervised";  // or "unsupervised"
  int stage2_steps = 1000;
  int stage2_clips = 0;      // probe training subset; 0 = whole train split
  int checkpoint_every = 0;  // 0 = final checkpoint only
  int silhouette_cap = 10000;
  int log_every = 1;
};

struct SuiteSection {
  std::vector<int> slot_dims = {512, 256, 64};
};

struct Config {
  uint64_t seed = 0;
  DatasetSection dataset;
  int mel_bins = 64;
  EncoderSection encoder;
  SlotConfig slots;
  DecoderConfig decoder;
  LossSection loss;
  OptimizerSection optimizer;
  TrainSection train;
  SuiteSection suite;

  std::string base_dir;      // directory of the config file
  std::string hash;          // hex64 FNV-1a of the canonical resolved JSON
  nlohmann::json resolved;   // canonical snapshot (defaults materialized)

  std::string dataset_dir() const;   // resolved against base_dir
  std::string encoder_ckpt() const;  // resolved against base_dir, "" if unset
};

// Parses, validates (unknown keys and type mismatches raise ConfigError with
// the offending key path), fills defaults, derives per-module seeds from the
// root seed, and computes the canonical hash.
Config config_from_json(const nlohmann::json& doc, const std::string& base_dir,
                        std::optional<uint64_t> seed_override = std::nullopt);
Config load_config(const std::string& path,
                   std::optional<uint64_t> seed_override = std::nullopt);

}  // namespace carl
