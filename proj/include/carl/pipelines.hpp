// Training and evaluation orchestration: supervised joint training, the
// two-stage unsupervised path (reconstruction-only stage 1, linear-probe
// stage 2), the mixture-copy baseline, the unseen-class generalization probe,
// checkpoint re-evaluation, and the four experiment suites.
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "carl/config.hpp"
#include "carl/dataset.hpp"
#include "carl/encoder.hpp"
#include "carl/metrics.hpp"
#include "carl/model.hpp"

namespace carl {

struct RunRecord {
  std::string id;
  std::string dir;
  std::string config_hash;
  std::string dataset_fingerprint;
  std::string final_checkpoint;
  std::vector<std::string> checkpoints;
  EvalReport eval;
  std::map<std::string, EvalReport> extra_evals;  // e.g. seen_only / with_unseen
  std::map<std::string, double> final_losses;
  double wall_seconds = 0.0;
};

// Builds the dataset the config describes; returns its fingerprint.
std::string synth_dataset(const Config& cfg, bool force);

// Masked-patch pretraining of the stand-in encoder on training-split clips;
// saves the frozen encoder to out_path.
PretrainResult pretrain_encoder(const Config& cfg, const std::filesystem::path& out_path);

RunRecord train_supervised(const Config& cfg, const std::filesystem::path& out_root);
RunRecord train_unsupervised_stage1(const Config& cfg, const std::filesystem::path& out_root);
RunRecord train_probe_stage2(const std::filesystem::path& stage1_ckpt, const Config& cfg,
                             const std::filesystem::path& out_root);
RunRecord baseline_mixture_copy(const Config& cfg, const std::filesystem::path& out_root);
RunRecord generalization_probe(const std::filesystem::path& supervised_ckpt, const Config& cfg,
                               const std::filesystem::path& out_root);

// Recomputes an EvalReport for any saved model on a dataset's eval split.
EvalReport evaluate_checkpoint(const std::filesystem::path& ckpt,
                               const std::filesystem::path& dataset_dir, int silhouette_cap,
                               uint64_t seed, const std::string& config_hash);

struct SuiteRunOutcome {
  std::string name;
  bool ok = false;
  std::string error;
  RunRecord record;  // valid when ok
};

struct SuiteResult {
  std::string suite_id;
  std::vector<SuiteRunOutcome> outcomes;
  std::string table_text;
  std::string table_csv;
};

// suite_id in {exp1, exp2, exp3, exp4}; failed runs are recorded and the
// remaining runs continue.
SuiteResult run_experiment_suite(const std::string& suite_id, const Config& base,
                                 const std::filesystem::path& out_root);

}  // namespace carl
