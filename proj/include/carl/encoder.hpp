// Frozen patch-embedding encoder: mel spectrogram -> patch grid -> linear
// projection + positional encoding -> transformer trunk. Optionally warmed
// up with masked-patch reconstruction before freezing; a random-frozen
// encoder is an accepted degraded mode.
#pragma once

#include "carl/mel.hpp"
#include "carl/nn.hpp"

#include <filesystem>
#include <vector>

namespace carl {

struct PatchEmbeddings {
  Mat values;     // n x width (pixels before projection, d_p after encoding)
  int n_t = 0;    // patch-grid shape, rows of `values` are row-major (t, f)
  int n_f = 0;
  int patch_t = 0;
  int patch_f = 0;

  int n() const { return n_t * n_f; }
};

// Crops t/f down to patch multiples (never pads), then flattens each
// patch_t x patch_f tile row-major. Rejects patches larger than the input.
PatchEmbeddings patchify(const MelSpectrogram& x, int patch_t, int patch_f);

// Exact inverse on the cropped region: patches back to a (n_t*patch_t) x
// (n_f*patch_f) spectrogram matrix.
Mat unpatchify(const PatchEmbeddings& patches);

struct EncoderConfig {
  int d_p = 192;
  int depth = 4;
  int heads = 4;
  int patch_t = 8;
  int patch_f = 8;
  int ffn_mult = 4;
  uint64_t seed = 0;
};

class EncoderModel {
 public:
  explicit EncoderModel(const EncoderConfig& cfg);

  const EncoderConfig& config() const { return cfg_; }
  bool frozen() const { return frozen_; }
  void set_frozen(bool frozen) { frozen_ = frozen; }

  // Inference path: no gradients, deterministic.
  PatchEmbeddings encode(const MelSpectrogram& x) const;

  // Transformer trunk on already-projected rows (input must include the
  // positional term). Exposed so tests can probe equivariance directly.
  Mat run_trunk(const Mat& embedded) const;

  std::vector<ad::Parameter*> parameters();

  // FNV-1a over every weight byte in name order; frozen-audit anchor.
  uint64_t weight_fingerprint() const;

  void save(const std::filesystem::path& path) const;
  static EncoderModel load(const std::filesystem::path& path);

 private:
  friend struct PretrainAccess;

  EncoderConfig cfg_;
  bool frozen_ = true;
  nn::Linear patch_proj_;
  std::vector<nn::EncoderBlock> blocks_;
  nn::LayerNorm final_ln_;
  // Masked-pretraining extras; inert during encoding.
  ad::Parameter mask_token_;  // 1 x d_p
  nn::Linear pixel_head_;     // d_p -> patch_t*patch_f
};

struct PretrainResult {
  std::vector<double> losses;  // per-step batch means
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

// Masked-patch reconstruction: replaces a mask_ratio subset of projected
// patches with a learned token, reconstructs their pixels with a linear
// head, MSE on masked patches only. Throws ConfigError for mask_ratio
// outside (0, 1) and PipelineError (with the step index) on divergence.
// The model is frozen when this returns.
PretrainResult pretrain_masked(EncoderModel& model,
                               const std::vector<MelSpectrogram>& clips,
                               double mask_ratio, int steps, int batch,
                               uint64_t seed, const nn::AdamConfig& adam);

// Mean over patch vectors: the clip-level summary used by the
// mixture-copy baseline.
Vec clip_embedding(const PatchEmbeddings& e);

}  // namespace carl
