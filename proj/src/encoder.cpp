#include "carl/encoder.hpp"

#include "carl/checkpoint.hpp"
#include "carl/posenc.hpp"

#include <algorithm>
#include <cmath>

namespace carl {

using ad::Tape;
using ad::Var;

PatchEmbeddings patchify(const MelSpectrogram& x, int patch_t, int patch_f) {
  if (patch_t <= 0 || patch_f <= 0) throw ConfigError("patch size must be positive");
  if (patch_t > x.t || patch_f > x.f) {
    throw ConfigError("patch " + std::to_string(patch_t) + "x" + std::to_string(patch_f) +
                      " larger than spectrogram " + std::to_string(x.t) + "x" +
                      std::to_string(x.f));
  }
  PatchEmbeddings out;
  out.n_t = x.t / patch_t;
  out.n_f = x.f / patch_f;
  out.patch_t = patch_t;
  out.patch_f = patch_f;
  out.values = Mat(out.n(), patch_t * patch_f);
  for (int ti = 0; ti < out.n_t; ++ti) {
    for (int fi = 0; fi < out.n_f; ++fi) {
      const int row = ti * out.n_f + fi;
      for (int dt = 0; dt < patch_t; ++dt) {
        for (int df = 0; df < patch_f; ++df) {
          out.values(row, dt * patch_f + df) = x.values(ti * patch_t + dt, fi * patch_f + df);
        }
      }
    }
  }
  return out;
}

Mat unpatchify(const PatchEmbeddings& p) {
  if (p.values.cols() != p.patch_t * p.patch_f) {
    throw PipelineError("unpatchify needs pixel patches, got width " +
                        std::to_string(p.values.cols()));
  }
  Mat spec(p.n_t * p.patch_t, p.n_f * p.patch_f);
  for (int ti = 0; ti < p.n_t; ++ti) {
    for (int fi = 0; fi < p.n_f; ++fi) {
      const int row = ti * p.n_f + fi;
      for (int dt = 0; dt < p.patch_t; ++dt) {
        for (int df = 0; df < p.patch_f; ++df) {
          spec(ti * p.patch_t + dt, fi * p.patch_f + df) = p.values(row, dt * p.patch_f + df);
        }
      }
    }
  }
  return spec;
}

EncoderModel::EncoderModel(const EncoderConfig& cfg) : cfg_(cfg) {
  if (cfg.d_p <= 0 || cfg.d_p % 4 != 0) {
    throw ConfigError("encoder width must be a positive multiple of 4, got " +
                      std::to_string(cfg.d_p));
  }
  if (cfg.depth <= 0) throw ConfigError("encoder depth must be positive");
  if (cfg.d_p % cfg.heads != 0) {
    throw ConfigError("encoder width " + std::to_string(cfg.d_p) +
                      " not divisible by " + std::to_string(cfg.heads) + " heads");
  }
  Rng rng(derive_seed(cfg.seed, "encoder-init"));
  patch_proj_ = nn::Linear("enc/patch_proj", rng, cfg.patch_t * cfg.patch_f, cfg.d_p);
  for (int i = 0; i < cfg.depth; ++i) {
    blocks_.emplace_back("enc/block" + std::to_string(i), rng, cfg.d_p, cfg.heads,
                         cfg.ffn_mult * cfg.d_p);
  }
  final_ln_ = nn::LayerNorm("enc/final_ln", cfg.d_p);
  mask_token_ = ad::Parameter("enc/mask_token", nn::gaussian(rng, 1, cfg.d_p, 0.02));
  pixel_head_ = nn::Linear("enc/pixel_head", rng, cfg.d_p, cfg.patch_t * cfg.patch_f);
}

std::vector<ad::Parameter*> EncoderModel::parameters() {
  std::vector<ad::Parameter*> out;
  patch_proj_.collect(out);
  for (nn::EncoderBlock& b : blocks_) b.collect(out);
  final_ln_.collect(out);
  out.push_back(&mask_token_);
  pixel_head_.collect(out);
  return out;
}

uint64_t EncoderModel::weight_fingerprint() const {
  auto params = const_cast<EncoderModel*>(this)->parameters();
  uint64_t h = 0xcbf29ce484222325ull;
  for (const ad::Parameter* p : params) {
    h = fnv1a(p->name.data(), p->name.size(), h);
    h = fnv1a(p->value.data(), sizeof(double) * static_cast<size_t>(p->value.size()), h);
  }
  return h;
}

Mat EncoderModel::run_trunk(const Mat& embedded) const {
  Tape t;
  Var x = t.constant(embedded);
  auto* self = const_cast<EncoderModel*>(this);
  for (size_t i = 0; i < self->blocks_.size(); ++i) {
    x = self->blocks_[i].apply(t, x, "encoder block " + std::to_string(i));
  }
  x = self->final_ln_.apply(t, x);
  return t.val(x);
}

PatchEmbeddings EncoderModel::encode(const MelSpectrogram& x) const {
  PatchEmbeddings patches = patchify(x, cfg_.patch_t, cfg_.patch_f);
  auto* self = const_cast<EncoderModel*>(this);
  Tape t;
  Var pixels = t.constant(patches.values);
  Var proj = t.add_rowvec(t.matmul(pixels, t.constant(self->patch_proj_.weight.value)),
                          t.constant(self->patch_proj_.bias.value));
  Mat pe = positional_encoding_2d(patches.n_t, patches.n_f, cfg_.d_p);
  Mat embedded = t.val(proj) + pe;

  PatchEmbeddings out;
  out.values = run_trunk(embedded);
  out.n_t = patches.n_t;
  out.n_f = patches.n_f;
  out.patch_t = cfg_.patch_t;
  out.patch_f = cfg_.patch_f;
  if (!out.values.allFinite()) throw PipelineError("encoder produced non-finite embeddings");
  return out;
}

void EncoderModel::save(const std::filesystem::path& path) const {
  nlohmann::json header{{"d_p", cfg_.d_p},
                        {"depth", cfg_.depth},
                        {"heads", cfg_.heads},
                        {"patch_size", {cfg_.patch_t, cfg_.patch_f}},
                        {"ffn_mult", cfg_.ffn_mult},
                        {"frozen", frozen_},
                        {"seed", cfg_.seed}};
  std::map<std::string, Mat> tensors;
  for (ad::Parameter* p : const_cast<EncoderModel*>(this)->parameters()) {
    tensors.emplace(p->name, p->value);
  }
  save_checkpoint(path, header, tensors);
}

EncoderModel EncoderModel::load(const std::filesystem::path& path) {
  CheckpointData data = load_checkpoint(path);
  EncoderConfig cfg;
  try {
    cfg.d_p = data.header.at("d_p").get<int>();
    cfg.depth = data.header.at("depth").get<int>();
    cfg.heads = data.header.at("heads").get<int>();
    cfg.patch_t = data.header.at("patch_size").at(0).get<int>();
    cfg.patch_f = data.header.at("patch_size").at(1).get<int>();
    cfg.ffn_mult = data.header.value("ffn_mult", 4);
    cfg.seed = data.header.at("seed").get<uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw PipelineError("encoder checkpoint header incomplete: " + std::string(e.what()));
  }
  EncoderModel model(cfg);
  model.frozen_ = data.header.value("frozen", true);
  for (ad::Parameter* p : model.parameters()) {
    auto it = data.tensors.find(p->name);
    if (it == data.tensors.end()) {
      throw PipelineError("encoder checkpoint missing tensor '" + p->name + "'");
    }
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols()) {
      throw PipelineError("encoder checkpoint tensor '" + p->name + "' has shape " +
                          std::to_string(it->second.rows()) + "x" +
                          std::to_string(it->second.cols()) + ", expected " +
                          std::to_string(p->value.rows()) + "x" +
                          std::to_string(p->value.cols()));
    }
    p->value = it->second;
  }
  return model;
}

struct PretrainAccess {
  static nn::Linear& proj(EncoderModel& m) { return m.patch_proj_; }
  static std::vector<nn::EncoderBlock>& blocks(EncoderModel& m) { return m.blocks_; }
  static nn::LayerNorm& final_ln(EncoderModel& m) { return m.final_ln_; }
  static ad::Parameter& mask_token(EncoderModel& m) { return m.mask_token_; }
  static nn::Linear& pixel_head(EncoderModel& m) { return m.pixel_head_; }
};

PretrainResult pretrain_masked(EncoderModel& model,
                               const std::vector<MelSpectrogram>& clips,
                               double mask_ratio, int steps, int batch,
                               uint64_t seed, const nn::AdamConfig& adam_cfg) {
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) {
    throw ConfigError("mask_ratio must lie strictly inside (0, 1), got " +
                      std::to_string(mask_ratio));
  }
  if (clips.empty()) throw ConfigError("masked pretraining needs at least one clip");
  if (steps <= 0) throw ConfigError("masked pretraining needs a positive step count");
  if (batch <= 0) throw ConfigError("masked pretraining needs a positive batch size");

  struct Prepared {
    Mat pixels;
    Mat pe;
    int n;
  };
  const EncoderConfig& cfg = model.config();
  std::vector<Prepared> prep;
  prep.reserve(clips.size());
  for (const MelSpectrogram& clip : clips) {
    PatchEmbeddings p = patchify(clip, cfg.patch_t, cfg.patch_f);
    prep.push_back({p.values, positional_encoding_2d(p.n_t, p.n_f, cfg.d_p), p.n()});
  }

  model.set_frozen(false);
  nn::Adam adam(model.parameters(), adam_cfg);
  Rng rng(derive_seed(seed, "pretrain"));
  PretrainResult result;

  for (int step = 0; step < steps; ++step) {
    double step_loss = 0.0;
    for (int b = 0; b < batch; ++b) {
      const Prepared& clip = prep[rng.below(prep.size())];
      const int n = clip.n;
      int n_mask = static_cast<int>(std::lround(mask_ratio * n));
      n_mask = std::clamp(n_mask, 1, n - 1);
      std::vector<size_t> order = rng.permutation(static_cast<size_t>(n));
      Mat mask_col = Mat::Zero(n, 1);
      for (int i = 0; i < n_mask; ++i) mask_col(static_cast<Eigen::Index>(order[static_cast<size_t>(i)]), 0) = 1.0;
      Mat keep_col = Mat::Ones(n, 1) - mask_col;

      Tape t;
      Var pixels = t.constant(clip.pixels);
      Var proj = PretrainAccess::proj(model).apply(t, pixels);
      Var kept = t.mul_colvec(proj, t.constant(keep_col));
      Var token_rows = t.broadcast_row(t.param(PretrainAccess::mask_token(model)), n);
      Var masked = t.add(kept, t.mul_colvec(token_rows, t.constant(mask_col)));
      Var x = t.add(masked, t.constant(clip.pe));
      auto& blocks = PretrainAccess::blocks(model);
      for (size_t i = 0; i < blocks.size(); ++i) {
        x = blocks[i].apply(t, x, "pretrain block " + std::to_string(i));
      }
      x = PretrainAccess::final_ln(model).apply(t, x);
      Var pred = PretrainAccess::pixel_head(model).apply(t, x);
      Var diff = t.mul_colvec(t.sub(pred, pixels), t.constant(mask_col));
      const double denom = static_cast<double>(n_mask) * static_cast<double>(cfg.patch_t * cfg.patch_f);
      Var loss = t.scale(t.sum_all(t.mul(diff, diff)), 1.0 / (denom * batch));
      const double loss_val = t.val(loss)(0, 0) * batch;
      if (!std::isfinite(loss_val)) {
        throw PipelineError("masked pretraining diverged at step " + std::to_string(step));
      }
      step_loss += loss_val / batch;
      t.backward(loss);
    }
    adam.step();
    result.losses.push_back(step_loss);
  }

  model.set_frozen(true);
  result.initial_loss = result.losses.front();
  result.final_loss = result.losses.back();
  return result;
}

Vec clip_embedding(const PatchEmbeddings& e) {
  if (e.values.rows() < 1) throw PipelineError("clip embedding needs at least one patch");
  return e.values.colwise().mean().transpose();
}

}  // namespace carl
