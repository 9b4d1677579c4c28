#include "carl/decoders.hpp"

#include "carl/posenc.hpp"

#include <cmath>

namespace carl {

using ad::Tape;
using ad::Var;

namespace {

constexpr int kBroadcastPeDim = 16;
constexpr double kLinearFloor = 1e-30;  // guards log of an underflowed sum

Mat tile_rows(const Mat& block, int times) {
  Mat out(block.rows() * times, block.cols());
  for (int i = 0; i < times; ++i) out.middleRows(i * block.rows(), block.rows()) = block;
  return out;
}

}  // namespace

const char* decoder_kind_name(DecoderKind kind) {
  switch (kind) {
    case DecoderKind::kMlp: return "mlp";
    case DecoderKind::kCnn: return "cnn";
    case DecoderKind::kTransformer: return "transformer";
  }
  return "unknown";
}

const char* recon_target_name(ReconTargetKind kind) {
  switch (kind) {
    case ReconTargetKind::kFeatures: return "features";
    case ReconTargetKind::kSpectrogram: return "spectrogram";
  }
  return "unknown";
}

void validate_decoder_combo(DecoderKind kind, ReconTargetKind target, bool use_alpha) {
  const bool ok =
      (kind == DecoderKind::kMlp && target == ReconTargetKind::kFeatures) ||
      (kind == DecoderKind::kCnn && target == ReconTargetKind::kSpectrogram) ||
      (kind == DecoderKind::kTransformer && target == ReconTargetKind::kFeatures && !use_alpha);
  if (ok) return;
  const std::string combo = std::string(decoder_kind_name(kind)) + "+" +
                            recon_target_name(target) + (use_alpha ? "+alpha" : "");
  throw ConfigError("decoder combination " + combo +
                    " is unsupported; the supported combinations are mlp+features, "
                    "mlp+features+alpha, cnn+spectrogram, cnn+spectrogram+alpha, "
                    "and transformer+features");
}

CompositeResult composite_features(Tape& t, Var per_slot,
                                   std::optional<Var> alpha_raw, int k) {
  const Eigen::Index rows = t.val(per_slot).rows();
  if (rows % k != 0) throw PipelineError("per-slot stack not divisible into k blocks");
  const Eigen::Index n = rows / k;
  CompositeResult out;
  if (!alpha_raw) {
    out.composite = t.sum_row_blocks(per_slot, k);
    return out;
  }
  // (k*n) x 1 -> k x n so the softmax runs across slots at each position.
  Var logits = t.reshape(*alpha_raw, k, n);
  Var norm = t.softmax_cols(logits);
  out.alpha = t.reshape(norm, rows, 1);
  out.composite = t.sum_row_blocks(t.mul_colvec(per_slot, out.alpha), k);
  return out;
}

CompositeResult composite_spectrogram(Tape& t, Var per_slot_log,
                                      std::optional<Var> alpha_raw, int k,
                                      double clamp, double* clamp_fraction) {
  const Eigen::Index rows = t.val(per_slot_log).rows();
  const Eigen::Index f = t.val(per_slot_log).cols();
  if (rows % k != 0) throw PipelineError("per-slot stack not divisible into k blocks");
  if (clamp_fraction) {
    const Mat& v = t.val(per_slot_log);
    *clamp_fraction = static_cast<double>((v.array() > clamp).count()) /
                      static_cast<double>(v.size());
  }
  Var linear = t.exp(t.clamp_max(per_slot_log, clamp));
  CompositeResult out;
  Var summed;
  if (alpha_raw) {
    // Normalize alpha across slots at every pixel.
    Var logits = t.reshape(*alpha_raw, k, rows / k * f);
    Var norm = t.softmax_cols(logits);
    out.alpha = t.reshape(norm, rows, f);
    summed = t.sum_row_blocks(t.mul(linear, out.alpha), k);
  } else {
    summed = t.sum_row_blocks(linear, k);
  }
  out.composite = t.log_guard(summed, kLinearFloor);
  return out;
}

Var reconstruction_loss(Tape& t, Var prediction, Var target) {
  Var diff = t.sub(prediction, target);
  return t.mean_all(t.mul(diff, diff));
}

// ---------------------------------------------------------------------------
// MLP spatial broadcast

MlpBroadcastDecoder::MlpBroadcastDecoder(const DecoderConfig& cfg, int d_s,
                                         const TargetShape& shape)
    : d_s_(d_s),
      n_t_(shape.n_t),
      n_f_(shape.n_f),
      d_p_(shape.d_p),
      use_alpha_(cfg.use_alpha) {
  if (n_t_ <= 0 || n_f_ <= 0 || d_p_ <= 0) {
    throw ConfigError("mlp decoder needs a positive patch grid and feature width");
  }
  pe_ = positional_encoding_2d(n_t_, n_f_, kBroadcastPeDim);
  Rng rng(derive_seed(cfg.seed, "mlp-decoder-init"));
  mlp_ = nn::Mlp("dec_mlp", rng, d_s_ + kBroadcastPeDim, cfg.mlp_hidden, cfg.mlp_layers,
                 d_p_ + (use_alpha_ ? 1 : 0));
}

DecoderOutput MlpBroadcastDecoder::decode(Tape& t, Var slots) {
  const Eigen::Index k = t.val(slots).rows();
  const Eigen::Index n = static_cast<Eigen::Index>(n_t_) * n_f_;
  Var broadcast = t.repeat_each_row(slots, n);
  Var pe = t.constant(tile_rows(pe_, static_cast<int>(k)));
  Var x = t.concat_cols({broadcast, pe});
  Var y = mlp_.apply(t, x);  // (k*n) x (d_p [+1])

  DecoderOutput out;
  out.per_slot = t.slice_cols(y, 0, d_p_);
  std::optional<Var> alpha_raw;
  if (use_alpha_) alpha_raw = t.slice_cols(y, d_p_, 1);
  CompositeResult comp = composite_features(t, out.per_slot, alpha_raw, static_cast<int>(k));
  out.alpha = comp.alpha;
  out.composite = comp.composite;
  return out;
}

std::vector<ad::Parameter*> MlpBroadcastDecoder::parameters() {
  std::vector<ad::Parameter*> out;
  mlp_.collect(out);
  return out;
}

// ---------------------------------------------------------------------------
// CNN spatial broadcast

CnnBroadcastDecoder::CnnBroadcastDecoder(const DecoderConfig& cfg, int d_s,
                                         const TargetShape& shape)
    : d_s_(d_s), t_(shape.t), f_(shape.f), use_alpha_(cfg.use_alpha) {
  if (t_ % 8 != 0 || f_ % 8 != 0 || t_ <= 0 || f_ <= 0) {
    throw ConfigError("cnn decoder upsamples 8x; target " + std::to_string(t_) + "x" +
                      std::to_string(f_) + " must be divisible by 8");
  }
  grid_t_ = t_ / 8;
  grid_f_ = f_ / 8;
  coords_ = Mat(grid_t_ * grid_f_, 2);
  for (int y = 0; y < grid_t_; ++y) {
    for (int x = 0; x < grid_f_; ++x) {
      coords_(y * grid_f_ + x, 0) = grid_t_ == 1 ? 0.0 : -1.0 + 2.0 * y / (grid_t_ - 1);
      coords_(y * grid_f_ + x, 1) = grid_f_ == 1 ? 0.0 : -1.0 + 2.0 * x / (grid_f_ - 1);
    }
  }
  Rng rng(derive_seed(cfg.seed, "cnn-decoder-init"));
  const int c = cfg.cnn_channels;
  const int c_out = use_alpha_ ? 2 : 1;
  up1_ = nn::Conv2d("dec_cnn/up1", rng, 4, 4, d_s_ + 2, c, 2);
  up2_ = nn::Conv2d("dec_cnn/up2", rng, 4, 4, c, c, 2);
  up3_ = nn::Conv2d("dec_cnn/up3", rng, 4, 4, c, c_out, 2);
}

DecoderOutput CnnBroadcastDecoder::decode(Tape& t, Var slots) {
  const Eigen::Index k = t.val(slots).rows();
  const Eigen::Index cells = static_cast<Eigen::Index>(grid_t_) * grid_f_;
  Var broadcast = t.repeat_each_row(slots, cells);
  Var coords = t.constant(tile_rows(coords_, static_cast<int>(k)));
  Var x = t.concat_cols({broadcast, coords});

  // Three zero-stuff + stride-1 conv stages, each doubling the grid.
  int h = grid_t_, w = grid_f_;
  x = t.zero_stuff_interior(x, k, h, w, d_s_ + 2);
  x = t.gelu(up1_.apply(t, x, k, 2 * h - 1, 2 * w - 1));
  h *= 2; w *= 2;
  x = t.zero_stuff_interior(x, k, h, w, up1_.cout);
  x = t.gelu(up2_.apply(t, x, k, 2 * h - 1, 2 * w - 1));
  h *= 2; w *= 2;
  x = t.zero_stuff_interior(x, k, h, w, up2_.cout);
  x = up3_.apply(t, x, k, 2 * h - 1, 2 * w - 1);  // rows k*t_*f_, cols 1 or 2

  DecoderOutput out;
  // Channel columns -> k stacked t x f images.
  out.per_slot = t.reshape(t.slice_cols(x, 0, 1), k * t_, f_);
  std::optional<Var> alpha_raw;
  if (use_alpha_) alpha_raw = t.reshape(t.slice_cols(x, 1, 1), k * t_, f_);
  CompositeResult comp = composite_spectrogram(t, out.per_slot, alpha_raw,
                                               static_cast<int>(k), 20.0,
                                               &out.clamp_fraction);
  out.alpha = comp.alpha;
  out.composite = comp.composite;
  return out;
}

std::vector<ad::Parameter*> CnnBroadcastDecoder::parameters() {
  std::vector<ad::Parameter*> out;
  up1_.collect(out);
  up2_.collect(out);
  up3_.collect(out);
  return out;
}

// ---------------------------------------------------------------------------
// Autoregressive transformer over feature rows

ArFeatureDecoder::ArFeatureDecoder(const DecoderConfig& cfg, int d_s,
                                   const TargetShape& shape)
    : d_s_(d_s), n_(shape.n_t * shape.n_f), d_p_(shape.d_p) {
  if (n_ <= 0 || d_p_ <= 0) {
    throw ConfigError("transformer decoder needs a positive sequence length and width");
  }
  if (d_p_ % cfg.ar_heads != 0) {
    throw ConfigError("feature width " + std::to_string(d_p_) + " not divisible by " +
                      std::to_string(cfg.ar_heads) + " heads");
  }
  Rng rng(derive_seed(cfg.seed, "ar-decoder-init"));
  bos_ = ad::Parameter("dec_ar/bos", nn::gaussian(rng, 1, d_p_, 0.02));
  slot_proj_ = nn::Linear("dec_ar/slot_proj", rng, d_s_, d_p_);
  pe_ = positional_encoding_1d(n_, d_p_);
  causal_mask_ = Mat::Zero(n_, n_);
  for (int i = 0; i < n_; ++i) {
    for (int j = i + 1; j < n_; ++j) causal_mask_(i, j) = -1e30;
  }
  for (int i = 0; i < cfg.ar_layers; ++i) {
    const std::string base = "dec_ar/layer" + std::to_string(i);
    Layer layer;
    layer.ln_self = nn::LayerNorm(base + "/ln_self", d_p_);
    layer.ln_cross = nn::LayerNorm(base + "/ln_cross", d_p_);
    layer.ln_ff = nn::LayerNorm(base + "/ln_ff", d_p_);
    layer.self_attn = nn::AttentionBlock(base + "/self", rng, d_p_, cfg.ar_heads,
                                         nn::AttentionKind::kStandard);
    layer.cross_attn = nn::AttentionBlock(base + "/cross", rng, d_p_, cfg.ar_heads,
                                          nn::AttentionKind::kStandard);
    layer.ff1 = nn::Linear(base + "/ff1", rng, d_p_, 4 * d_p_);
    layer.ff2 = nn::Linear(base + "/ff2", rng, 4 * d_p_, d_p_);
    layers_.push_back(std::move(layer));
  }
  final_ln_ = nn::LayerNorm("dec_ar/final_ln", d_p_);
  head_ = nn::Linear("dec_ar/head", rng, d_p_, d_p_);
}

DecoderOutput ArFeatureDecoder::decode(Tape& t, Var slots, Var target_features) {
  if (t.val(target_features).rows() != n_ || t.val(target_features).cols() != d_p_) {
    throw PipelineError("transformer decoder built for " + std::to_string(n_) + "x" +
                        std::to_string(d_p_) + " targets, got " +
                        std::to_string(t.val(target_features).rows()) + "x" +
                        std::to_string(t.val(target_features).cols()));
  }
  // Shift right: BOS then target rows 0..n-2.
  Var shifted = t.concat_rows({t.broadcast_row(t.param(bos_), 1),
                               t.slice_rows(target_features, 0, n_ - 1)});
  Var x = t.add(shifted, t.constant(pe_));
  Var mem = slot_proj_.apply(t, slots);
  for (size_t i = 0; i < layers_.size(); ++i) {
    Layer& layer = layers_[i];
    const std::string where = "ar layer " + std::to_string(i);
    Var h = layer.ln_self.apply(t, x);
    x = t.add(x, layer.self_attn.apply_masked(t, h, h, causal_mask_, where + " self"));
    Var q = layer.ln_cross.apply(t, x);
    x = t.add(x, layer.cross_attn.apply(t, q, mem, where + " cross"));
    Var f = layer.ln_ff.apply(t, x);
    x = t.add(x, layer.ff2.apply(t, t.gelu(layer.ff1.apply(t, f))));
  }
  DecoderOutput out;
  out.composite = head_.apply(t, final_ln_.apply(t, x));
  return out;
}

std::vector<ad::Parameter*> ArFeatureDecoder::parameters() {
  std::vector<ad::Parameter*> out;
  out.push_back(&bos_);
  slot_proj_.collect(out);
  for (Layer& layer : layers_) {
    layer.ln_self.collect(out);
    layer.ln_cross.collect(out);
    layer.ln_ff.collect(out);
    layer.self_attn.collect(out);
    layer.cross_attn.collect(out);
    layer.ff1.collect(out);
    layer.ff2.collect(out);
  }
  final_ln_.collect(out);
  head_.collect(out);
  return out;
}

// ---------------------------------------------------------------------------

ReconDecoder::ReconDecoder(const DecoderConfig& cfg, int d_s, const TargetShape& shape)
    : cfg_(cfg) {
  validate_decoder_combo(cfg.kind, cfg.target, cfg.use_alpha);
  switch (cfg.kind) {
    case DecoderKind::kMlp:
      mlp_ = std::make_unique<MlpBroadcastDecoder>(cfg, d_s, shape);
      break;
    case DecoderKind::kCnn:
      cnn_ = std::make_unique<CnnBroadcastDecoder>(cfg, d_s, shape);
      break;
    case DecoderKind::kTransformer:
      ar_ = std::make_unique<ArFeatureDecoder>(cfg, d_s, shape);
      break;
  }
}

DecoderOutput ReconDecoder::decode(Tape& t, Var slots, Var target) {
  switch (cfg_.kind) {
    case DecoderKind::kMlp: return mlp_->decode(t, slots);
    case DecoderKind::kCnn: return cnn_->decode(t, slots);
    case DecoderKind::kTransformer: return ar_->decode(t, slots, target);
  }
  throw PipelineError("unknown decoder kind");
}

std::vector<ad::Parameter*> ReconDecoder::parameters() {
  if (mlp_) return mlp_->parameters();
  if (cnn_) return cnn_->parameters();
  return ar_->parameters();
}

}  // namespace carl
