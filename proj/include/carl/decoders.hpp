// Reconstruction decoders: MLP spatial broadcast over feature positions,
// CNN spatial broadcast over the spectrogram (composited in the linear
// domain), and an autoregressive transformer over feature rows. Per-slot
// outputs are stacked rowwise as k equal blocks throughout.
#pragma once

#include "carl/nn.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace carl {

enum class DecoderKind { kMlp, kCnn, kTransformer };
enum class ReconTargetKind { kFeatures, kSpectrogram };

const char* decoder_kind_name(DecoderKind kind);
const char* recon_target_name(ReconTargetKind kind);

// The five supported rows: mlp+features (±alpha), cnn+spectrogram (±alpha),
// transformer+features. Anything else throws ConfigError.
void validate_decoder_combo(DecoderKind kind, ReconTargetKind target, bool use_alpha);

struct CompositeResult {
  ad::Var composite;
  ad::Var alpha;  // normalized, stacked like per_slot; invalid without alpha
};

// per_slot: (k*n) x d feature reconstructions. alpha_raw, when given, is
// (k*n) x 1 logits, softmaxed across slots at each position; without alpha
// the composite is the plain sum over slots.
CompositeResult composite_features(ad::Tape& t, ad::Var per_slot,
                                   std::optional<ad::Var> alpha_raw, int k);

// per_slot_log: (k*t) x f log-spectrogram reconstructions, clamped at
// `clamp` before exponentiation (the clamped fraction lands in
// *clamp_fraction when non-null). alpha_raw, when given, is (k*t) x f
// logits normalized across slots per pixel. Summation happens in the linear
// domain; the result is taken back to log.
CompositeResult composite_spectrogram(ad::Tape& t, ad::Var per_slot_log,
                                      std::optional<ad::Var> alpha_raw, int k,
                                      double clamp = 20.0,
                                      double* clamp_fraction = nullptr);

ad::Var reconstruction_loss(ad::Tape& t, ad::Var prediction, ad::Var target);

struct DecoderOutput {
  ad::Var per_slot;   // stacked; invalid for the transformer decoder
  ad::Var alpha;      // normalized; invalid when the variant has no alpha
  ad::Var composite;  // n x d_p, t x f, or the transformer's predictions
  double clamp_fraction = 0.0;  // cnn only
};

struct DecoderConfig {
  DecoderKind kind = DecoderKind::kMlp;
  ReconTargetKind target = ReconTargetKind::kFeatures;
  bool use_alpha = true;
  int mlp_hidden = 512;
  int mlp_layers = 3;
  int cnn_channels = 32;
  int ar_layers = 4;
  int ar_heads = 4;
  uint64_t seed = 0;
};

// Target geometry the decoder is built for.
struct TargetShape {
  int n_t = 0;  // patch grid (features) or spectrogram frames / patch rows
  int n_f = 0;
  int d_p = 0;  // feature width; unused for spectrogram targets
  int t = 0;    // spectrogram rows/cols; unused for feature targets
  int f = 0;
};

class MlpBroadcastDecoder {
 public:
  MlpBroadcastDecoder(const DecoderConfig& cfg, int d_s, const TargetShape& shape);
  DecoderOutput decode(ad::Tape& t, ad::Var slots);
  std::vector<ad::Parameter*> parameters();

 private:
  int d_s_, n_t_, n_f_, d_p_;
  bool use_alpha_;
  Mat pe_;  // (n_t*n_f) x 16, fixed broadcast positions
  nn::Mlp mlp_;
};

class CnnBroadcastDecoder {
 public:
  CnnBroadcastDecoder(const DecoderConfig& cfg, int d_s, const TargetShape& shape);
  DecoderOutput decode(ad::Tape& t, ad::Var slots);
  std::vector<ad::Parameter*> parameters();

 private:
  int d_s_, t_, f_, grid_t_, grid_f_;
  bool use_alpha_;
  Mat coords_;  // (grid_t*grid_f) x 2, fixed
  nn::Conv2d up1_, up2_, up3_;
};

class ArFeatureDecoder {
 public:
  ArFeatureDecoder(const DecoderConfig& cfg, int d_s, const TargetShape& shape);
  // Teacher forcing: position i sees BOS + target rows < i plus all slots.
  DecoderOutput decode(ad::Tape& t, ad::Var slots, ad::Var target_features);
  std::vector<ad::Parameter*> parameters();

 private:
  struct Layer {
    nn::LayerNorm ln_self, ln_cross, ln_ff;
    nn::AttentionBlock self_attn, cross_attn;
    nn::Linear ff1, ff2;
  };

  int d_s_, n_, d_p_;
  ad::Parameter bos_;     // 1 x d_p
  nn::Linear slot_proj_;  // d_s -> d_p memory projection
  Mat pe_;                // n x d_p, fixed
  Mat causal_mask_;       // n x n additive
  std::vector<Layer> layers_;
  nn::LayerNorm final_ln_;
  nn::Linear head_;
};

// Owns whichever decoder the config selects and presents one decode call.
class ReconDecoder {
 public:
  ReconDecoder(const DecoderConfig& cfg, int d_s, const TargetShape& shape);

  const DecoderConfig& config() const { return cfg_; }

  // `target` is required by the transformer variant (teacher forcing) and
  // ignored by the broadcast decoders.
  DecoderOutput decode(ad::Tape& t, ad::Var slots, ad::Var target);

  std::vector<ad::Parameter*> parameters();

 private:
  DecoderConfig cfg_;
  std::unique_ptr<MlpBroadcastDecoder> mlp_;
  std::unique_ptr<CnnBroadcastDecoder> cnn_;
  std::unique_ptr<ArFeatureDecoder> ar_;
};

}  // namespace carl
