// Slot transformer: learned initial queries refined by pre-normalization
// layers of slot self-attention, (inverted) cross-attention over patch
// features, and a feed-forward map. Slot semantics are order-free;
// everything downstream must be permutation-safe.
#pragma once

#include "carl/encoder.hpp"
#include "carl/nn.hpp"

namespace carl {

struct SlotConfig {
  int k = 6;  // slot budget: max polyphony + 2
  int d_s = 512;
  int layers = 4;
  int heads = 4;
  int ffn_mult = 4;
  nn::AttentionKind attention = nn::AttentionKind::kInverted;
  uint64_t seed = 0;
};

class SlotTransformer {
 public:
  SlotTransformer(const SlotConfig& cfg, int d_p);

  const SlotConfig& config() const { return cfg_; }
  int d_p() const { return d_p_; }

  // features_with_pe: n x d_p rows of encoder features with the positional
  // term already added. Returns the k x d_s slot matrix.
  ad::Var apply(ad::Tape& t, ad::Var features_with_pe);

  // Inference convenience: adds the positional encoding for e's grid and
  // runs a throwaway tape.
  Mat transform(const PatchEmbeddings& e) const;

  std::vector<ad::Parameter*> parameters();

  ad::Parameter& initial_queries() { return q_star_; }

 private:
  struct Layer {
    nn::LayerNorm ln_self, ln_cross, ln_ff;
    nn::AttentionBlock self_attn, cross_attn;
    nn::Linear ff1, ff2;
  };

  SlotConfig cfg_;
  int d_p_ = 0;
  ad::Parameter q_star_;   // k x d_s
  nn::Linear input_proj_;  // d_p -> d_s
  nn::LayerNorm input_ln_;
  std::vector<Layer> layers_;
  nn::LayerNorm final_ln_;
};

}  // namespace carl
