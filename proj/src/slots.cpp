#include "carl/slots.hpp"

#include "carl/posenc.hpp"

namespace carl {

using ad::Tape;
using ad::Var;

SlotTransformer::SlotTransformer(const SlotConfig& cfg, int d_p)
    : cfg_(cfg), d_p_(d_p) {
  if (cfg.k < 1) throw ConfigError("slot count must be at least 1");
  if (cfg.d_s <= 0 || cfg.d_s % cfg.heads != 0) {
    throw ConfigError("slot width " + std::to_string(cfg.d_s) +
                      " not divisible by " + std::to_string(cfg.heads) + " heads");
  }
  if (cfg.layers < 1) throw ConfigError("slot transformer needs at least one layer");
  Rng rng(derive_seed(cfg.seed, "slots-init"));
  q_star_ = ad::Parameter("slots/q_star", nn::gaussian(rng, cfg.k, cfg.d_s, 0.02));
  input_proj_ = nn::Linear("slots/input_proj", rng, d_p, cfg.d_s);
  input_ln_ = nn::LayerNorm("slots/input_ln", cfg.d_s);
  for (int i = 0; i < cfg.layers; ++i) {
    const std::string base = "slots/layer" + std::to_string(i);
    Layer layer;
    layer.ln_self = nn::LayerNorm(base + "/ln_self", cfg.d_s);
    layer.ln_cross = nn::LayerNorm(base + "/ln_cross", cfg.d_s);
    layer.ln_ff = nn::LayerNorm(base + "/ln_ff", cfg.d_s);
    layer.self_attn = nn::AttentionBlock(base + "/self", rng, cfg.d_s, cfg.heads,
                                         nn::AttentionKind::kStandard);
    layer.cross_attn = nn::AttentionBlock(base + "/cross", rng, cfg.d_s, cfg.heads,
                                          cfg.attention);
    layer.ff1 = nn::Linear(base + "/ff1", rng, cfg.d_s, cfg.ffn_mult * cfg.d_s);
    layer.ff2 = nn::Linear(base + "/ff2", rng, cfg.ffn_mult * cfg.d_s, cfg.d_s);
    layers_.push_back(std::move(layer));
  }
  final_ln_ = nn::LayerNorm("slots/final_ln", cfg.d_s);
}

Var SlotTransformer::apply(Tape& t, Var features_with_pe) {
  if (t.val(features_with_pe).cols() != d_p_) {
    throw PipelineError("slot transformer built for feature width " +
                        std::to_string(d_p_) + ", got " +
                        std::to_string(t.val(features_with_pe).cols()));
  }
  // One shared projection of the memory; layers re-read it as keys/values.
  Var mem = input_ln_.apply(t, input_proj_.apply(t, features_with_pe));
  Var x = t.param(q_star_);
  for (size_t i = 0; i < layers_.size(); ++i) {
    Layer& layer = layers_[i];
    const std::string where = "slot layer " + std::to_string(i);
    Var h = layer.ln_self.apply(t, x);
    x = t.add(x, layer.self_attn.apply(t, h, h, where + " self"));
    Var q = layer.ln_cross.apply(t, x);
    x = t.add(x, layer.cross_attn.apply(t, q, mem, where + " cross"));
    Var f = layer.ln_ff.apply(t, x);
    x = t.add(x, layer.ff2.apply(t, t.gelu(layer.ff1.apply(t, f))));
  }
  return final_ln_.apply(t, x);
}

Mat SlotTransformer::transform(const PatchEmbeddings& e) const {
  auto* self = const_cast<SlotTransformer*>(this);
  Mat pe = positional_encoding_2d(e.n_t, e.n_f, d_p_);
  Tape t;
  Var features = t.constant(e.values + pe);
  Var slots = self->apply(t, features);
  return t.val(slots);
}

std::vector<ad::Parameter*> SlotTransformer::parameters() {
  std::vector<ad::Parameter*> out;
  out.push_back(&q_star_);
  input_proj_.collect(out);
  input_ln_.collect(out);
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
  return out;
}

}  // namespace carl
