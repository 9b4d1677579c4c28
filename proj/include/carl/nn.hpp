// Layers built on the autodiff tape: linear, layer norm, MLP, the three
// attention cores (standard, inverted, causal), transformer blocks, im2col
// convolution, and the Adam optimizer with cosine decay.
#pragma once

#include "carl/autodiff.hpp"
#include "carl/common.hpp"

#include <string>
#include <vector>

namespace carl::nn {

using ad::Parameter;
using ad::Tape;
using ad::Var;

// ---------------------------------------------------------------------------
// Initializers

Mat glorot(Rng& rng, Eigen::Index rows, Eigen::Index cols);
Mat gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev);

// ---------------------------------------------------------------------------
// Attention cores. These operate on pre-projected Q/K/V and carry no learned
// weights: split into heads, normalize, weighted-sum, concatenate heads.
// `where` labels the call site for the non-finite logits abort message.

// Softmax over the key axis per query row (vanilla cross/self attention).
Var standard_attention(Tape& t, Var q, Var k, Var v, int heads, const std::string& where);

// Softmax over the query (slot) axis per key column, then each slot's row is
// renormalized over keys to sum to 1 (weighted mean, denominator floored).
Var inverted_attention(Tape& t, Var q, Var k, Var v, int heads, const std::string& where,
                       double eps = 1e-8);

// Standard attention with an additive mask on the logits (e.g. causal).
Var masked_attention(Tape& t, Var q, Var k, Var v, int heads, const Mat& mask,
                     const std::string& where);

// ---------------------------------------------------------------------------
// Layers

struct Linear {
  Parameter weight;  // in x out
  Parameter bias;    // 1 x out

  Linear() = default;
  Linear(const std::string& name, Rng& rng, Eigen::Index in, Eigen::Index out);
  Var apply(Tape& t, Var x);
  void collect(std::vector<Parameter*>& out);
};

struct LayerNorm {
  Parameter gain;  // 1 x d
  Parameter bias;  // 1 x d

  LayerNorm() = default;
  LayerNorm(const std::string& name, Eigen::Index d);
  Var apply(Tape& t, Var x);
  void collect(std::vector<Parameter*>& out);
};

// GELU MLP: in -> hidden x n_hidden -> out, no activation after the last map.
struct Mlp {
  std::vector<Linear> layers;

  Mlp() = default;
  Mlp(const std::string& name, Rng& rng, Eigen::Index in, Eigen::Index hidden,
      int n_hidden, Eigen::Index out);
  Var apply(Tape& t, Var x);
  void collect(std::vector<Parameter*>& out);
};

enum class AttentionKind { kStandard, kInverted };

// Projections around an attention core: q/k/v/out linear maps of width d.
struct AttentionBlock {
  Linear wq, wk, wv, wo;
  int heads = 1;
  AttentionKind kind = AttentionKind::kStandard;

  AttentionBlock() = default;
  AttentionBlock(const std::string& name, Rng& rng, Eigen::Index d, int heads,
                 AttentionKind kind);
  Var apply(Tape& t, Var q_in, Var kv_in, const std::string& where);
  Var apply_masked(Tape& t, Var q_in, Var kv_in, const Mat& mask, const std::string& where);
  void collect(std::vector<Parameter*>& out);
};

// Pre-normalization self-attention + feed-forward block.
struct EncoderBlock {
  LayerNorm ln1, ln2;
  AttentionBlock attn;
  Linear ff1, ff2;

  EncoderBlock() = default;
  EncoderBlock(const std::string& name, Rng& rng, Eigen::Index d, int heads,
               Eigen::Index ff_hidden);
  Var apply(Tape& t, Var x, const std::string& where);
  void collect(std::vector<Parameter*>& out);
};

// Stride-1 convolution via im2col; input is `batch` images stacked rowwise.
struct Conv2d {
  Parameter weight;  // (kh*kw*cin) x cout
  Parameter bias;    // 1 x cout
  Eigen::Index kh = 0, kw = 0, cin = 0, cout = 0, pad = 0;

  Conv2d() = default;
  Conv2d(const std::string& name, Rng& rng, Eigen::Index kh, Eigen::Index kw,
         Eigen::Index cin, Eigen::Index cout, Eigen::Index pad);
  Var apply(Tape& t, Var x, Eigen::Index batch, Eigen::Index h, Eigen::Index w);
  void collect(std::vector<Parameter*>& out);
};

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // global gradient norm; 0 disables
  int total_steps = 0;     // cosine decay horizon; 0 = constant lr
};

class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig cfg);

  // Applies one update from the accumulated grads, then clears them.
  // Returns the pre-clip global gradient norm.
  double step();

  int steps_taken() const { return step_count_; }
  double current_lr() const;

 private:
  std::vector<Parameter*> params_;
  std::vector<Mat> m_, v_;
  AdamConfig cfg_;
  int step_count_ = 0;
};

}  // namespace carl::nn
