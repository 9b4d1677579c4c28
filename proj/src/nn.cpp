#include "carl/nn.hpp"

#include <cmath>

namespace carl::nn {

Mat glorot(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(rows + cols));
  return gaussian(rng, rows, cols, stddev);
}

Mat gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal(0.0, stddev);
  }
  return m;
}

namespace {

void check_logits(const Mat& logits, const std::string& where, int head) {
  if (!logits.allFinite()) {
    throw PipelineError("attention logits non-finite at " + where + ", head " +
                        std::to_string(head));
  }
}

// Split into heads, apply `one_head(qh, kh, vh, head_idx)`, concat results.
template <typename F>
Var per_head(Tape& t, Var q, Var k, Var v, int heads, F&& one_head) {
  const Eigen::Index d = t.val(q).cols();
  if (d % heads != 0) throw PipelineError("attention width not divisible by head count");
  const Eigen::Index dh = d / heads;
  std::vector<Var> outs;
  outs.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var qh = t.slice_cols(q, h * dh, dh);
    Var kh = t.slice_cols(k, h * dh, dh);
    Var vh = t.slice_cols(v, h * dh, dh);
    outs.push_back(one_head(qh, kh, vh, h));
  }
  return heads == 1 ? outs[0] : t.concat_cols(outs);
}

}  // namespace

Var standard_attention(Tape& t, Var q, Var k, Var v, int heads, const std::string& where) {
  const Eigen::Index dh = t.val(q).cols() / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  return per_head(t, q, k, v, heads, [&](Var qh, Var kh, Var vh, int h) {
    Var logits = t.scale(t.matmul(qh, t.transpose(kh)), inv_scale);
    check_logits(t.val(logits), where, h);
    Var attn = t.softmax_rows(logits);
    return t.matmul(attn, vh);
  });
}

Var inverted_attention(Tape& t, Var q, Var k, Var v, int heads, const std::string& where,
                       double eps) {
  const Eigen::Index dh = t.val(q).cols() / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  return per_head(t, q, k, v, heads, [&](Var qh, Var kh, Var vh, int h) {
    Var logits = t.scale(t.matmul(qh, t.transpose(kh)), inv_scale);  // slots x patches
    check_logits(t.val(logits), where, h);
    // Each patch distributes one unit of attention over slots...
    Var attn = t.softmax_cols(logits);
    // ...then each slot's row becomes a weighted mean over patches.
    Var denom = t.max_scalar(t.rowwise_sum(attn), eps);
    Var weights = t.mul_colvec(attn, t.reciprocal(denom));
    return t.matmul(weights, vh);
  });
}

Var masked_attention(Tape& t, Var q, Var k, Var v, int heads, const Mat& mask,
                     const std::string& where) {
  const Eigen::Index dh = t.val(q).cols() / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Var mask_c = t.constant(mask);
  return per_head(t, q, k, v, heads, [&](Var qh, Var kh, Var vh, int h) {
    Var scaled = t.scale(t.matmul(qh, t.transpose(kh)), inv_scale);
    check_logits(t.val(scaled), where, h);
    Var logits = t.add(scaled, mask_c);
    Var attn = t.softmax_rows(logits);
    return t.matmul(attn, vh);
  });
}

Linear::Linear(const std::string& name, Rng& rng, Eigen::Index in, Eigen::Index out)
    : weight(name + "/W", glorot(rng, in, out)), bias(name + "/b", Mat::Zero(1, out)) {}

Var Linear::apply(Tape& t, Var x) {
  return t.add_rowvec(t.matmul(x, t.param(weight)), t.param(bias));
}

void Linear::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

LayerNorm::LayerNorm(const std::string& name, Eigen::Index d)
    : gain(name + "/g", Mat::Ones(1, d)), bias(name + "/b", Mat::Zero(1, d)) {}

Var LayerNorm::apply(Tape& t, Var x) {
  return t.layernorm_rows(x, t.param(gain), t.param(bias));
}

void LayerNorm::collect(std::vector<Parameter*>& out) {
  out.push_back(&gain);
  out.push_back(&bias);
}

Mlp::Mlp(const std::string& name, Rng& rng, Eigen::Index in, Eigen::Index hidden,
         int n_hidden, Eigen::Index out) {
  Eigen::Index prev = in;
  for (int i = 0; i < n_hidden; ++i) {
    layers.emplace_back(name + "/h" + std::to_string(i), rng, prev, hidden);
    prev = hidden;
  }
  layers.emplace_back(name + "/out", rng, prev, out);
}

Var Mlp::apply(Tape& t, Var x) {
  for (size_t i = 0; i + 1 < layers.size(); ++i) x = t.gelu(layers[i].apply(t, x));
  return layers.back().apply(t, x);
}

void Mlp::collect(std::vector<Parameter*>& out) {
  for (auto& l : layers) l.collect(out);
}

AttentionBlock::AttentionBlock(const std::string& name, Rng& rng, Eigen::Index d,
                               int heads_, AttentionKind kind_)
    : wq(name + "/wq", rng, d, d),
      wk(name + "/wk", rng, d, d),
      wv(name + "/wv", rng, d, d),
      wo(name + "/wo", rng, d, d),
      heads(heads_),
      kind(kind_) {}

Var AttentionBlock::apply(Tape& t, Var q_in, Var kv_in, const std::string& where) {
  Var q = wq.apply(t, q_in);
  Var k = wk.apply(t, kv_in);
  Var v = wv.apply(t, kv_in);
  Var core = kind == AttentionKind::kInverted ? inverted_attention(t, q, k, v, heads, where)
                                              : standard_attention(t, q, k, v, heads, where);
  return wo.apply(t, core);
}

Var AttentionBlock::apply_masked(Tape& t, Var q_in, Var kv_in, const Mat& mask,
                                 const std::string& where) {
  Var q = wq.apply(t, q_in);
  Var k = wk.apply(t, kv_in);
  Var v = wv.apply(t, kv_in);
  return wo.apply(t, masked_attention(t, q, k, v, heads, mask, where));
}

void AttentionBlock::collect(std::vector<Parameter*>& out) {
  wq.collect(out);
  wk.collect(out);
  wv.collect(out);
  wo.collect(out);
}

EncoderBlock::EncoderBlock(const std::string& name, Rng& rng, Eigen::Index d, int heads,
                           Eigen::Index ff_hidden)
    : ln1(name + "/ln1", d),
      ln2(name + "/ln2", d),
      attn(name + "/attn", rng, d, heads, AttentionKind::kStandard),
      ff1(name + "/ff1", rng, d, ff_hidden),
      ff2(name + "/ff2", rng, ff_hidden, d) {}

Var EncoderBlock::apply(Tape& t, Var x, const std::string& where) {
  Var h = ln1.apply(t, x);
  x = t.add(x, attn.apply(t, h, h, where));
  Var f = ff2.apply(t, t.gelu(ff1.apply(t, ln2.apply(t, x))));
  return t.add(x, f);
}

void EncoderBlock::collect(std::vector<Parameter*>& out) {
  ln1.collect(out);
  ln2.collect(out);
  attn.collect(out);
  ff1.collect(out);
  ff2.collect(out);
}

Conv2d::Conv2d(const std::string& name, Rng& rng, Eigen::Index kh_, Eigen::Index kw_,
               Eigen::Index cin_, Eigen::Index cout_, Eigen::Index pad_)
    : weight(name + "/W", glorot(rng, kh_ * kw_ * cin_, cout_)),
      bias(name + "/b", Mat::Zero(1, cout_)),
      kh(kh_), kw(kw_), cin(cin_), cout(cout_), pad(pad_) {}

Var Conv2d::apply(Tape& t, Var x, Eigen::Index batch, Eigen::Index h, Eigen::Index w) {
  Var cols = t.im2col(x, batch, h, w, cin, kh, kw, pad);
  return t.add_rowvec(t.matmul(cols, t.param(weight)), t.param(bias));
}

void Conv2d::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Parameter* p : params_) {
    m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

double Adam::current_lr() const {
  if (cfg_.total_steps <= 0) return cfg_.lr;
  const double frac = std::min(1.0, static_cast<double>(step_count_) /
                                        static_cast<double>(cfg_.total_steps));
  return cfg_.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
}

double Adam::step() {
  double sq = 0.0;
  for (Parameter* p : params_) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  double scale = 1.0;
  if (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;

  const double lr = current_lr();
  ++step_count_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, step_count_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, step_count_);
  for (size_t i = 0; i < params_.size(); ++i) {
    Parameter* p = params_[i];
    Mat g = p->grad * scale;
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    Mat mhat = m_[i] / bc1;
    Mat vhat = v_[i] / bc2;
    p->value.array() -= lr * mhat.array() / (vhat.array().sqrt() + cfg_.eps);
    p->zero_grad();
  }
  return norm;
}

}  // namespace carl::nn
