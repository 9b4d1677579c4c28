// Reverse-mode autodiff tape over dense row-major matrices.
//
// A Tape lives for one forward/backward pass. Leaves are constants (no
// gradient), plain leaves (gradient readable afterwards), or parameters
// (gradient accumulates into the Parameter's grad buffer so an optimizer
// can step it). Ops record closures; backward() replays them in reverse.
#pragma once

#include "carl/common.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace carl::ad {

// A trainable tensor. Lives outside any tape; grad is accumulated across
// tape backward passes until the optimizer consumes and clears it.
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;

  Parameter() = default;
  Parameter(std::string n, Mat v) : name(std::move(n)), value(std::move(v)) {
    grad = Mat::Zero(value.rows(), value.cols());
  }
  void zero_grad() { grad.setZero(); }
};

struct Var {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // ----- leaves -----
  Var constant(Mat v);
  Var leaf(Mat v);               // tracked; grad readable via grad()
  Var param(Parameter& p);       // tracked; backward adds into p.grad

  const Mat& val(Var v) const { return nodes_[static_cast<size_t>(v.idx)].value; }
  const Mat& grad(Var v) const;  // valid after backward()

  // ----- binary -----
  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);         // elementwise
  Var div(Var a, Var b);         // elementwise; caller guards b away from 0

  // ----- broadcasts -----
  Var add_rowvec(Var a, Var rv);          // rv: 1 x d added to every row
  Var mul_colvec(Var a, Var cv);          // cv: n x 1 scaling every row
  Var broadcast_row(Var rv, Eigen::Index n);       // 1 x d -> n x d
  Var repeat_each_row(Var a, Eigen::Index times);  // k x d -> (k*times) x d, blockwise

  // ----- reductions -----
  Var sum_all(Var a);    // 1 x 1
  Var mean_all(Var a);   // 1 x 1
  Var colwise_sum(Var a);  // 1 x d
  Var rowwise_sum(Var a);  // n x 1
  // a has B equal blocks of rows; returns elementwise sum over blocks.
  Var sum_row_blocks(Var a, Eigen::Index blocks);

  // ----- shape -----
  Var transpose(Var a);
  Var reshape(Var a, Eigen::Index rows, Eigen::Index cols);  // row-major reinterpret
  Var concat_rows(const std::vector<Var>& parts);
  Var concat_cols(const std::vector<Var>& parts);
  Var slice_rows(Var a, Eigen::Index r0, Eigen::Index len);
  Var slice_cols(Var a, Eigen::Index c0, Eigen::Index len);
  Var gather_rows(Var a, std::vector<Eigen::Index> idx);

  // ----- unary -----
  Var scale(Var a, double c);
  Var add_scalar(Var a, double c);
  Var softmax_rows(Var a);
  Var softmax_cols(Var a);
  Var log_softmax_rows(Var a);
  Var gelu(Var a);     // exact: x * Phi(x)
  Var sigmoid(Var a);
  Var exp(Var a);
  Var log_guard(Var a, double floor);  // log(max(a, floor))
  Var relu(Var a);
  Var max_scalar(Var a, double c);
  Var clamp_max(Var a, double cap);
  Var reciprocal(Var a);
  Var sqrt_guard(Var a, double eps);   // sqrt(max(a, eps))

  // x: n x d, gain/bias: 1 x d; per-row normalization.
  Var layernorm_rows(Var x, Var gain, Var bias, double eps = 1e-5);

  // ----- convolution support -----
  // a holds `batch` images stacked rowwise, each H*W rows by C cols
  // (row = y*W + x). Output: batch*Ho*Wo rows by kh*kw*C cols, stride 1.
  Var im2col(Var a, Eigen::Index batch, Eigen::Index h, Eigen::Index w,
             Eigen::Index c, Eigen::Index kh, Eigen::Index kw, Eigen::Index pad);
  // Insert zeros between pixels: each H x W image becomes (2H-1) x (2W-1).
  Var zero_stuff_interior(Var a, Eigen::Index batch, Eigen::Index h,
                          Eigen::Index w, Eigen::Index c);

  void backward(Var root);

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    bool grad_live = false;
    Parameter* parameter = nullptr;
    std::function<void(Tape&, const Mat&)> back;  // empty for leaves
  };

  Var push(Mat value, bool needs_grad, std::function<void(Tape&, const Mat&)> back);
  void accum(int idx, const Mat& g);
  bool needs(Var v) const { return nodes_[static_cast<size_t>(v.idx)].needs_grad; }

  std::vector<Node> nodes_;
};

}  // namespace carl::ad
