// Central finite-difference gradient checking shared by the autodiff, slot,
// decoder, and loss tests. The scalar under test is rebuilt from scratch for
// every probe so the tape never carries state between evaluations.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "carl/autodiff.hpp"
#include "carl/common.hpp"

namespace testutil {

using BuildScalar = std::function<carl::ad::Var(carl::ad::Tape&)>;

inline double eval_scalar(const BuildScalar& build) {
  carl::ad::Tape t;
  carl::ad::Var v = build(t);
  const carl::Mat& m = t.val(v);
  return m(0, 0);
}

// Largest relative error between analytic gradients and central differences
// over every coordinate of every listed parameter. Relative error uses
// |fd - g| / max(|fd| + |g|, floor) so zero-gradient coordinates compare by
// absolute difference against the floor.
inline double max_rel_grad_error(const std::vector<carl::ad::Parameter*>& params,
                                 const BuildScalar& build, double step = 1e-5,
                                 double floor = 1e-6) {
  for (carl::ad::Parameter* p : params) p->zero_grad();
  {
    carl::ad::Tape t;
    carl::ad::Var loss = build(t);
    t.backward(loss);
  }
  std::vector<carl::Mat> analytic;
  analytic.reserve(params.size());
  for (carl::ad::Parameter* p : params) analytic.push_back(p->grad);

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    carl::Mat& value = params[pi]->value;
    for (int i = 0; i < value.rows(); ++i) {
      for (int j = 0; j < value.cols(); ++j) {
        const double keep = value(i, j);
        value(i, j) = keep + step;
        const double up = eval_scalar(build);
        value(i, j) = keep - step;
        const double down = eval_scalar(build);
        value(i, j) = keep;
        const double fd = (up - down) / (2.0 * step);
        const double g = analytic[pi](i, j);
        const double err = std::abs(fd - g) / std::max(std::abs(fd) + std::abs(g), floor);
        worst = std::max(worst, err);
      }
    }
  }
  return worst;
}

}  // namespace testutil
