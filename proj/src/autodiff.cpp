#include "carl/autodiff.hpp"

#include <cmath>

namespace carl::ad {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

inline double phi_cdf(double x) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)); }
inline double phi_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }
}  // namespace

Var Tape::push(Mat value, bool needs_grad, std::function<void(Tape&, const Mat&)> back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::accum(int idx, const Mat& g) {
  Node& n = nodes_[static_cast<size_t>(idx)];
  if (!n.needs_grad) return;
  if (!n.grad_live) {
    n.grad = g;
    n.grad_live = true;
  } else {
    n.grad += g;
  }
}

const Mat& Tape::grad(Var v) const {
  const Node& n = nodes_[static_cast<size_t>(v.idx)];
  if (!n.grad_live) {
    throw PipelineError("autodiff: gradient requested for a node backward() never reached");
  }
  return n.grad;
}

Var Tape::constant(Mat v) { return push(std::move(v), false, nullptr); }

Var Tape::leaf(Mat v) { return push(std::move(v), true, nullptr); }

Var Tape::param(Parameter& p) {
  Var v = push(p.value, true, nullptr);
  nodes_[static_cast<size_t>(v.idx)].parameter = &p;
  return v;
}

Var Tape::matmul(Var a, Var b) {
  Mat out(val(a).rows(), val(b).cols());
  out.noalias() = val(a) * val(b);
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Mat& g) {
    if (t.needs(a)) t.accum(a.idx, g * t.val(b).transpose());
    if (t.needs(b)) t.accum(b.idx, t.val(a).transpose() * g);
  });
}

Var Tape::add(Var a, Var b) {
  return push(val(a) + val(b), needs(a) || needs(b), [a, b](Tape& t, const Mat& g) {
    if (t.needs(a)) t.accum(a.idx, g);
    if (t.needs(b)) t.accum(b.idx, g);
  });
}

Var Tape::sub(Var a, Var b) {
  return push(val(a) - val(b), needs(a) || needs(b), [a, b](Tape& t, const Mat& g) {
    if (t.needs(a)) t.accum(a.idx, g);
    if (t.needs(b)) t.accum(b.idx, -g);
  });
}

Var Tape::mul(Var a, Var b) {
  return push(val(a).cwiseProduct(val(b)), needs(a) || needs(b), [a, b](Tape& t, const Mat& g) {
    if (t.needs(a)) t.accum(a.idx, g.cwiseProduct(t.val(b)));
    if (t.needs(b)) t.accum(b.idx, g.cwiseProduct(t.val(a)));
  });
}

Var Tape::div(Var a, Var b) {
  return push(val(a).cwiseQuotient(val(b)), needs(a) || needs(b), [a, b](Tape& t, const Mat& g) {
    if (t.needs(a)) t.accum(a.idx, g.cwiseQuotient(t.val(b)));
    if (t.needs(b)) {
      Mat db = -g.cwiseProduct(t.val(a)).cwiseQuotient(t.val(b).cwiseProduct(t.val(b)));
      t.accum(b.idx, db);
    }
  });
}

Var Tape::add_rowvec(Var a, Var rv) {
  Mat out = val(a);
  out.rowwise() += val(rv).row(0);
  return push(std::move(out), needs(a) || needs(rv), [a, rv](Tape& t, const Mat& g) {
    if (t.needs(a)) t.accum(a.idx, g);
    if (t.needs(rv)) t.accum(rv.idx, g.colwise().sum());
  });
}

Var Tape::mul_colvec(Var a, Var cv) {
  Mat out = val(a);
  out.array().colwise() *= val(cv).col(0).array();
  return push(std::move(out), needs(a) || needs(cv), [a, cv](Tape& t, const Mat& g) {
    if (t.needs(a)) {
      Mat da = g;
      da.array().colwise() *= t.val(cv).col(0).array();
      t.accum(a.idx, da);
    }
    if (t.needs(cv)) {
      Mat dcv = g.cwiseProduct(t.val(a)).rowwise().sum();
      t.accum(cv.idx, dcv);
    }
  });
}

Var Tape::broadcast_row(Var rv, Eigen::Index n) {
  Mat out = val(rv).row(0).replicate(n, 1);
  return push(std::move(out), needs(rv), [rv](Tape& t, const Mat& g) {
    if (t.needs(rv)) t.accum(rv.idx, g.colwise().sum());
  });
}

Var Tape::repeat_each_row(Var a, Eigen::Index times) {
  const Mat& v = val(a);
  Mat out(v.rows() * times, v.cols());
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    out.middleRows(i * times, times) = v.row(i).replicate(times, 1);
  }
  return push(std::move(out), needs(a), [a, times](Tape& t, const Mat& g) {
    if (!t.needs(a)) return;
    const Mat& v = t.val(a);
    Mat da(v.rows(), v.cols());
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      da.row(i) = g.middleRows(i * times, times).colwise().sum();
    }
    t.accum(a.idx, da);
  });
}

Var Tape::sum_all(Var a) {
  Mat out(1, 1);
  out(0, 0) = val(a).sum();
  return push(std::move(out), needs(a), [a](Tape& t, const Mat& g) {
    if (t.needs(a)) {
      t.accum(a.idx, Mat::Constant(t.val(a).rows(), t.val(a).cols(), g(0, 0)));
    }
  });
}

Var Tape::mean_all(Var a) {
  const double n = static_cast<double>(val(a).size());
  Mat out(1, 1);
  out(0, 0) = val(a).sum() / n;
  return push(std::move(out), needs(a), [a, n](Tape& t, const Mat& g) {
    if (t.needs(a)) {
      t.accum(a.idx, Mat::Constant(t.val(a).rows(), t.val(a).cols(), g(0, 0) / n));
    }
  });
}

Var Tape::colwise_sum(Var a) {
  Mat out = val(a).colwise().sum();
  return push(std::move(out), needs(a), [a](Tape& t, const Mat& g) {
    if (t.needs(a)) t.accum(a.idx, g.row(0).replicate(t.val(a).rows(), 1));
  });
}

Var Tape::rowwise_sum(Var a) {
  Mat out = val(a).rowwise().sum();
  return push(std::move(out), needs(a), [a](Tape& t, const Mat& g) {
    if (t.needs(a)) t.accum(a.idx, g.col(0).replicate(1, t.val(a).cols()));
  });
}

Var Tape::sum_row_blocks(Var a, Eigen::Index blocks) {
  const Mat& v = val(a);
  const Eigen::Index rows = v.rows() / blocks;
  Mat out = Mat::Zero(rows, v.cols());
  for (Eigen::Index b = 0; b < blocks; ++b) out += v.middleRows(b * rows, rows);
  return push(std::move(out), needs(a), [a, blocks, rows](Tape& t, const Mat& g) {
    if (!t.needs(a)) return;
    Mat da(rows * blocks, g.cols());
    for (Eigen::Index b = 0; b < blocks; ++b) da.middleRows(b * rows, rows) = g;
    t.accum(a.idx, da);
  });
}

Var Tape::transpose(Var a) {
  Mat out = val(a).transpose();
  return push(std::move(out), needs(a), [a](Tape& t, const Mat& g) {
    if (t.needs(a)) t.accum(a.idx, g.transpose());
  });
}

Var Tape::reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
  const Mat& v = val(a);
  Mat out = Eigen::Map<const Mat>(v.data(), rows, cols);
  return push(std::move(out), needs(a), [a](Tape& t, const Mat& g) {
    if (!t.needs(a)) return;
    const Mat& v = t.val(a);
    t.accum(a.idx, Mat(Eigen::Map<const Mat>(g.data(), v.rows(), v.cols())));
  });
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  Eigen::Index rows = 0;
  bool ng = false;
  for (Var p : parts) {
    rows += val(p).rows();
    ng = ng || needs(p);
  }
  Mat out(rows, val(parts[0]).cols());
  Eigen::Index r = 0;
  for (Var p : parts) {
    out.middleRows(r, val(p).rows()) = val(p);
    r += val(p).rows();
  }
  return push(std::move(out), ng, [parts](Tape& t, const Mat& g) {
    Eigen::Index r = 0;
    for (Var p : parts) {
      Eigen::Index n = t.val(p).rows();
      if (t.needs(p)) t.accum(p.idx, g.middleRows(r, n));
      r += n;
    }
  });
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  Eigen::Index cols = 0;
  bool ng = false;
  for (Var p : parts) {
    cols += val(p).cols();
    ng = ng || needs(p);
  }
  Mat out(val(parts[0]).rows(), cols);
  Eigen::Index c = 0;
  for (Var p : parts) {
    out.middleCols(c, val(p).cols()) = val(p);
    c += val(p).cols();
  }
  return push(std::move(out), ng, [parts](Tape& t, const Mat& g) {
    Eigen::Index c = 0;
    for (Var p : parts) {
      Eigen::Index n = t.val(p).cols();
      if (t.needs(p)) t.accum(p.idx, g.middleCols(c, n));
      c += n;
    }
  });
}

Var Tape::slice_rows(Var a, Eigen::Index r0, Eigen::Index len) {
  Mat out = val(a).middleRows(r0, len);
  return push(std::move(out), needs(a), [a, r0, len](Tape& t, const Mat& g) {
    if (!t.needs(a)) return;
    Mat da = Mat::Zero(t.val(a).rows(), t.val(a).cols());
    da.middleRows(r0, len) = g;
    t.accum(a.idx, da);
  });
}

Var Tape::slice_cols(Var a, Eigen::Index c0, Eigen::Index len) {
  Mat out = val(a).middleCols(c0, len);
  return push(std::move(out), needs(a), [a, c0, len](Tape& t, const Mat& g) {
    if (!t.needs(a)) return;
    Mat da = Mat::Zero(t.val(a).rows(), t.val(a).cols());
    da.middleCols(c0, len) = g;
    t.accum(a.idx, da);
  });
}

Var Tape::gather_rows(Var a, std::vector<Eigen::Index> idx) {
  const Mat& v = val(a);
  Mat out(static_cast<Eigen::Index>(idx.size()), v.cols());
  for (size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = v.row(idx[i]);
  return push(std::move(out), needs(a), [a, idx = std::move(idx)](Tape& t, const Mat& g) {
    if (!t.needs(a)) return;
    Mat da = Mat::Zero(t.val(a).rows(), t.val(a).cols());
    for (size_t i = 0; i < idx.size(); ++i) da.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accum(a.idx, da);
  });
}

Var Tape::scale(Var a, double c) {
  return push(val(a) * c, needs(a), [a, c](Tape& t, const Mat& g) {
    if (t.needs(a)) t.accum(a.idx, g * c);
  });
}

Var Tape::add_scalar(Var a, double c) {
  Mat out = (val(a).array() + c).matrix();
  return push(std::move(out), needs(a), [a](Tape& t, const Mat& g) {
    if (t.needs(a)) t.accum(a.idx, g);
  });
}

Var Tape::softmax_rows(Var a) {
  Mat out = val(a);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double m = out.row(i).maxCoeff();
    out.row(i) = (out.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  Var v = push(std::move(out), needs(a), nullptr);
  nodes_[static_cast<size_t>(v.idx)].back = [a, v](Tape& t, const Mat& g) {
    if (!t.needs(a)) return;
    const Mat& y = t.val(v);
    Mat da(y.rows(), y.cols());
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const double dot = g.row(i).cwiseProduct(y.row(i)).sum();
      da.row(i) = y.row(i).cwiseProduct((g.row(i).array() - dot).matrix());
    }
    t.accum(a.idx, da);
  };
  return v;
}

Var Tape::softmax_cols(Var a) {
  Mat out = val(a);
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    const double m = out.col(j).maxCoeff();
    out.col(j) = (out.col(j).array() - m).exp();
    out.col(j) /= out.col(j).sum();
  }
  Var v = push(std::move(out), needs(a), nullptr);
  nodes_[static_cast<size_t>(v.idx)].back = [a, v](Tape& t, const Mat& g) {
    if (!t.needs(a)) return;
    const Mat& y = t.val(v);
    Mat da(y.rows(), y.cols());
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      const double dot = g.col(j).cwiseProduct(y.col(j)).sum();
      da.col(j) = y.col(j).cwiseProduct((g.col(j).array() - dot).matrix());
    }
    t.accum(a.idx, da);
  };
  return v;
}

Var Tape::log_softmax_rows(Var a) {
  Mat out = val(a);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double m = out.row(i).maxCoeff();
    const double lse = m + std::log((out.row(i).array() - m).exp().sum());
    out.row(i).array() -= lse;
  }
  Var v = push(std::move(out), needs(a), nullptr);
  nodes_[static_cast<size_t>(v.idx)].back = [a, v](Tape& t, const Mat& g) {
    if (!t.needs(a)) return;
    const Mat& y = t.val(v);
    Mat da(y.rows(), y.cols());
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const double gsum = g.row(i).sum();
      da.row(i) = g.row(i) - y.row(i).array().exp().matrix() * gsum;
    }
    t.accum(a.idx, da);
  };
  return v;
}

Var Tape::gelu(Var a) {
  Mat out = val(a).unaryExpr([](double x) { return x * phi_cdf(x); });
  return push(std::move(out), needs(a), [a](Tape& t, const Mat& g) {
    if (!t.needs(a)) return;
    Mat d = t.val(a).unaryExpr([](double x) { return phi_cdf(x) + x * phi_pdf(x); });
    t.accum(a.idx, g.cwiseProduct(d));
  });
}

Var Tape::sigmoid(Var a) {
  Mat out = val(a).unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  Var v = push(std::move(out), needs(a), nullptr);
  nodes_[static_cast<size_t>(v.idx)].back = [a, v](Tape& t, const Mat& g) {
    if (!t.needs(a)) return;
    const Mat& y = t.val(v);
    t.accum(a.idx, g.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  };
  return v;
}

Var Tape::exp(Var a) {
  Mat out = val(a).array().exp();
  Var v = push(std::move(out), needs(a), nullptr);
  nodes_[static_cast<size_t>(v.idx)].back = [a, v](Tape& t, const Mat& g) {
    if (t.needs(a)) t.accum(a.idx, g.cwiseProduct(t.val(v)));
  };
  return v;
}

Var Tape::log_guard(Var a, double floor) {
  Mat out = val(a).unaryExpr([floor](double x) { return std::log(x < floor ? floor : x); });
  return push(std::move(out), needs(a), [a, floor](Tape& t, const Mat& g) {
    if (!t.needs(a)) return;
    Mat d = t.val(a).unaryExpr([floor](double x) { return x < floor ? 0.0 : 1.0 / x; });
    t.accum(a.idx, g.cwiseProduct(d));
  });
}

Var Tape::relu(Var a) {
  Mat out = val(a).cwiseMax(0.0);
  return push(std::move(out), needs(a), [a](Tape& t, const Mat& g) {
    if (!t.needs(a)) return;
    Mat d = (t.val(a).array() > 0.0).cast<double>().matrix();
    t.accum(a.idx, g.cwiseProduct(d));
  });
}

Var Tape::max_scalar(Var a, double c) {
  Mat out = val(a).cwiseMax(c);
  return push(std::move(out), needs(a), [a, c](Tape& t, const Mat& g) {
    if (!t.needs(a)) return;
    Mat d = (t.val(a).array() > c).cast<double>().matrix();
    t.accum(a.idx, g.cwiseProduct(d));
  });
}

Var Tape::clamp_max(Var a, double cap) {
  Mat out = val(a).cwiseMin(cap);
  return push(std::move(out), needs(a), [a, cap](Tape& t, const Mat& g) {
    if (!t.needs(a)) return;
    Mat d = (t.val(a).array() < cap).cast<double>().matrix();
    t.accum(a.idx, g.cwiseProduct(d));
  });
}

Var Tape::reciprocal(Var a) {
  Mat out = val(a).cwiseInverse();
  Var v = push(std::move(out), needs(a), nullptr);
  nodes_[static_cast<size_t>(v.idx)].back = [a, v](Tape& t, const Mat& g) {
    if (!t.needs(a)) return;
    const Mat& y = t.val(v);
    t.accum(a.idx, -g.cwiseProduct(y.cwiseProduct(y)));
  };
  return v;
}

Var Tape::sqrt_guard(Var a, double eps) {
  Mat out = val(a).cwiseMax(eps).cwiseSqrt();
  Var v = push(std::move(out), needs(a), nullptr);
  nodes_[static_cast<size_t>(v.idx)].back = [a, v, eps](Tape& t, const Mat& g) {
    if (!t.needs(a)) return;
    Mat mask = (t.val(a).array() > eps).cast<double>().matrix();
    Mat d = mask.cwiseQuotient(2.0 * t.val(v));
    t.accum(a.idx, g.cwiseProduct(d));
  };
  return v;
}

Var Tape::layernorm_rows(Var x, Var gain, Var bias, double eps) {
  const Mat& v = val(x);
  const Eigen::Index d = v.cols();
  Mat xhat(v.rows(), d);
  Vec inv_std(v.rows());
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    const double mu = v.row(i).mean();
    const double var = (v.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (v.row(i).array() - mu) * inv_std(i);
  }
  Mat out = xhat;
  out.array().rowwise() *= val(gain).row(0).array();
  out.rowwise() += val(bias).row(0);
  bool ng = needs(x) || needs(gain) || needs(bias);
  auto xhat_p = std::make_shared<Mat>(std::move(xhat));
  auto istd_p = std::make_shared<Vec>(std::move(inv_std));
  return push(std::move(out), ng, [x, gain, bias, xhat_p, istd_p](Tape& t, const Mat& g) {
    const Eigen::Index d = g.cols();
    if (t.needs(bias)) t.accum(bias.idx, g.colwise().sum());
    if (t.needs(gain)) t.accum(gain.idx, g.cwiseProduct(*xhat_p).colwise().sum());
    if (t.needs(x)) {
      Mat dxhat = g;
      dxhat.array().rowwise() *= t.val(gain).row(0).array();
      Mat dx(g.rows(), d);
      for (Eigen::Index i = 0; i < g.rows(); ++i) {
        const double m1 = dxhat.row(i).mean();
        const double m2 = dxhat.row(i).cwiseProduct(xhat_p->row(i)).mean();
        dx.row(i) = ((dxhat.row(i).array() - m1) - xhat_p->row(i).array() * m2) * (*istd_p)(i);
      }
      t.accum(x.idx, dx);
    }
  });
}

Var Tape::im2col(Var a, Eigen::Index batch, Eigen::Index h, Eigen::Index w,
                 Eigen::Index c, Eigen::Index kh, Eigen::Index kw, Eigen::Index pad) {
  const Mat& v = val(a);
  const Eigen::Index ho = h + 2 * pad - kh + 1;
  const Eigen::Index wo = w + 2 * pad - kw + 1;
  if (ho < 1 || wo < 1) throw PipelineError("im2col: kernel larger than padded input");
  const Eigen::Index patch = kh * kw;
  // Source row per (output position, kernel tap) within one image; -1 = zero pad.
  auto src = std::make_shared<std::vector<Eigen::Index>>(
      static_cast<size_t>(ho * wo * patch), -1);
  for (Eigen::Index yo = 0; yo < ho; ++yo) {
    for (Eigen::Index xo = 0; xo < wo; ++xo) {
      for (Eigen::Index dy = 0; dy < kh; ++dy) {
        for (Eigen::Index dx = 0; dx < kw; ++dx) {
          const Eigen::Index yi = yo - pad + dy;
          const Eigen::Index xi = xo - pad + dx;
          if (yi >= 0 && yi < h && xi >= 0 && xi < w) {
            (*src)[static_cast<size_t>(((yo * wo + xo) * kh + dy) * kw + dx)] = yi * w + xi;
          }
        }
      }
    }
  }
  Mat out = Mat::Zero(batch * ho * wo, patch * c);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const Eigen::Index in_off = b * h * w;
    const Eigen::Index out_off = b * ho * wo;
    for (Eigen::Index pos = 0; pos < ho * wo; ++pos) {
      for (Eigen::Index tap = 0; tap < patch; ++tap) {
        const Eigen::Index s = (*src)[static_cast<size_t>(pos * patch + tap)];
        if (s >= 0) out.block(out_off + pos, tap * c, 1, c) = v.block(in_off + s, 0, 1, c);
      }
    }
  }
  return push(std::move(out), needs(a),
              [a, src, batch, h, w, c, ho, wo, patch](Tape& t, const Mat& g) {
    if (!t.needs(a)) return;
    Mat da = Mat::Zero(batch * h * w, c);
    for (Eigen::Index b = 0; b < batch; ++b) {
      const Eigen::Index in_off = b * h * w;
      const Eigen::Index out_off = b * ho * wo;
      for (Eigen::Index pos = 0; pos < ho * wo; ++pos) {
        for (Eigen::Index tap = 0; tap < patch; ++tap) {
          const Eigen::Index s = (*src)[static_cast<size_t>(pos * patch + tap)];
          if (s >= 0) da.block(in_off + s, 0, 1, c) += g.block(out_off + pos, tap * c, 1, c);
        }
      }
    }
    t.accum(a.idx, da);
  });
}

Var Tape::zero_stuff_interior(Var a, Eigen::Index batch, Eigen::Index h,
                              Eigen::Index w, Eigen::Index c) {
  const Mat& v = val(a);
  const Eigen::Index ho = 2 * h - 1;
  const Eigen::Index wo = 2 * w - 1;
  Mat out = Mat::Zero(batch * ho * wo, c);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index y = 0; y < h; ++y) {
      for (Eigen::Index x = 0; x < w; ++x) {
        out.row(b * ho * wo + (2 * y) * wo + 2 * x) = v.row(b * h * w + y * w + x);
      }
    }
  }
  return push(std::move(out), needs(a), [a, batch, h, w, ho, wo](Tape& t, const Mat& g) {
    if (!t.needs(a)) return;
    Mat da(batch * h * w, g.cols());
    for (Eigen::Index b = 0; b < batch; ++b) {
      for (Eigen::Index y = 0; y < h; ++y) {
        for (Eigen::Index x = 0; x < w; ++x) {
          da.row(b * h * w + y * w + x) = g.row(b * ho * wo + (2 * y) * wo + 2 * x);
        }
      }
    }
    t.accum(a.idx, da);
  });
}

void Tape::backward(Var root) {
  Node& r = nodes_[static_cast<size_t>(root.idx)];
  if (r.value.rows() != 1 || r.value.cols() != 1) {
    throw PipelineError("autodiff: backward root must be a scalar");
  }
  r.grad = Mat::Ones(1, 1);
  r.grad_live = true;
  for (int i = root.idx; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.grad_live) continue;
    if (n.back) n.back(*this, n.grad);
    if (n.parameter != nullptr) n.parameter->grad += n.grad;
  }
}

}  // namespace carl::ad
