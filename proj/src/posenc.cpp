#include "carl/posenc.hpp"

#include <cmath>

namespace carl {

Mat positional_encoding_1d(Eigen::Index n, Eigen::Index d) {
  if (d <= 0 || d % 2 != 0) {
    throw ConfigError("1-d positional encoding width must be even, got " +
                      std::to_string(d));
  }
  Mat pe(n, d);
  for (Eigen::Index pos = 0; pos < n; ++pos) {
    for (Eigen::Index i = 0; i < d / 2; ++i) {
      const double omega = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d));
      pe(pos, 2 * i) = std::sin(pos * omega);
      pe(pos, 2 * i + 1) = std::cos(pos * omega);
    }
  }
  return pe;
}

Mat positional_encoding_2d(Eigen::Index n_t, Eigen::Index n_f, Eigen::Index d) {
  if (d <= 0 || d % 4 != 0) {
    throw ConfigError("2-d positional encoding width must be divisible by 4, got " +
                      std::to_string(d));
  }
  const Mat time_pe = positional_encoding_1d(n_t, d / 2);
  const Mat freq_pe = positional_encoding_1d(n_f, d / 2);
  Mat pe(n_t * n_f, d);
  for (Eigen::Index ti = 0; ti < n_t; ++ti) {
    for (Eigen::Index fi = 0; fi < n_f; ++fi) {
      pe.row(ti * n_f + fi) << time_pe.row(ti), freq_pe.row(fi);
    }
  }
  return pe;
}

}  // namespace carl
