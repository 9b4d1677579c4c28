// Fixed sinusoidal positional encodings, 1-D and a time/frequency 2-D split.
#pragma once

#include "carl/common.hpp"

namespace carl {

// n x d table; channel pairs (2i, 2i+1) hold sin/cos at frequency
// 10000^(-2i/d). d must be even.
Mat positional_encoding_1d(Eigen::Index n, Eigen::Index d);

// (n_t*n_f) x d table in row-major (time, freq) order: the first d/2 channels
// encode the time index, the rest the frequency index. d must be divisible
// by 4 so each half gets whole sin/cos pairs.
Mat positional_encoding_2d(Eigen::Index n_t, Eigen::Index n_f, Eigen::Index d);

}  // namespace carl
