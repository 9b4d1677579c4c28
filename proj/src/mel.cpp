#include "carl/mel.hpp"

#include <cmath>
#include <complex>
#include <vector>

namespace carl {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Iterative radix-2 FFT, real input zero-padded to fft_size by the caller.
void fft_radix2(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * 3.14159265358979323846 / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = a[i + k];
        std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

}  // namespace

MelFrontend::MelFrontend(MelParams params) : params_(params) {
  fft_size_ = next_pow2(params_.win_length);
  // Periodic Hann window.
  window_.resize(params_.win_length);
  for (int n = 0; n < params_.win_length; ++n) {
    window_(n) = 0.5 - 0.5 * std::cos(2.0 * 3.14159265358979323846 * n / params_.win_length);
  }
  // Triangular mel filters on power-spectrum bins.
  const int n_bins = fft_size_ / 2 + 1;
  const int m = params_.mel_bins;
  filterbank_ = Mat::Zero(m, n_bins);
  const double mel_lo = hz_to_mel(params_.fmin_hz);
  const double mel_hi = hz_to_mel(params_.fmax_hz);
  std::vector<double> edges(static_cast<size_t>(m) + 2);
  for (int i = 0; i < m + 2; ++i) {
    edges[static_cast<size_t>(i)] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (m + 1));
  }
  const double bin_hz = static_cast<double>(params_.sample_rate) / fft_size_;
  for (int i = 0; i < m; ++i) {
    const double lo = edges[static_cast<size_t>(i)];
    const double c = edges[static_cast<size_t>(i) + 1];
    const double hi = edges[static_cast<size_t>(i) + 2];
    for (int k = 0; k < n_bins; ++k) {
      const double f = k * bin_hz;
      double w = 0.0;
      if (f > lo && f < c) w = (f - lo) / (c - lo);
      else if (f >= c && f < hi) w = (hi - f) / (hi - c);
      if (w > 0.0) filterbank_(i, k) = w;
    }
  }
}

MelSpectrogram MelFrontend::compute(const std::vector<double>& waveform,
                                    int sample_rate) const {
  if (sample_rate != params_.sample_rate) {
    throw ConfigError("mel frontend expects " + std::to_string(params_.sample_rate) +
                      " Hz input, got " + std::to_string(sample_rate));
  }
  const int t = mel_frame_count(static_cast<int>(waveform.size()), params_);
  const int n_bins = fft_size_ / 2 + 1;
  MelSpectrogram out;
  out.t = t;
  out.f = params_.mel_bins;
  out.params = params_;
  out.values = Mat::Zero(t, params_.mel_bins);

  std::vector<std::complex<double>> buf(static_cast<size_t>(fft_size_));
  Vec power(n_bins);
  for (int frame = 0; frame < t; ++frame) {
    const int off = frame * params_.hop_length;
    for (int n = 0; n < fft_size_; ++n) {
      const double s = n < params_.win_length
                           ? waveform[static_cast<size_t>(off + n)] * window_(n)
                           : 0.0;
      buf[static_cast<size_t>(n)] = {s, 0.0};
    }
    fft_radix2(buf);
    for (int k = 0; k < n_bins; ++k) power(k) = std::norm(buf[static_cast<size_t>(k)]);
    Vec mel = filterbank_ * power;
    for (int b = 0; b < params_.mel_bins; ++b) {
      out.values(frame, b) = std::log(mel(b) + params_.log_floor);
    }
  }
  return out;
}

MelSpectrogram mel_frontend(const std::vector<double>& waveform, int sample_rate,
                            const MelParams& params) {
  return MelFrontend(params).compute(waveform, sample_rate);
}

}  // namespace carl
