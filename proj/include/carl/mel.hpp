// Log-mel spectrogram frontend: 16 kHz input, 25 ms Hann window, 10 ms hop,
// no-padding framing, power-spectrum mel filterbank, additive log floor.
#pragma once

#include "carl/common.hpp"

#include <vector>

namespace carl {

struct MelParams {
  int sample_rate = 16000;
  int win_length = 400;  // 25 ms
  int hop_length = 160;  // 10 ms
  int mel_bins = 64;
  double fmin_hz = 0.0;
  double fmax_hz = 8000.0;
  double log_floor = 1e-5;  // values = log(mel_energy + log_floor)
};

struct MelSpectrogram {
  Mat values;  // t x f, log-mel
  int t = 0;
  int f = 0;
  MelParams params;
};

// Frame count under the no-padding convention.
inline int mel_frame_count(int samples, const MelParams& p) {
  if (samples < p.win_length) return 0;
  return (samples - p.win_length) / p.hop_length + 1;
}

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Precomputes the window, FFT, and filterbank once; compute() is reentrant
// in the sense of being stateless across calls (the FFT object is internal
// scratch, so share one frontend per thread).
class MelFrontend {
 public:
  explicit MelFrontend(MelParams params);

  // Throws ConfigError if sample_rate does not match the configured one.
  MelSpectrogram compute(const std::vector<double>& waveform, int sample_rate) const;

  const MelParams& params() const { return params_; }
  int fft_size() const { return fft_size_; }
  const Mat& filterbank() const { return filterbank_; }  // mel_bins x (fft/2+1)

 private:
  MelParams params_;
  int fft_size_;
  Vec window_;
  Mat filterbank_;
};

// One-shot convenience for tests and tools.
MelSpectrogram mel_frontend(const std::vector<double>& waveform, int sample_rate,
                            const MelParams& params = MelParams{});

}  // namespace carl
