// Parametric scene synthesis: a small vocabulary of synth classes (tone,
// chirp, AM tone, filtered noise burst, harmonic stack), mixed into 1 s
// polyphonic scenes at 16 kHz with per-stem level offsets.
#pragma once

#include "carl/common.hpp"

#include <string>
#include <vector>

namespace carl {

constexpr int kSampleRate = 16000;
constexpr int kSceneSamples = 16000;  // 1 s clips
constexpr int kMaxPolyphony = 4;

enum class WaveFamily { kTone, kChirp, kAmTone, kNoiseBurst, kHarmonicStack };
enum class EnvelopeShape { kFlat, kAttackDecay, kGaussian };

const char* wave_family_name(WaveFamily family);
const char* envelope_name(EnvelopeShape shape);

struct GeneratorParams {
  WaveFamily family = WaveFamily::kTone;
  double freq_lo_hz = 100.0;  // base frequency sampled log-uniform in [lo, hi]
  double freq_hi_hz = 200.0;
  double dur_lo_s = 0.3;
  double dur_hi_s = 0.6;
  EnvelopeShape envelope = EnvelopeShape::kFlat;
  // Family-specific knobs; unused ones stay at defaults.
  double chirp_octaves = 0.0;   // signed sweep extent over the event
  double am_rate_hz = 0.0;      // amplitude-modulation rate
  double am_depth = 0.0;        // modulation depth in [0, 1]
  double bandwidth_oct = 0.0;   // noise-burst bandpass width
  int harmonics = 0;            // partial count for harmonic stacks
  double harmonic_decay = 0.0;  // per-partial amplitude ratio
};

struct SourceClass {
  int id = 0;
  std::string name;
  bool seen = true;
  GeneratorParams params;
};

struct AudioScene {
  std::vector<double> mixture;             // kSceneSamples samples
  std::vector<std::vector<double>> stems;  // one per label, same length
  std::vector<int> labels;                 // sorted ascending, stems aligned
  int polyphony = 0;
  std::vector<double> snr_db;              // per-stem level offset
  uint64_t seed = 0;
};

// Deterministic vocabulary: class frequency bands tile [100, 4000] Hz
// geometrically (assignment shuffled so seen/unseen interleave in frequency),
// families and envelopes cycle across ids. Throws ConfigError if n_seen < 2.
std::vector<SourceClass> build_vocabulary(uint64_t seed, int n_seen, int n_unseen);

// polyphony_dist is a categorical over polyphony 1..kMaxPolyphony and must
// sum to 1; entries may be zero.
int sample_polyphony(const std::vector<double>& polyphony_dist, Rng& rng);

// Draws a polyphony from the distribution, then that many distinct class ids
// from vocab; returns them sorted ascending.
std::vector<int> sample_labels(const std::vector<SourceClass>& vocab,
                               const std::vector<double>& polyphony_dist, Rng& rng);

// Renders one stem for the class, placed at a random onset inside the clip,
// RMS-normalized to 0.1 before the caller applies its level offset.
std::vector<double> render_stem(const SourceClass& cls, Rng& rng);

// Renders the given label set: one stem per label (in label order), level
// offsets uniform in [-5, +5] dB, sample-wise sum; if the sum would clip,
// mixture and stems are rescaled together to a 0.9 peak.
AudioScene synthesize_scene_with_labels(const std::vector<SourceClass>& vocab,
                                        const std::vector<int>& labels, uint64_t seed);

// Label sampling and rendering from a single seed.
AudioScene synthesize_scene(const std::vector<SourceClass>& vocab,
                            const std::vector<double>& polyphony_dist, uint64_t seed);

}  // namespace carl
