#include "carl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace carl {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kTau = 2.0 * kPi;
constexpr double kBandLoHz = 100.0;
constexpr double kBandHiHz = 4000.0;
constexpr double kStemRms = 0.1;
constexpr double kPeakCeiling = 1.0;  // above this the scene is rescaled
constexpr double kPeakTarget = 0.9;

void apply_envelope(std::vector<double>& event, EnvelopeShape shape) {
  const int n = static_cast<int>(event.size());
  if (n == 0) return;
  switch (shape) {
    case EnvelopeShape::kFlat: {
      // Short cosine ramps so "flat" still starts and ends cleanly.
      const int ramp = std::min(n / 2, kSampleRate / 200);  // 5 ms
      for (int i = 0; i < ramp; ++i) {
        const double w = 0.5 - 0.5 * std::cos(kPi * (i + 1) / (ramp + 1));
        event[static_cast<size_t>(i)] *= w;
        event[static_cast<size_t>(n - 1 - i)] *= w;
      }
      break;
    }
    case EnvelopeShape::kAttackDecay: {
      const int attack = std::max(1, n / 10);
      for (int i = 0; i < n; ++i) {
        double w;
        if (i < attack) {
          w = static_cast<double>(i + 1) / attack;
        } else {
          // Exponential decay to 0.1 of peak by the end of the event.
          const double frac = static_cast<double>(i - attack) / std::max(1, n - attack);
          w = std::exp(-std::log(10.0) * frac);
        }
        event[static_cast<size_t>(i)] *= w;
      }
      break;
    }
    case EnvelopeShape::kGaussian: {
      const double c = 0.5 * (n - 1);
      const double sigma = std::max(1.0, n / 6.0);
      for (int i = 0; i < n; ++i) {
        const double z = (i - c) / sigma;
        event[static_cast<size_t>(i)] *= std::exp(-0.5 * z * z);
      }
      break;
    }
  }
}

std::vector<double> render_event(const GeneratorParams& p, double freq_hz, int n,
                                 Rng& rng) {
  std::vector<double> event(static_cast<size_t>(n), 0.0);
  const double dt = 1.0 / kSampleRate;
  switch (p.family) {
    case WaveFamily::kTone: {
      const double phase = rng.uniform(0.0, kTau);
      for (int i = 0; i < n; ++i) {
        event[static_cast<size_t>(i)] = std::sin(kTau * freq_hz * i * dt + phase);
      }
      break;
    }
    case WaveFamily::kChirp: {
      // Exponential sweep covering chirp_octaves over the event.
      const double phase = rng.uniform(0.0, kTau);
      const double dur = n * dt;
      const double rate = p.chirp_octaves / dur;  // octaves per second
      const double ln2 = std::log(2.0);
      for (int i = 0; i < n; ++i) {
        const double t = i * dt;
        const double ph = std::abs(rate) < 1e-9
                              ? kTau * freq_hz * t
                              : kTau * freq_hz * (std::exp2(rate * t) - 1.0) / (rate * ln2);
        event[static_cast<size_t>(i)] = std::sin(ph + phase);
      }
      break;
    }
    case WaveFamily::kAmTone: {
      const double phase = rng.uniform(0.0, kTau);
      const double mod_phase = rng.uniform(0.0, kTau);
      for (int i = 0; i < n; ++i) {
        const double t = i * dt;
        const double carrier = std::sin(kTau * freq_hz * t + phase);
        const double mod =
            1.0 - p.am_depth * 0.5 * (1.0 + std::sin(kTau * p.am_rate_hz * t + mod_phase));
        event[static_cast<size_t>(i)] = carrier * mod;
      }
      break;
    }
    case WaveFamily::kNoiseBurst: {
      // White noise through an RBJ constant-peak bandpass at the base frequency.
      const double w0 = kTau * freq_hz / kSampleRate;
      const double sw = std::sin(w0);
      const double alpha =
          sw * std::sinh(0.5 * std::log(2.0) * p.bandwidth_oct * w0 / sw);
      const double a0 = 1.0 + alpha;
      const double b0 = alpha / a0;
      const double b2 = -alpha / a0;
      const double a1 = -2.0 * std::cos(w0) / a0;
      const double a2 = (1.0 - alpha) / a0;
      double x1 = 0.0, x2 = 0.0, y1 = 0.0, y2 = 0.0;
      for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        const double y = b0 * x + b2 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = x;
        y2 = y1;
        y1 = y;
        event[static_cast<size_t>(i)] = y;
      }
      break;
    }
    case WaveFamily::kHarmonicStack: {
      const double nyquist_cap = 0.45 * kSampleRate;
      double amp = 1.0;
      for (int h = 1; h <= p.harmonics; ++h) {
        const double fh = freq_hz * h;
        if (fh >= nyquist_cap) break;
        const double phase = rng.uniform(0.0, kTau);
        for (int i = 0; i < n; ++i) {
          event[static_cast<size_t>(i)] += amp * std::sin(kTau * fh * i * dt + phase);
        }
        amp *= p.harmonic_decay;
      }
      break;
    }
  }
  apply_envelope(event, p.envelope);
  return event;
}

const SourceClass& class_by_id(const std::vector<SourceClass>& vocab, int id) {
  for (const SourceClass& c : vocab) {
    if (c.id == id) return c;
  }
  throw PipelineError("class id " + std::to_string(id) + " not in vocabulary");
}

}  // namespace

const char* wave_family_name(WaveFamily family) {
  switch (family) {
    case WaveFamily::kTone: return "tone";
    case WaveFamily::kChirp: return "chirp";
    case WaveFamily::kAmTone: return "am_tone";
    case WaveFamily::kNoiseBurst: return "noise_burst";
    case WaveFamily::kHarmonicStack: return "harmonic_stack";
  }
  return "unknown";
}

const char* envelope_name(EnvelopeShape shape) {
  switch (shape) {
    case EnvelopeShape::kFlat: return "flat";
    case EnvelopeShape::kAttackDecay: return "attack_decay";
    case EnvelopeShape::kGaussian: return "gaussian";
  }
  return "unknown";
}

std::vector<SourceClass> build_vocabulary(uint64_t seed, int n_seen, int n_unseen) {
  if (n_seen < 2) {
    throw ConfigError("vocabulary needs at least 2 seen classes, got " +
                      std::to_string(n_seen));
  }
  if (n_unseen < 0) {
    throw ConfigError("n_unseen must be non-negative");
  }
  const int l = n_seen + n_unseen;
  Rng rng(derive_seed(seed, "vocab"));

  // Geometric partition of the base-frequency range into one band per class.
  // Band assignment is shuffled so the seen/unseen id split does not line up
  // with a frequency split.
  std::vector<double> edges(static_cast<size_t>(l) + 1);
  const double ratio = kBandHiHz / kBandLoHz;
  for (int i = 0; i <= l; ++i) {
    edges[static_cast<size_t>(i)] = kBandLoHz * std::pow(ratio, static_cast<double>(i) / l);
  }
  std::vector<size_t> band_of = rng.permutation(static_cast<size_t>(l));

  std::vector<SourceClass> vocab(static_cast<size_t>(l));
  for (int id = 0; id < l; ++id) {
    SourceClass& c = vocab[static_cast<size_t>(id)];
    c.id = id;
    c.seen = id < n_seen;
    GeneratorParams& p = c.params;
    p.family = static_cast<WaveFamily>(id % 5);
    p.envelope = static_cast<EnvelopeShape>((id / 5) % 3);
    const size_t b = band_of[static_cast<size_t>(id)];
    // Up to 1% jitter on the band edges keeps classes off exact grid lines.
    p.freq_lo_hz = edges[b] * (1.0 + rng.uniform(-0.01, 0.01));
    p.freq_hi_hz = edges[b + 1] * (1.0 + rng.uniform(-0.01, 0.01));
    p.dur_lo_s = rng.uniform(0.25, 0.4);
    p.dur_hi_s = std::min(0.9, p.dur_lo_s + rng.uniform(0.2, 0.4));
    switch (p.family) {
      case WaveFamily::kTone:
        break;
      case WaveFamily::kChirp:
        p.chirp_octaves = (id % 2 == 0 ? 1.0 : -1.0) * rng.uniform(0.5, 1.5);
        break;
      case WaveFamily::kAmTone:
        p.am_rate_hz = rng.uniform(4.0, 12.0);
        p.am_depth = rng.uniform(0.5, 0.9);
        break;
      case WaveFamily::kNoiseBurst:
        p.bandwidth_oct = rng.uniform(0.3, 0.8);
        break;
      case WaveFamily::kHarmonicStack:
        p.harmonics = 4 + static_cast<int>(rng.below(5));
        p.harmonic_decay = rng.uniform(0.5, 0.8);
        break;
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%03d", wave_family_name(p.family), id);
    c.name = buf;
  }

  for (size_t i = 0; i < vocab.size(); ++i) {
    for (size_t j = i + 1; j < vocab.size(); ++j) {
      const GeneratorParams& a = vocab[i].params;
      const GeneratorParams& b = vocab[j].params;
      if (a.family == b.family && a.freq_lo_hz == b.freq_lo_hz &&
          a.freq_hi_hz == b.freq_hi_hz) {
        throw PipelineError("vocabulary produced coincident classes " +
                            std::to_string(i) + " and " + std::to_string(j));
      }
    }
  }
  return vocab;
}

int sample_polyphony(const std::vector<double>& polyphony_dist, Rng& rng) {
  if (polyphony_dist.empty() ||
      polyphony_dist.size() > static_cast<size_t>(kMaxPolyphony)) {
    throw ConfigError("polyphony distribution must cover 1.." +
                      std::to_string(kMaxPolyphony));
  }
  double total = 0.0;
  for (double p : polyphony_dist) {
    if (p < 0.0) throw ConfigError("polyphony distribution has a negative entry");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw ConfigError("polyphony distribution must sum to 1, got " +
                      std::to_string(total));
  }
  const double u = rng.uniform() * total;
  double acc = 0.0;
  for (size_t i = 0; i < polyphony_dist.size(); ++i) {
    acc += polyphony_dist[i];
    if (u < acc) return static_cast<int>(i) + 1;
  }
  return static_cast<int>(polyphony_dist.size());
}

std::vector<int> sample_labels(const std::vector<SourceClass>& vocab,
                               const std::vector<double>& polyphony_dist, Rng& rng) {
  if (vocab.empty()) throw ConfigError("cannot sample labels from an empty vocabulary");
  int p = sample_polyphony(polyphony_dist, rng);
  p = std::min(p, static_cast<int>(vocab.size()));
  std::vector<size_t> order = rng.permutation(vocab.size());
  std::vector<int> labels(static_cast<size_t>(p));
  for (int i = 0; i < p; ++i) labels[static_cast<size_t>(i)] = vocab[order[static_cast<size_t>(i)]].id;
  std::sort(labels.begin(), labels.end());
  return labels;
}

std::vector<double> render_stem(const SourceClass& cls, Rng& rng) {
  const GeneratorParams& p = cls.params;
  // Base frequency log-uniform within the class band.
  const double u = rng.uniform();
  const double freq = p.freq_lo_hz * std::pow(p.freq_hi_hz / p.freq_lo_hz, u);
  const double dur = rng.uniform(p.dur_lo_s, p.dur_hi_s);
  int n_event = static_cast<int>(std::lround(dur * kSampleRate));
  n_event = std::min(std::max(n_event, 1), kSceneSamples);
  const int onset = static_cast<int>(rng.below(static_cast<uint64_t>(kSceneSamples - n_event + 1)));

  std::vector<double> event = render_event(p, freq, n_event, rng);
  std::vector<double> stem(kSceneSamples, 0.0);
  std::copy(event.begin(), event.end(), stem.begin() + onset);

  double energy = 0.0;
  for (double s : stem) energy += s * s;
  const double rms = std::sqrt(energy / kSceneSamples);
  const double gain = kStemRms / std::max(rms, 1e-12);
  for (double& s : stem) s *= gain;
  return stem;
}

AudioScene synthesize_scene_with_labels(const std::vector<SourceClass>& vocab,
                                        const std::vector<int>& labels, uint64_t seed) {
  if (labels.empty() || labels.size() > static_cast<size_t>(kMaxPolyphony)) {
    throw ConfigError("scene needs 1.." + std::to_string(kMaxPolyphony) +
                      " labels, got " + std::to_string(labels.size()));
  }
  AudioScene scene;
  scene.labels = labels;
  std::sort(scene.labels.begin(), scene.labels.end());
  for (size_t i = 1; i < scene.labels.size(); ++i) {
    if (scene.labels[i] == scene.labels[i - 1]) {
      throw ConfigError("scene labels must be distinct");
    }
  }
  scene.polyphony = static_cast<int>(scene.labels.size());
  scene.seed = seed;

  Rng rng(derive_seed(seed, "render"));
  scene.mixture.assign(kSceneSamples, 0.0);
  for (int label : scene.labels) {
    const SourceClass& cls = class_by_id(vocab, label);
    std::vector<double> stem = render_stem(cls, rng);
    const double snr = rng.uniform(-5.0, 5.0);
    const double gain = std::pow(10.0, snr / 20.0);
    for (double& s : stem) s *= gain;
    for (int i = 0; i < kSceneSamples; ++i) scene.mixture[static_cast<size_t>(i)] += stem[static_cast<size_t>(i)];
    scene.snr_db.push_back(snr);
    scene.stems.push_back(std::move(stem));
  }

  double peak = 0.0;
  for (double s : scene.mixture) peak = std::max(peak, std::abs(s));
  if (peak > kPeakCeiling) {
    // Rescale stems with the mixture so additivity survives normalization.
    const double scale = kPeakTarget / peak;
    for (double& s : scene.mixture) s *= scale;
    for (std::vector<double>& stem : scene.stems) {
      for (double& s : stem) s *= scale;
    }
  }
  return scene;
}

AudioScene synthesize_scene(const std::vector<SourceClass>& vocab,
                            const std::vector<double>& polyphony_dist, uint64_t seed) {
  Rng rng(seed);
  std::vector<int> labels = sample_labels(vocab, polyphony_dist, rng);
  AudioScene scene = synthesize_scene_with_labels(vocab, labels, seed);
  return scene;
}

}  // namespace carl
