// On-disk dataset: per-split JSONL manifests, raw float32 waveforms, the
// vocabulary, and a meta record tying everything to one root seed.
#pragma once

#include "carl/synth.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace carl {

struct ClipRecord {
  int id = 0;
  std::vector<int> labels;
  int polyphony = 0;
  uint64_t seed = 0;      // render seed for this clip
  std::string path;       // waveform file, relative to the dataset root
  std::string probe;      // eval split only: "train" or "test" half
};

struct DatasetSizes {
  int train = 0;
  int val = 0;
  int eval = 0;
};

// Generates and persists a dataset. The train and val splits draw labels from
// seen classes only; eval draws from the full vocabulary and is split into
// interleaved probe-train/probe-test halves, each guaranteed to contain every
// unseen class at least once. Refuses to touch an existing directory unless
// force is set (which removes it first).
void make_dataset(const std::filesystem::path& dir,
                  const std::vector<SourceClass>& vocab, const DatasetSizes& sizes,
                  const std::vector<double>& polyphony_dist, uint64_t seed,
                  bool force = false);

class Dataset {
 public:
  const std::filesystem::path& dir() const { return dir_; }
  const std::vector<SourceClass>& vocab() const { return vocab_; }
  int n_seen() const { return n_seen_; }
  int n_unseen() const { return n_unseen_; }
  uint64_t root_seed() const { return root_seed_; }
  const std::string& fingerprint() const { return fingerprint_; }

  bool has_split(const std::string& split) const { return splits_.count(split) > 0; }
  const std::vector<ClipRecord>& split(const std::string& split) const;

  std::vector<double> load_waveform(const ClipRecord& rec) const;

 private:
  friend Dataset load_dataset(const std::filesystem::path& dir);

  std::filesystem::path dir_;
  std::vector<SourceClass> vocab_;
  int n_seen_ = 0;
  int n_unseen_ = 0;
  uint64_t root_seed_ = 0;
  std::string fingerprint_;
  std::map<std::string, std::vector<ClipRecord>> splits_;
};

Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace carl
