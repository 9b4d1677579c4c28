// Evaluation: max-per-slot clip scores, (macro) average precision overall
// and by polyphony, supervised silhouette over matched slot embeddings, and
// the serialized EvalReport.
#pragma once

#include "carl/common.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace carl {

// Per slot keep only the argmax class at its softmax value (ties to the
// lowest class index); clip score per class = columnwise max of the kept
// values. At most k entries are nonzero.
Vec aggregate_max_per_slot(const Mat& softmax);

// Rank by descending score with ties broken by original index; AP = mean
// precision at the relevant items' ranks. No relevant item -> nullopt (the
// class is excluded from macro means, not scored 0).
std::optional<double> average_precision(const std::vector<double>& scores,
                                        const std::vector<char>& relevant);

struct MapReport {
  std::optional<double> overall;
  std::map<int, double> by_polyphony;             // empty subsets stay absent
  std::vector<std::optional<double>> per_class;   // overall per-class AP
};

// clip_scores: n_clips x l; labels[i] lists clip i's class ids.
MapReport mean_average_precision(const Mat& clip_scores,
                                 const std::vector<std::vector<int>>& labels,
                                 const std::vector<int>& polyphony);

// Euclidean silhouette over points labeled by matched class. Single-point
// classes contribute 0; fewer than 2 distinct classes -> nullopt. Above
// sample_cap points, a seeded uniform subsample is scored instead.
std::optional<double> supervised_silhouette(const Mat& points,
                                            const std::vector<int>& classes,
                                            int sample_cap = 10000,
                                            uint64_t seed = 0);

struct EvalReport {
  std::optional<double> map_overall;
  std::map<int, double> map_by_polyphony;
  std::optional<double> silhouette;
  std::vector<std::optional<double>> per_class_ap;
  std::string config_hash;
  std::string dataset_hash;

  // Sorted-key JSON; byte-stable for identical inputs.
  std::string to_json() const;
  // Aligned text table (mAP columns by polyphony, then silhouette).
  std::string to_table() const;
};

}  // namespace carl
