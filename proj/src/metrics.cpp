#include "carl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace carl {

Vec aggregate_max_per_slot(const Mat& softmax) {
  const Eigen::Index k = softmax.rows();
  const Eigen::Index l = softmax.cols();
  if (k == 0 || l == 0) {
    throw PipelineError("aggregate_max_per_slot needs a non-empty matrix");
  }
  Vec clip = Vec::Zero(l);
  for (Eigen::Index s = 0; s < k; ++s) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < l; ++c) {
      if (softmax(s, c) > softmax(s, best)) best = c;
    }
    clip(best) = std::max(clip(best), softmax(s, best));
  }
  return clip;
}

std::optional<double> average_precision(const std::vector<double>& scores,
                                        const std::vector<char>& relevant) {
  if (scores.size() != relevant.size()) {
    throw PipelineError("average_precision: scores/relevance size mismatch");
  }
  std::size_t n_rel = 0;
  for (char r : relevant) n_rel += r ? 1 : 0;
  if (n_rel == 0) return std::nullopt;

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (relevant[order[rank]]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  return sum / static_cast<double>(n_rel);
}

namespace {

// Macro mean of per-class AP over the clip subset in `rows`; classes with no
// positive clip in the subset are skipped entirely.
std::optional<double> macro_map(const Mat& clip_scores,
                                const std::vector<std::vector<int>>& labels,
                                const std::vector<Eigen::Index>& rows,
                                std::vector<std::optional<double>>* per_class) {
  const Eigen::Index l = clip_scores.cols();
  double sum = 0.0;
  int counted = 0;
  for (Eigen::Index c = 0; c < l; ++c) {
    std::vector<double> scores;
    std::vector<char> rel;
    scores.reserve(rows.size());
    rel.reserve(rows.size());
    for (Eigen::Index i : rows) {
      scores.push_back(clip_scores(i, c));
      const auto& lab = labels[static_cast<std::size_t>(i)];
      rel.push_back(std::find(lab.begin(), lab.end(), static_cast<int>(c)) != lab.end() ? 1 : 0);
    }
    std::optional<double> ap = average_precision(scores, rel);
    if (per_class != nullptr) per_class->push_back(ap);
    if (ap.has_value()) {
      sum += *ap;
      ++counted;
    }
  }
  if (counted == 0) return std::nullopt;
  return sum / counted;
}

}  // namespace

MapReport mean_average_precision(const Mat& clip_scores,
                                 const std::vector<std::vector<int>>& labels,
                                 const std::vector<int>& polyphony) {
  const Eigen::Index n = clip_scores.rows();
  if (static_cast<Eigen::Index>(labels.size()) != n ||
      static_cast<Eigen::Index>(polyphony.size()) != n) {
    throw PipelineError("mean_average_precision: row count mismatch");
  }
  MapReport report;
  std::vector<Eigen::Index> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), Eigen::Index{0});
  report.overall = macro_map(clip_scores, labels, all, &report.per_class);

  std::map<int, std::vector<Eigen::Index>> subsets;
  for (Eigen::Index i = 0; i < n; ++i) {
    subsets[polyphony[static_cast<std::size_t>(i)]].push_back(i);
  }
  for (const auto& [p, rows] : subsets) {
    std::optional<double> m = macro_map(clip_scores, labels, rows, nullptr);
    if (m.has_value()) report.by_polyphony[p] = *m;
  }
  return report;
}

std::optional<double> supervised_silhouette(const Mat& points,
                                            const std::vector<int>& classes,
                                            int sample_cap, uint64_t seed) {
  Eigen::Index n = points.rows();
  if (static_cast<Eigen::Index>(classes.size()) != n) {
    throw PipelineError("supervised_silhouette: label count mismatch");
  }
  if (sample_cap < 2) {
    throw ConfigError("silhouette sample cap must be at least 2");
  }

  Mat sample = points;
  std::vector<int> sample_classes = classes;
  if (n > sample_cap) {
    Rng rng(derive_seed(seed, "silhouette-subsample"));
    std::vector<std::size_t> order = rng.permutation(static_cast<std::size_t>(n));
    sample.resize(sample_cap, points.cols());
    sample_classes.resize(static_cast<std::size_t>(sample_cap));
    std::vector<std::size_t> picked(order.begin(), order.begin() + sample_cap);
    std::sort(picked.begin(), picked.end());
    for (int i = 0; i < sample_cap; ++i) {
      sample.row(i) = points.row(static_cast<Eigen::Index>(picked[static_cast<std::size_t>(i)]));
      sample_classes[static_cast<std::size_t>(i)] = classes[picked[static_cast<std::size_t>(i)]];
    }
    n = sample_cap;
  }

  // Dense class ids and counts.
  std::map<int, int> dense;
  for (int c : sample_classes) dense.emplace(c, 0);
  if (dense.size() < 2) return std::nullopt;
  int next = 0;
  for (auto& [c, id] : dense) id = next++;
  const int n_classes = next;
  std::vector<int> cls(static_cast<std::size_t>(n));
  std::vector<Eigen::Index> count(static_cast<std::size_t>(n_classes), 0);
  Mat indicator = Mat::Zero(n, n_classes);
  for (Eigen::Index i = 0; i < n; ++i) {
    int id = dense[sample_classes[static_cast<std::size_t>(i)]];
    cls[static_cast<std::size_t>(i)] = id;
    ++count[static_cast<std::size_t>(id)];
    indicator(i, id) = 1.0;
  }

  // Blocked pairwise distances; per-class distance sums via one matmul per
  // block instead of a scalar loop over every pair.
  Vec sq = (sample.array().square().rowwise().sum()).matrix();
  const Eigen::Index block = 512;
  double total = 0.0;
  for (Eigen::Index r0 = 0; r0 < n; r0 += block) {
    const Eigen::Index len = std::min(block, n - r0);
    Mat cross = sample.middleRows(r0, len) * sample.transpose();  // len x n
    Mat d2 = (-2.0 * cross).eval();
    d2.colwise() += sq.segment(r0, len);
    d2.rowwise() += sq.transpose();
    Mat dist = d2.array().max(0.0).sqrt().matrix();
    Mat class_sums = dist * indicator;  // len x n_classes
    for (Eigen::Index r = 0; r < len; ++r) {
      const Eigen::Index i = r0 + r;
      const int ci = cls[static_cast<std::size_t>(i)];
      const Eigen::Index own = count[static_cast<std::size_t>(ci)];
      double s = 0.0;
      if (own > 1) {
        const double a = class_sums(r, ci) / static_cast<double>(own - 1);
        double b = std::numeric_limits<double>::infinity();
        for (int c = 0; c < n_classes; ++c) {
          if (c == ci) continue;
          b = std::min(b, class_sums(r, c) / static_cast<double>(count[static_cast<std::size_t>(c)]));
        }
        const double denom = std::max(a, b);
        s = denom > 0.0 ? (b - a) / denom : 0.0;
      }
      total += s;
    }
  }
  return total / static_cast<double>(n);
}

namespace {

nlohmann::json opt_json(const std::optional<double>& v) {
  if (!v.has_value()) return nullptr;
  return *v;
}

}  // namespace

std::string EvalReport::to_json() const {
  nlohmann::json j;
  nlohmann::json map_block;
  map_block["all"] = opt_json(map_overall);
  for (const auto& [p, v] : map_by_polyphony) {
    map_block["p" + std::to_string(p)] = v;
  }
  j["map"] = map_block;
  j["silhouette"] = opt_json(silhouette);
  nlohmann::json per = nlohmann::json::array();
  for (const auto& ap : per_class_ap) per.push_back(opt_json(ap));
  j["per_class_ap"] = per;
  j["config_hash"] = config_hash;
  j["dataset_hash"] = dataset_hash;
  return j.dump(2) + "\n";
}

std::string EvalReport::to_table() const {
  auto cell = [](const std::optional<double>& v) {
    if (!v.has_value()) return std::string("   --  ");
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%7.4f", *v);
    return std::string(buf);
  };
  std::vector<std::pair<std::string, std::string>> cols;
  cols.emplace_back("mAP", cell(map_overall));
  for (const auto& [p, v] : map_by_polyphony) {
    cols.emplace_back("mAP@p" + std::to_string(p), cell(v));
  }
  cols.emplace_back("silhouette", cell(silhouette));

  std::ostringstream head, rule, row;
  for (const auto& [name, value] : cols) {
    const std::size_t w = std::max(name.size(), value.size());
    head << "| " << name << std::string(w - name.size(), ' ') << ' ';
    rule << '|' << std::string(w + 2, '-');
    row << "| " << std::string(w - value.size(), ' ') << value << ' ';
  }
  head << "|\n";
  rule << "|\n";
  row << "|\n";
  return head.str() + rule.str() + row.str();
}

}  // namespace carl
