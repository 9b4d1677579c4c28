#include "carl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace carl {

using ad::Tape;
using ad::Var;

ClassifierHead::ClassifierHead(int d_s, int n_classes, uint64_t seed)
    : n_classes_(n_classes) {
  if (n_classes < 2) throw ConfigError("classifier needs at least 2 classes");
  Rng rng(derive_seed(seed, "classifier-init"));
  linear_ = nn::Linear("classifier", rng, d_s, n_classes);
}

SlotPredictions ClassifierHead::classify(Tape& t, Var slots) {
  SlotPredictions pred;
  pred.logits = linear_.apply(t, slots);
  pred.log_softmax = t.log_softmax_rows(pred.logits);
  pred.softmax = t.softmax_rows(pred.logits);
  pred.sigmoid = t.sigmoid(pred.logits);
  return pred;
}

std::vector<ad::Parameter*> ClassifierHead::parameters() {
  std::vector<ad::Parameter*> out;
  linear_.collect(out);
  return out;
}

std::vector<int> MatchAssignment::matched_slots() const {
  std::vector<int> slots;
  slots.reserve(pairs.size());
  for (const auto& [label, slot] : pairs) slots.push_back(slot);
  return slots;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Jonker-Volgenant shortest augmenting paths; rows <= cols. Returns the
// optimal total; fills row_to_col when non-null.
double jv_optimal(const Mat& cost, std::vector<int>* row_to_col) {
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  if (n == 0) {
    if (row_to_col) row_to_col->clear();
    return 0.0;
  }
  std::vector<double> u(static_cast<size_t>(n) + 1, 0.0), v(static_cast<size_t>(m) + 1, 0.0);
  std::vector<int> p(static_cast<size_t>(m) + 1, 0), way(static_cast<size_t>(m) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<size_t>(m) + 1, kInf);
    std::vector<char> used(static_cast<size_t>(m) + 1, 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      const int i0 = p[static_cast<size_t>(j0)];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assign(static_cast<size_t>(n), -1);
  for (int j = 1; j <= m; ++j) {
    if (p[static_cast<size_t>(j)] > 0) assign[static_cast<size_t>(p[static_cast<size_t>(j)]) - 1] = j - 1;
  }
  double total = 0.0;
  for (int i = 0; i < n; ++i) total += cost(i, assign[static_cast<size_t>(i)]);
  if (row_to_col) *row_to_col = std::move(assign);
  return total;
}

// Optimal completion cost for the rows below `row` over the still-free cols.
double completion_cost(const Mat& cost, int row, const std::vector<char>& col_used) {
  const int n = static_cast<int>(cost.rows());
  const int rem_rows = n - row;
  if (rem_rows == 0) return 0.0;
  std::vector<int> free_cols;
  for (int j = 0; j < cost.cols(); ++j) {
    if (!col_used[static_cast<size_t>(j)]) free_cols.push_back(j);
  }
  Mat sub(rem_rows, static_cast<Eigen::Index>(free_cols.size()));
  for (int i = 0; i < rem_rows; ++i) {
    for (size_t j = 0; j < free_cols.size(); ++j) {
      sub(i, static_cast<Eigen::Index>(j)) = cost(row + i, free_cols[j]);
    }
  }
  return jv_optimal(sub, nullptr);
}

}  // namespace

MatchAssignment hungarian_match(const Mat& cost) {
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  if (n > m) {
    throw PipelineError("matching needs at least as many slots as labels, got " +
                        std::to_string(n) + " labels for " + std::to_string(m) + " slots");
  }
  if (!cost.allFinite()) throw PipelineError("matching cost matrix has non-finite entries");

  MatchAssignment out;
  if (n == 0) return out;
  const double best = jv_optimal(cost, nullptr);
  const double tol = 1e-12 * std::max(1.0, std::abs(best));

  // Lexicographic canonicalization: lock the smallest slot index per label
  // (ascending) that still admits an optimal completion.
  std::vector<char> col_used(static_cast<size_t>(m), 0);
  double fixed = 0.0;
  for (int i = 0; i < n; ++i) {
    bool locked = false;
    for (int j = 0; j < m && !locked; ++j) {
      if (col_used[static_cast<size_t>(j)]) continue;
      col_used[static_cast<size_t>(j)] = 1;
      const double rest = completion_cost(cost, i + 1, col_used);
      if (fixed + cost(i, j) + rest <= best + tol) {
        fixed += cost(i, j);
        out.pairs.emplace_back(i, j);
        locked = true;
      } else {
        col_used[static_cast<size_t>(j)] = 0;
      }
    }
    if (!locked) throw PipelineError("assignment search failed to lock a slot (numerical inconsistency)");
  }
  double total = 0.0;
  for (const auto& [label, slot] : out.pairs) total += cost(label, slot);
  out.total_cost = total;
  return out;
}

PitResult pit_cross_entropy(Tape& t, const SlotPredictions& pred,
                            const std::vector<int>& labels) {
  const Mat& log_probs = t.val(pred.log_softmax);
  const int k = static_cast<int>(log_probs.rows());
  const int l = static_cast<int>(log_probs.cols());
  if (labels.empty()) throw PipelineError("PIT cross-entropy needs at least one label");
  if (static_cast<int>(labels.size()) > k) {
    throw PipelineError("more labels (" + std::to_string(labels.size()) + ") than slots (" +
                        std::to_string(k) + ")");
  }
  for (int c : labels) {
    if (c < 0 || c >= l) {
      throw PipelineError("label " + std::to_string(c) + " outside the classifier's " +
                          std::to_string(l) + " classes");
    }
  }

  const int r = static_cast<int>(labels.size());
  Mat cost(r, k);
  for (int li = 0; li < r; ++li) {
    for (int s = 0; s < k; ++s) cost(li, s) = -log_probs(s, labels[static_cast<size_t>(li)]);
  }
  PitResult result;
  result.assignment = hungarian_match(cost);

  // The assignment is data from here on: pick matched entries with a fixed
  // one-hot mask so gradients flow only through the log-probabilities.
  std::vector<Eigen::Index> slot_rows;
  Mat one_hot = Mat::Zero(r, l);
  for (const auto& [label_idx, slot] : result.assignment.pairs) {
    slot_rows.push_back(slot);
    one_hot(static_cast<Eigen::Index>(slot_rows.size()) - 1, labels[static_cast<size_t>(label_idx)]) = 1.0;
  }
  Var picked = t.gather_rows(pred.log_softmax, slot_rows);
  Var matched = t.mul(picked, t.constant(one_hot));
  result.loss = t.scale(t.sum_all(matched), -1.0 / r);
  return result;
}

Var sparsity_penalty(Tape& t, const SlotPredictions& pred) {
  const Eigen::Index k = t.val(pred.sigmoid).rows();
  return t.scale(t.sum_all(pred.sigmoid), 1.0 / static_cast<double>(k));
}

Var disjointedness_penalty(Tape& t, Var slots, ad::Parameter* projection,
                           const MatchAssignment* assignment,
                           DisjointDiagnostics* diag) {
  Var p = projection ? t.matmul(slots, t.param(*projection)) : slots;
  const Mat& pv = t.val(p);
  const int k = static_cast<int>(pv.rows());

  std::vector<char> included(static_cast<size_t>(k), assignment == nullptr ? 1 : 0);
  if (assignment) {
    for (int s : assignment->matched_slots()) included[static_cast<size_t>(s)] = 1;
  }
  std::vector<char> zero_norm(static_cast<size_t>(k), 0);
  for (int i = 0; i < k; ++i) {
    if (pv.row(i).norm() < 1e-15) {
      zero_norm[static_cast<size_t>(i)] = 1;
      if (diag && included[static_cast<size_t>(i)]) ++diag->zero_norm_slots;
    }
  }

  Mat mask = Mat::Zero(k, k);
  bool any = false;
  for (int i = 0; i < k; ++i) {
    for (int j = i + 1; j < k; ++j) {
      if (included[static_cast<size_t>(i)] && included[static_cast<size_t>(j)] &&
          !zero_norm[static_cast<size_t>(i)] && !zero_norm[static_cast<size_t>(j)]) {
        mask(i, j) = 1.0;
        any = true;
      }
    }
  }
  if (!any) return t.constant(Mat::Zero(1, 1));

  Var norm_sq = t.rowwise_sum(t.mul(p, p));
  Var inv_norm = t.reciprocal(t.sqrt_guard(norm_sq, 1e-30));
  Var normed = t.mul_colvec(p, inv_norm);
  Var gram = t.matmul(normed, t.transpose(normed));
  return t.sum_all(t.mul(t.relu(gram), t.constant(mask)));
}

const char* ablate_term_name(AblateTerm ablate) {
  switch (ablate) {
    case AblateTerm::kNone: return "none";
    case AblateTerm::kReconstruction: return "reconstruction";
    case AblateTerm::kDisjointedness: return "disjointedness";
    case AblateTerm::kSparsity: return "sparsity";
  }
  return "none";
}

LossWeights apply_ablation(LossWeights w, AblateTerm ablate) {
  switch (ablate) {
    case AblateTerm::kNone: break;
    case AblateTerm::kReconstruction: w.w_recon = 0.0; break;
    case AblateTerm::kDisjointedness: w.w_disjoint = 0.0; break;
    case AblateTerm::kSparsity: w.w_sparsity = 0.0; break;
  }
  return w;
}

Var combined_loss(Tape& t, const LossTerms& parts, const LossWeights& w) {
  if (w.w_ce < 0 || w.w_recon < 0 || w.w_sparsity < 0 || w.w_disjoint < 0) {
    throw ConfigError("loss weights must be non-negative");
  }
  Var total = t.constant(Mat::Zero(1, 1));
  if (parts.ce) total = t.add(total, t.scale(*parts.ce, w.w_ce));
  if (parts.recon) total = t.add(total, t.scale(*parts.recon, w.w_recon));
  if (parts.sparsity) total = t.add(total, t.scale(*parts.sparsity, w.w_sparsity));
  if (parts.disjoint) total = t.add(total, t.scale(*parts.disjoint, w.w_disjoint));
  return total;
}

}  // namespace carl
