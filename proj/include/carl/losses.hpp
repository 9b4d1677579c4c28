// Per-slot classification and the training losses: Hungarian-matched
// permutation-invariant cross-entropy, sigmoid sparsity, clipped-cosine
// disjointedness, and their weighted combination. Every function here is
// invariant to permuting slot rows.
#pragma once

#include "carl/nn.hpp"

#include <optional>
#include <utility>
#include <vector>

namespace carl {

struct SlotPredictions {
  ad::Var logits;       // k x l
  ad::Var log_softmax;  // k x l, rowwise
  ad::Var softmax;      // k x l, rowwise
  ad::Var sigmoid;      // k x l, elementwise
};

// One shared linear map d_s -> l applied to every slot row.
class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(int d_s, int n_classes, uint64_t seed);

  int n_classes() const { return n_classes_; }
  SlotPredictions classify(ad::Tape& t, ad::Var slots);
  std::vector<ad::Parameter*> parameters();

 private:
  int n_classes_ = 0;
  nn::Linear linear_;
};

struct MatchAssignment {
  // (label_index, slot_index), ordered by label index; injective over slots.
  std::vector<std::pair<int, int>> pairs;
  double total_cost = 0.0;

  std::vector<int> matched_slots() const;
};

// Minimum-cost injective assignment of rows (labels) to columns (slots);
// requires rows <= cols and finite costs. Ties resolve to the
// lexicographically smallest pair list.
MatchAssignment hungarian_match(const Mat& cost);

struct PitResult {
  ad::Var loss;  // mean matched -log softmax[slot, class]
  MatchAssignment assignment;
};

// Matching is recomputed from the current predictions but held constant
// during backpropagation.
PitResult pit_cross_entropy(ad::Tape& t, const SlotPredictions& pred,
                            const std::vector<int>& labels);

// (1/k) * sum of all sigmoid activations (mean L1 row norm).
ad::Var sparsity_penalty(ad::Tape& t, const SlotPredictions& pred);

struct DisjointDiagnostics {
  int zero_norm_slots = 0;  // slots whose pairs were forced to cosine 0
};

// Sum over slot pairs of max(0, cosine) on projected embeddings.
// projection == nullptr uses the raw slots (identity). assignment == nullptr
// is the unsupervised mode (all pairs); otherwise only pairs whose slots are
// both matched contribute.
ad::Var disjointedness_penalty(ad::Tape& t, ad::Var slots,
                               ad::Parameter* projection,
                               const MatchAssignment* assignment,
                               DisjointDiagnostics* diag = nullptr);

struct LossWeights {
  double w_ce = 1.0;
  double w_recon = 0.1;
  double w_sparsity = 0.1;
  double w_disjoint = 100.0;
};

enum class AblateTerm { kNone, kReconstruction, kDisjointedness, kSparsity };

const char* ablate_term_name(AblateTerm ablate);

LossWeights apply_ablation(LossWeights w, AblateTerm ablate);

struct LossTerms {
  std::optional<ad::Var> ce;
  std::optional<ad::Var> recon;
  std::optional<ad::Var> sparsity;
  std::optional<ad::Var> disjoint;
};

// Weighted sum of the present terms. Rejects negative weights.
ad::Var combined_loss(ad::Tape& t, const LossTerms& parts, const LossWeights& w);

}  // namespace carl
