#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "carl/losses.hpp"
#include "grad_check.hpp"

using namespace carl;
using ad::Tape;
using ad::Var;

namespace {

Mat random_mat(uint64_t seed, int r, int c, double scale = 1.0) {
  Rng rng(seed);
  Mat m(r, c);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  }
  return m;
}

// Exhaustive minimum over injective label->slot maps, tracking the
// lexicographically smallest pair list among minimizers.
struct BruteResult {
  double cost = std::numeric_limits<double>::infinity();
  std::vector<int> slot_of_label;
};

void brute_recurse(const Mat& cost, int label, std::vector<int>& slots,
                   std::vector<bool>& used, double acc, BruteResult* best) {
  const int m = static_cast<int>(cost.rows());
  const int k = static_cast<int>(cost.cols());
  if (label == m) {
    if (acc < best->cost - 1e-15) {
      best->cost = acc;
      best->slot_of_label = slots;
    } else if (std::abs(acc - best->cost) <= 1e-15 && slots < best->slot_of_label) {
      best->slot_of_label = slots;
    }
    return;
  }
  for (int s = 0; s < k; ++s) {
    if (used[s]) continue;
    used[s] = true;
    slots[label] = s;
    brute_recurse(cost, label + 1, slots, used, acc + cost(label, s), best);
    used[s] = false;
  }
}

BruteResult brute_force_match(const Mat& cost) {
  BruteResult best;
  std::vector<int> slots(cost.rows(), -1);
  std::vector<bool> used(cost.cols(), false);
  brute_recurse(cost, 0, slots, used, 0.0, &best);
  return best;
}

SlotPredictions predictions_from_logits(Tape& t, const Mat& logits) {
  SlotPredictions pred;
  pred.logits = t.constant(logits);
  pred.log_softmax = t.log_softmax_rows(pred.logits);
  pred.softmax = t.softmax_rows(pred.logits);
  pred.sigmoid = t.sigmoid(pred.logits);
  return pred;
}

double eval_pit(const Mat& logits, const std::vector<int>& labels) {
  Tape t;
  const SlotPredictions pred = predictions_from_logits(t, logits);
  return t.val(pit_cross_entropy(t, pred, labels).loss)(0, 0);
}

}  // namespace

TEST_CASE("hungarian matches the exhaustive optimum") {
  Rng rng(900);
  for (int trial = 0; trial < 300; ++trial) {
    const int m = 1 + static_cast<int>(rng.below(4));
    const int k = m + static_cast<int>(rng.below(static_cast<uint64_t>(7 - m)));
    Mat cost(m, k);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < k; ++j) cost(i, j) = rng.normal() * 3.0;
    }
    const MatchAssignment got = hungarian_match(cost);
    const BruteResult want = brute_force_match(cost);
    CHECK(got.total_cost == doctest::Approx(want.cost).epsilon(1e-12));
    REQUIRE(got.pairs.size() == static_cast<size_t>(m));
    double replayed = 0.0;
    std::vector<bool> used(k, false);
    for (int i = 0; i < m; ++i) {
      CHECK(got.pairs[i].first == i);
      const int s = got.pairs[i].second;
      REQUIRE(s >= 0);
      REQUIRE(s < k);
      CHECK(!used[s]);
      used[s] = true;
      replayed += cost(i, s);
    }
    CHECK(replayed == doctest::Approx(got.total_cost).epsilon(1e-12));
  }
}

TEST_CASE("hungarian breaks ties toward the smallest pair list") {
  Mat cost = Mat::Zero(2, 3);  // every assignment costs 0
  const MatchAssignment got = hungarian_match(cost);
  REQUIRE(got.pairs.size() == 2);
  CHECK(got.pairs[0] == std::make_pair(0, 0));
  CHECK(got.pairs[1] == std::make_pair(1, 1));
}

TEST_CASE("hungarian rejects more labels than slots") {
  CHECK_THROWS_AS(hungarian_match(Mat::Zero(3, 2)), std::exception);
}

TEST_CASE("hand-checked two-slot matching") {
  Mat cost(2, 2);
  cost << 1.0, 5.0,
          2.0, 1.0;
  const MatchAssignment got = hungarian_match(cost);
  CHECK(got.total_cost == doctest::Approx(2.0));
  CHECK(got.pairs[0] == std::make_pair(0, 0));
  CHECK(got.pairs[1] == std::make_pair(1, 1));

  // Flip the diagonal advantage and the matching crosses over.
  Mat cost2(2, 2);
  cost2 << 5.0, 1.0,
           1.0, 5.0;
  const MatchAssignment got2 = hungarian_match(cost2);
  CHECK(got2.total_cost == doctest::Approx(2.0));
  CHECK(got2.pairs[0] == std::make_pair(0, 1));
  CHECK(got2.pairs[1] == std::make_pair(1, 0));
}

TEST_CASE("pit cross entropy equals the best-permutation oracle") {
  Rng rng(901);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(4));
    const int l = 3 + static_cast<int>(rng.below(4));
    const int m = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(std::min(k, l))));
    Mat logits(k, l);
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < l; ++j) logits(i, j) = rng.normal() * 2.0;
    }
    std::vector<int> labels;
    std::vector<int> classes(l);
    std::iota(classes.begin(), classes.end(), 0);
    for (int i = 0; i < m; ++i) {
      std::swap(classes[i], classes[i + rng.below(static_cast<uint64_t>(l - i))]);
      labels.push_back(classes[i]);
    }
    std::sort(labels.begin(), labels.end());

    // Straight-line oracle: -log softmax per (label, slot), exhaustive min.
    Mat nll(m, k);
    for (int s = 0; s < k; ++s) {
      double mx = logits.row(s).maxCoeff();
      double z = 0.0;
      for (int j = 0; j < l; ++j) z += std::exp(logits(s, j) - mx);
      for (int i = 0; i < m; ++i) {
        nll(i, s) = -(logits(s, labels[i]) - mx - std::log(z));
      }
    }
    const double want = brute_force_match(nll).cost / m;
    CHECK(eval_pit(logits, labels) == doctest::Approx(want).epsilon(1e-10));
  }
}

TEST_CASE("pit loss never exceeds the identity assignment") {
  Rng rng(902);
  for (int trial = 0; trial < 500; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(4));
    const int l = 4;
    const int m = 1 + static_cast<int>(rng.below(std::min<uint64_t>(k, l)));
    Mat logits(k, l);
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < l; ++j) logits(i, j) = rng.normal() * 2.0;
    }
    std::vector<int> labels;
    for (int i = 0; i < m; ++i) labels.push_back(i);

    Tape t;
    const SlotPredictions pred = predictions_from_logits(t, logits);
    const double matched = eval_pit(logits, labels);
    // Identity: label i forced onto slot i.
    double identity = 0.0;
    const Mat ls = t.val(pred.log_softmax);
    for (int i = 0; i < m; ++i) identity += -ls(i, labels[i]);
    identity /= m;
    CHECK(matched <= identity + 1e-12);
  }
}

TEST_CASE("pit loss is invariant to permuting slot rows") {
  Rng rng(903);
  for (int trial = 0; trial < 60; ++trial) {
    const int k = 3 + static_cast<int>(rng.below(3));
    const Mat logits = random_mat(9000 + trial, k, 6, 2.0);
    std::vector<int> labels = {1, 4};
    const double base = eval_pit(logits, labels);
    const std::vector<size_t> perm = rng.permutation(static_cast<size_t>(k));
    Mat shuffled(k, 6);
    for (int i = 0; i < k; ++i) {
      shuffled.row(i) = logits.row(static_cast<Eigen::Index>(perm[static_cast<size_t>(i)]));
    }
    CHECK(eval_pit(shuffled, labels) == base);  // bitwise: same matched set
  }
}

TEST_CASE("matching is constant through the backward pass") {
  // Gradient flows only into matched (slot, class) softmax terms; the
  // assignment itself contributes nothing.
  Mat logits(2, 3);
  logits << 3.0, 0.0, 0.0,
            0.0, 3.0, 0.0;
  ad::Parameter p{"logits", logits};
  Tape t;
  SlotPredictions pred;
  pred.logits = t.param(p);
  pred.log_softmax = t.log_softmax_rows(pred.logits);
  pred.softmax = t.softmax_rows(pred.logits);
  pred.sigmoid = t.sigmoid(pred.logits);
  const PitResult res = pit_cross_entropy(t, pred, {0, 1});
  t.backward(res.loss);
  // d(-log softmax[0,0]/2)/dlogits[0,j] = (softmax[0,j] - [j==0]) / 2.
  const Mat sm = t.val(pred.softmax);
  for (int j = 0; j < 3; ++j) {
    const double want0 = (sm(0, j) - (j == 0 ? 1.0 : 0.0)) / 2.0;
    const double want1 = (sm(1, j) - (j == 1 ? 1.0 : 0.0)) / 2.0;
    CHECK(p.grad(0, j) == doctest::Approx(want0).epsilon(1e-10));
    CHECK(p.grad(1, j) == doctest::Approx(want1).epsilon(1e-10));
  }
}

TEST_CASE("sparsity is the mean sigmoid row mass") {
  Mat logits(2, 3);
  logits << 0.0, 0.0, 0.0,
            100.0, -100.0, 0.0;
  Tape t;
  const SlotPredictions pred = predictions_from_logits(t, logits);
  const double got = t.val(sparsity_penalty(t, pred))(0, 0);
  // (3*0.5 + (1 + 0 + 0.5)) / 2 slots = 1.5.
  CHECK(got == doctest::Approx(1.5).epsilon(1e-9));
}

TEST_CASE("disjointedness hand case with identity projection") {
  Mat slots(3, 2);
  slots << 1.0, 0.0,   // cos(0,1)=0, relu -> 0
           0.0, 1.0,   // cos(1,2)=-1 -> 0
           0.0, -1.0;  // cos(0,2)=0 -> 0
  Tape t;
  CHECK(t.val(disjointedness_penalty(t, t.constant(slots), nullptr, nullptr))(0, 0) ==
        doctest::Approx(0.0).epsilon(1e-12));

  Mat aligned(2, 2);
  aligned << 1.0, 0.0,
             1.0, 1.0;  // cos = 1/sqrt(2)
  Tape t2;
  CHECK(t2.val(disjointedness_penalty(t2, t2.constant(aligned), nullptr, nullptr))(0, 0) ==
        doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-9));
}

TEST_CASE("supervised disjointedness only counts pairs matched on both sides") {
  Mat slots(3, 2);
  slots << 1.0, 0.0,
           1.0, 0.1,   // nearly aligned with slot 0
           1.0, -0.1;  // nearly aligned with both
  MatchAssignment assign;
  assign.pairs = {{0, 0}, {1, 2}};  // slot 1 is unmatched
  Tape t;
  const double matched_only =
      t.val(disjointedness_penalty(t, t.constant(slots), nullptr, &assign))(0, 0);
  Tape t2;
  const double all_pairs =
      t2.val(disjointedness_penalty(t2, t2.constant(slots), nullptr, nullptr))(0, 0);
  // Only the (0,2) pair contributes in the supervised mode:
  // (1,0)-(1,-0.1) -> dot 1 over norms 1 and sqrt(1.01).
  const double c02 = 1.0 / std::sqrt(1.01);
  CHECK(matched_only == doctest::Approx(c02).epsilon(1e-9));
  CHECK(all_pairs > matched_only + 0.5);
}

TEST_CASE("projection reshapes the disjointedness geometry") {
  Mat slots(2, 3);
  slots << 1.0, 0.0, 5.0,
           0.0, 1.0, 5.0;  // strongly aligned through the third axis
  Tape t;
  const double raw = t.val(disjointedness_penalty(t, t.constant(slots), nullptr, nullptr))(0, 0);
  CHECK(raw > 0.9);

  // Project away the shared axis: cosine drops to 0.
  Mat pmat(3, 2);
  pmat << 1.0, 0.0,
          0.0, 1.0,
          0.0, 0.0;
  ad::Parameter proj{"proj", pmat};
  Tape t2;
  const double projected =
      t2.val(disjointedness_penalty(t2, t2.constant(slots), &proj, nullptr))(0, 0);
  CHECK(projected == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("zero-norm slots are diagnosed and contribute nothing") {
  Mat slots(2, 2);
  slots << 0.0, 0.0,
           1.0, 1.0;
  DisjointDiagnostics diag;
  Tape t;
  const double got =
      t.val(disjointedness_penalty(t, t.constant(slots), nullptr, nullptr, &diag))(0, 0);
  CHECK(got == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(diag.zero_norm_slots == 1);
}

TEST_CASE("loss term gradients match finite differences") {
  // PIT cross entropy through the classifier head.
  {
    ClassifierHead head(4, 5, 77);
    ad::Parameter slots{"slots", random_mat(905, 3, 4)};
    const std::vector<int> labels = {1, 3};
    auto build = [&](Tape& t) {
      const SlotPredictions pred = head.classify(t, t.param(slots));
      return pit_cross_entropy(t, pred, labels).loss;
    };
    std::vector<ad::Parameter*> params = head.parameters();
    params.push_back(&slots);
    CHECK(testutil::max_rel_grad_error(params, build) < 1e-4);
  }
  // Sparsity.
  {
    ad::Parameter logits{"logits", random_mat(906, 3, 5)};
    auto build = [&](Tape& t) {
      SlotPredictions pred;
      pred.logits = t.param(logits);
      pred.log_softmax = t.log_softmax_rows(pred.logits);
      pred.softmax = t.softmax_rows(pred.logits);
      pred.sigmoid = t.sigmoid(pred.logits);
      return sparsity_penalty(t, pred);
    };
    CHECK(testutil::max_rel_grad_error({&logits}, build) < 1e-4);
  }
  // Disjointedness with a projection, away from the relu kink.
  {
    Mat base = random_mat(907, 3, 4, 0.3);
    base.col(0).array() += 2.0;  // positive cosines throughout
    ad::Parameter slots{"slots", base};
    ad::Parameter proj{"proj", random_mat(908, 4, 2, 0.5)};
    auto build = [&](Tape& t) {
      return disjointedness_penalty(t, t.param(slots), &proj, nullptr);
    };
    CHECK(testutil::max_rel_grad_error({&slots, &proj}, build) < 1e-4);
  }
}

TEST_CASE("combined loss is the weighted sum of present terms") {
  Tape t;
  LossTerms parts;
  parts.ce = t.constant(Mat::Constant(1, 1, 2.0));
  parts.sparsity = t.constant(Mat::Constant(1, 1, 3.0));
  LossWeights w;
  w.w_ce = 1.0;
  w.w_recon = 0.5;  // no recon term present; must not contribute
  w.w_sparsity = 0.1;
  w.w_disjoint = 100.0;
  CHECK(t.val(combined_loss(t, parts, w))(0, 0) == doctest::Approx(2.3).epsilon(1e-12));

  LossWeights bad;
  bad.w_ce = -1.0;
  CHECK_THROWS_AS(combined_loss(t, parts, bad), ConfigError);
}

TEST_CASE("ablation zeroes exactly one weight") {
  LossWeights w;
  w.w_ce = 1.0;
  w.w_recon = 0.1;
  w.w_sparsity = 0.2;
  w.w_disjoint = 3.0;

  LossWeights none = apply_ablation(w, AblateTerm::kNone);
  CHECK(none.w_recon == 0.1);
  CHECK(none.w_sparsity == 0.2);
  CHECK(none.w_disjoint == 3.0);

  CHECK(apply_ablation(w, AblateTerm::kReconstruction).w_recon == 0.0);
  CHECK(apply_ablation(w, AblateTerm::kReconstruction).w_ce == 1.0);
  CHECK(apply_ablation(w, AblateTerm::kDisjointedness).w_disjoint == 0.0);
  CHECK(apply_ablation(w, AblateTerm::kSparsity).w_sparsity == 0.0);

  CHECK(std::string(ablate_term_name(AblateTerm::kNone)) == "none");
  CHECK(std::string(ablate_term_name(AblateTerm::kReconstruction)) == "reconstruction");
  CHECK(std::string(ablate_term_name(AblateTerm::kDisjointedness)) == "disjointedness");
  CHECK(std::string(ablate_term_name(AblateTerm::kSparsity)) == "sparsity");
}

TEST_CASE("classifier head applies one shared map to every slot") {
  ClassifierHead head(3, 4, 55);
  const Mat slots = random_mat(909, 5, 3);
  Tape t;
  const SlotPredictions pred = head.classify(t, t.constant(slots));
  const Mat logits = t.val(pred.logits);
  REQUIRE(logits.rows() == 5);
  REQUIRE(logits.cols() == 4);

  // Classifying a single row reproduces that row of the batch logits.
  Tape t2;
  const Mat one = t2.val(head.classify(t2, t2.constant(Mat(slots.row(2)))).logits);
  CHECK((one - logits.row(2)).cwiseAbs().maxCoeff() < 1e-12);

  CHECK(head.parameters().size() == 2);  // weight and bias
}
