// End-to-end acceptance suite. Each numbered criterion prints exactly one
// PASS/FAIL line; the process exits 0 only if every criterion passes.
// Criteria 1-5 are oracle and property checks, 6-8 train on a shared toy
// dataset, 9-10 verify purity and determinism on a micro dataset.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "carl/config.hpp"
#include "carl/dataset.hpp"
#include "carl/decoders.hpp"
#include "carl/losses.hpp"
#include "carl/metrics.hpp"
#include "carl/pipelines.hpp"
#include "carl/report.hpp"
#include "carl/slots.hpp"

#include "../grad_check.hpp"

using namespace carl;
using ad::Tape;
using ad::Var;
namespace fs = std::filesystem;

namespace {

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

struct Outcome {
  bool ok = false;
  std::string detail;
};

std::vector<Outcome> g_results(11);

void record(int criterion, bool ok, const std::string& detail) {
  g_results[static_cast<size_t>(criterion)] = {ok, detail};
  std::fprintf(stderr, "[acceptance] criterion %d %s: %s\n", criterion,
               ok ? "PASS" : "FAIL", detail.c_str());
}

void run_criterion(int criterion, const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    record(criterion, false, std::string("exception: ") + e.what());
  }
}

std::string fmt(double v, int prec = 4) { return format_double(v, prec); }

Mat random_mat(Rng& rng, int r, int c, double scale = 1.0) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  }
  return m;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw PipelineError("cannot read " + p.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// --------------------------------------------------------------------------
// Criterion 1: exhaustive matching oracle

double brute_min_cost(const Mat& cost) {
  const int m = static_cast<int>(cost.rows());
  const int k = static_cast<int>(cost.cols());
  double best = std::numeric_limits<double>::infinity();
  std::vector<bool> used(static_cast<size_t>(k), false);
  std::function<void(int, double)> rec = [&](int label, double acc) {
    if (label == m) {
      best = std::min(best, acc);
      return;
    }
    for (int s = 0; s < k; ++s) {
      if (used[static_cast<size_t>(s)]) continue;
      used[static_cast<size_t>(s)] = true;
      rec(label + 1, acc + cost(label, s));
      used[static_cast<size_t>(s)] = false;
    }
  };
  rec(0, 0.0);
  return best;
}

void criterion_1() {
  const double start = now_s();
  Rng rng(101);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int m = 1 + static_cast<int>(rng.below(4));
    const int k = m + static_cast<int>(rng.below(static_cast<uint64_t>(7 - m)));
    Mat cost(m, k);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < k; ++j) cost(i, j) = 3.0 * rng.normal();
    }
    const MatchAssignment got = hungarian_match(cost);
    double replayed = 0.0;
    for (const auto& [label, slot] : got.pairs) replayed += cost(label, slot);
    const double want = brute_min_cost(cost);
    if (std::abs(got.total_cost - want) > 1e-12 || std::abs(replayed - want) > 1e-12) {
      ++mismatches;
    }
  }
  const double elapsed = now_s() - start;
  const bool ok = mismatches == 0 && elapsed < 10.0;
  record(1, ok,
         "hungarian equals exhaustive search on 1000 cost matrices, " +
             std::to_string(mismatches) + " mismatches, " + fmt(elapsed, 2) + " s");
}

// --------------------------------------------------------------------------
// Criterion 2: PIT optimality and permutation invariance

void criterion_2() {
  Rng rng(202);
  int not_optimal = 0;
  int not_invariant = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(4));
    const int l = 4 + static_cast<int>(rng.below(4));
    const int m = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(std::min(k, 4))));
    const Mat logits = random_mat(rng, k, l, 2.0);
    std::vector<int> classes(static_cast<size_t>(l));
    std::iota(classes.begin(), classes.end(), 0);
    std::vector<int> labels;
    for (int i = 0; i < m; ++i) {
      std::swap(classes[static_cast<size_t>(i)],
                classes[static_cast<size_t>(i) + rng.below(static_cast<uint64_t>(l - i))]);
      labels.push_back(classes[static_cast<size_t>(i)]);
    }
    std::sort(labels.begin(), labels.end());

    const auto eval_loss = [&](const Mat& lg) {
      Tape t;
      SlotPredictions pred;
      pred.logits = t.constant(lg);
      pred.log_softmax = t.log_softmax_rows(pred.logits);
      pred.softmax = t.softmax_rows(pred.logits);
      pred.sigmoid = t.sigmoid(pred.logits);
      return t.val(pit_cross_entropy(t, pred, labels).loss)(0, 0);
    };

    const double matched = eval_loss(logits);
    // Identity assignment: label i forced onto slot i.
    Tape t;
    const Mat ls = t.val(t.log_softmax_rows(t.constant(logits)));
    double identity = 0.0;
    for (int i = 0; i < m; ++i) identity -= ls(i, labels[static_cast<size_t>(i)]);
    identity /= m;
    if (matched > identity + 1e-12) ++not_optimal;

    const std::vector<size_t> perm = rng.permutation(static_cast<size_t>(k));
    Mat shuffled(k, l);
    for (int i = 0; i < k; ++i) {
      shuffled.row(i) = logits.row(static_cast<Eigen::Index>(perm[static_cast<size_t>(i)]));
    }
    if (eval_loss(shuffled) != matched) ++not_invariant;
  }
  const bool ok = not_optimal == 0 && not_invariant == 0;
  record(2, ok,
         "pit <= identity and slot-permutation invariant on 500 instances (" +
             std::to_string(not_optimal) + " above identity, " +
             std::to_string(not_invariant) + " variant)");
}

// --------------------------------------------------------------------------
// Criterion 3: analytic gradients vs central finite differences

void criterion_3() {
  std::vector<std::pair<std::string, double>> errors;

  {
    SlotConfig cfg;
    cfg.k = 2;
    cfg.d_s = 4;
    cfg.layers = 1;
    cfg.heads = 1;
    cfg.ffn_mult = 2;
    cfg.attention = nn::AttentionKind::kInverted;
    cfg.seed = 31;
    SlotTransformer st(cfg, 3);
    Rng rng(301);
    const Mat feats = random_mat(rng, 4, 3);
    auto build = [&](Tape& t) {
      Var slots = st.apply(t, t.constant(feats));
      return t.mean_all(t.mul(slots, slots));
    };
    errors.emplace_back("slot_transform",
                        testutil::max_rel_grad_error(st.parameters(), build));
  }
  {
    DecoderConfig cfg;
    cfg.kind = DecoderKind::kMlp;
    cfg.mlp_hidden = 6;
    cfg.mlp_layers = 1;
    cfg.use_alpha = true;
    cfg.seed = 32;
    TargetShape shape;
    shape.n_t = 2;
    shape.n_f = 2;
    shape.d_p = 3;
    MlpBroadcastDecoder dec(cfg, 3, shape);
    Rng rng(302);
    const Mat target = random_mat(rng, 4, 3);
    ad::Parameter slots{"slots", random_mat(rng, 2, 3)};
    auto build = [&](Tape& t) {
      return reconstruction_loss(t, dec.decode(t, t.param(slots)).composite,
                                 t.constant(target));
    };
    std::vector<ad::Parameter*> params = dec.parameters();
    params.push_back(&slots);
    errors.emplace_back("mlp_decoder", testutil::max_rel_grad_error(params, build));
  }
  {
    DecoderConfig cfg;
    cfg.kind = DecoderKind::kCnn;
    cfg.target = ReconTargetKind::kSpectrogram;
    cfg.cnn_channels = 2;
    cfg.use_alpha = true;
    cfg.seed = 33;
    TargetShape shape;
    shape.t = 8;
    shape.f = 8;
    CnnBroadcastDecoder dec(cfg, 3, shape);
    Rng rng(303);
    const Mat target = random_mat(rng, 8, 8);
    ad::Parameter slots{"slots", random_mat(rng, 2, 3)};
    auto build = [&](Tape& t) {
      return reconstruction_loss(t, dec.decode(t, t.param(slots)).composite,
                                 t.constant(target));
    };
    errors.emplace_back("cnn_decoder", testutil::max_rel_grad_error({&slots}, build));
  }
  {
    DecoderConfig cfg;
    cfg.kind = DecoderKind::kTransformer;
    cfg.use_alpha = false;
    cfg.ar_layers = 1;
    cfg.ar_heads = 1;
    cfg.seed = 34;
    TargetShape shape;
    shape.n_t = 2;
    shape.n_f = 2;
    shape.d_p = 4;
    ArFeatureDecoder dec(cfg, 3, shape);
    Rng rng(304);
    const Mat target = random_mat(rng, 4, 4);
    ad::Parameter slots{"slots", random_mat(rng, 2, 3)};
    auto build = [&](Tape& t) {
      return reconstruction_loss(
          t, dec.decode(t, t.param(slots), t.constant(target)).composite,
          t.constant(target));
    };
    errors.emplace_back("ar_decoder", testutil::max_rel_grad_error({&slots}, build));
  }
  {
    ClassifierHead head(4, 5, 35);
    Rng rng(305);
    ad::Parameter slots{"slots", random_mat(rng, 3, 4)};
    const std::vector<int> labels = {1, 3};
    auto build = [&](Tape& t) {
      return pit_cross_entropy(t, head.classify(t, t.param(slots)), labels).loss;
    };
    std::vector<ad::Parameter*> params = head.parameters();
    params.push_back(&slots);
    errors.emplace_back("pit_cross_entropy",
                        testutil::max_rel_grad_error(params, build));
  }
  {
    Rng rng(306);
    ad::Parameter logits{"logits", random_mat(rng, 3, 5)};
    auto build = [&](Tape& t) {
      SlotPredictions pred;
      pred.logits = t.param(logits);
      pred.log_softmax = t.log_softmax_rows(pred.logits);
      pred.softmax = t.softmax_rows(pred.logits);
      pred.sigmoid = t.sigmoid(pred.logits);
      return sparsity_penalty(t, pred);
    };
    errors.emplace_back("sparsity", testutil::max_rel_grad_error({&logits}, build));
  }
  {
    Rng rng(307);
    Mat base = random_mat(rng, 3, 4, 0.3);
    base.col(0).array() += 2.0;  // keep the clipped cosines strictly active
    ad::Parameter slots{"slots", base};
    ad::Parameter proj{"proj", random_mat(rng, 4, 2, 0.5)};
    auto build = [&](Tape& t) {
      return disjointedness_penalty(t, t.param(slots), &proj, nullptr);
    };
    errors.emplace_back("disjointedness",
                        testutil::max_rel_grad_error({&slots, &proj}, build));
  }

  double worst = 0.0;
  std::string worst_name;
  for (const auto& [name, err] : errors) {
    if (err >= worst) {
      worst = err;
      worst_name = name;
    }
  }
  record(3, worst < 1e-4,
         "max relative gradient error " + fmt(worst, 8) + " (" + worst_name +
             ") across " + std::to_string(errors.size()) + " graphs, threshold 1e-4");
}

// --------------------------------------------------------------------------
// Criterion 4: compositing invariants

void criterion_4() {
  bool ok = true;
  std::string detail;

  {
    Rng rng(401);
    const int k = 3, n = 5;
    Tape t;
    const CompositeResult res = composite_features(
        t, t.constant(random_mat(rng, k * n, 4)), t.constant(random_mat(rng, k * n, 1, 2.0)),
        k);
    const Mat alpha = t.val(res.alpha);
    double worst = 0.0;
    for (int pos = 0; pos < n; ++pos) {
      double sum = 0.0;
      for (int s = 0; s < k; ++s) sum += alpha(s * n + pos, 0);
      worst = std::max(worst, std::abs(sum - 1.0));
    }
    Tape t2;
    const CompositeResult spec = composite_spectrogram(
        t2, t2.constant(random_mat(rng, k * n, 4)),
        t2.constant(random_mat(rng, k * n, 4, 2.0)), k);
    const Mat alpha2 = t2.val(spec.alpha);
    for (int pos = 0; pos < n; ++pos) {
      for (int c = 0; c < 4; ++c) {
        double sum = 0.0;
        for (int s = 0; s < k; ++s) sum += alpha2(s * n + pos, c);
        worst = std::max(worst, std::abs(sum - 1.0));
      }
    }
    if (worst > 1e-6) ok = false;
    detail += "alpha sum err " + fmt(worst, 9);
  }
  {
    Rng rng(402);
    const int k = 3, n = 4;
    const Mat per_slot = random_mat(rng, k * n, 5);
    Mat raw = Mat::Zero(k * n, 1);
    raw.topRows(n).array() = 60.0;
    Tape t;
    const CompositeResult res =
        composite_features(t, t.constant(per_slot), t.constant(raw), k);
    double err = (t.val(res.composite) - per_slot.topRows(n)).cwiseAbs().maxCoeff();

    const Mat logs = random_mat(rng, k * n, 5);
    Mat raw2 = Mat::Zero(k * n, 5);
    raw2.topRows(n).array() = 60.0;
    Tape t2;
    const CompositeResult res2 =
        composite_spectrogram(t2, t2.constant(logs), t2.constant(raw2), k);
    err = std::max(err, (t2.val(res2.composite) - logs.topRows(n)).cwiseAbs().maxCoeff());
    if (err > 1e-6) ok = false;
    detail += ", saturated-alpha err " + fmt(err, 9);
  }
  {
    const int k = 2, tt = 3, f = 4;
    const Mat logs = Mat::Constant(k * tt, f, std::log(0.5));
    Tape t;
    const CompositeResult with_alpha =
        composite_spectrogram(t, t.constant(logs), t.constant(Mat::Zero(k * tt, f)), k);
    const double err_with =
        (t.val(with_alpha.composite).array() - std::log(0.5)).abs().maxCoeff();
    Tape t2;
    const CompositeResult no_alpha =
        composite_spectrogram(t2, t2.constant(logs), std::nullopt, k);
    const double err_without =
        (t2.val(no_alpha.composite).array() - std::log(1.0)).abs().maxCoeff();
    if (err_with > 1e-9 || err_without > 1e-9) ok = false;
    detail += ", k=2 constant case errs " + fmt(err_with, 12) + "/" + fmt(err_without, 12);
  }
  record(4, ok, detail);
}

// --------------------------------------------------------------------------
// Criterion 5: metric oracles

void criterion_5() {
  bool ok = true;
  std::string detail;

  const auto ap = average_precision({0.9, 0.8, 0.1}, {1, 0, 1});
  const double ap_err = ap ? std::abs(*ap - 5.0 / 6.0) : 1.0;
  if (!ap || ap_err > 1e-9) ok = false;
  detail += "AP " + (ap ? fmt(*ap) : std::string("none")) + " vs 0.8333 (err " +
            fmt(ap_err, 12) + ")";

  Mat points(6, 2);
  points << 0, 0, 0, 0, 0, 0, 100, 0, 100, 0, 100, 0;
  const auto sil = supervised_silhouette(points, {0, 0, 0, 1, 1, 1});
  const double sil_err = sil ? std::abs(*sil - 1.0) : 1.0;
  if (!sil || sil_err > 1e-9) ok = false;
  detail += ", silhouette err " + fmt(sil_err, 12);

  Rng rng(501);
  int agg_mismatch = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 1 + static_cast<int>(rng.below(6));
    const int l = 2 + static_cast<int>(rng.below(8));
    Mat softmax(k, l);
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < l; ++j) softmax(i, j) = rng.uniform();
    }
    Vec want = Vec::Zero(l);
    for (int s = 0; s < k; ++s) {
      int best = 0;
      for (int c = 1; c < l; ++c) {
        if (softmax(s, c) > softmax(s, best)) best = c;
      }
      want(best) = std::max(want(best), softmax(s, best));
    }
    const Vec got = aggregate_max_per_slot(softmax);
    if ((got - want).cwiseAbs().maxCoeff() != 0.0) ++agg_mismatch;
  }
  if (agg_mismatch != 0) ok = false;
  detail += ", aggregate mismatches " + std::to_string(agg_mismatch) + "/100";
  record(5, ok, detail);
}

// --------------------------------------------------------------------------
// Toy-scale training (criteria 6-8)

nlohmann::json toy_doc(const fs::path& ds_dir) {
  nlohmann::json doc;
  doc["seed"] = 5;
  doc["dataset"] = {{"dir", ds_dir.string()},
                    {"n_seen", 10},
                    {"n_unseen", 0},
                    {"train_clips", 20000},
                    {"val_clips", 1000},
                    {"eval_clips", 2000},
                    {"polyphony_dist", {0.34, 0.33, 0.33}}};
  doc["mel"] = {{"bins", 32}};
  doc["encoder"] = {{"d_p", 64}, {"depth", 2}, {"heads", 4},
                    {"patch_t", 8}, {"patch_f", 8}, {"ffn_mult", 2}};
  doc["slots"] = {{"k", 5}, {"d_s", 128}, {"layers", 2}, {"heads", 4}, {"ffn_mult", 2}};
  doc["decoder"] = {{"kind", "mlp"}, {"target", "features"}, {"alpha", true},
                    {"mlp_hidden", 256}, {"mlp_layers", 2}};
  doc["loss"] = {{"proj_dim", 64}};
  doc["optimizer"] = {{"lr", 1e-3}, {"batch", 16}, {"steps", 400}};
  doc["train"] = {{"mode", "supervised"}, {"stage2_steps", 1500},
                  {"stage2_clips", 1500}, {"log_every", 10}};
  return doc;
}

struct ToyRuns {
  bool ready = false;
  std::optional<double> sup_p2, sup_p3, base_p2, base_p3;
  std::optional<double> probe_mlp, probe_cnn;
  std::optional<double> probe_d128, probe_d64, probe_d16;
  double block6_seconds = 0.0;
};

std::optional<double> poly(const EvalReport& e, int p) {
  auto it = e.map_by_polyphony.find(p);
  if (it == e.map_by_polyphony.end()) return std::nullopt;
  return it->second;
}

ToyRuns run_toy(const fs::path& work) {
  ToyRuns out;
  const fs::path ds_dir = work / "toy_ds";
  const fs::path runs = work / "runs";
  const nlohmann::json base_doc = toy_doc(ds_dir);

  const auto variant = [&](const std::function<void(nlohmann::json&)>& edit) {
    nlohmann::json doc = base_doc;
    edit(doc);
    return config_from_json(doc, work.string());
  };

  const double t0 = now_s();
  const Config sup_cfg = config_from_json(base_doc, work.string());
  synth_dataset(sup_cfg, true);
  std::fprintf(stderr, "[acceptance] toy dataset built (%.0f s)\n", now_s() - t0);

  const RunRecord sup = train_supervised(sup_cfg, runs);
  out.sup_p2 = poly(sup.eval, 2);
  out.sup_p3 = poly(sup.eval, 3);
  const RunRecord base = baseline_mixture_copy(sup_cfg, runs);
  out.base_p2 = poly(base.eval, 2);
  out.base_p3 = poly(base.eval, 3);
  out.block6_seconds = now_s() - t0;

  const Config mlp_cfg = variant([](nlohmann::json& d) {
    d["train"]["mode"] = "unsupervised";
    d["decoder"]["alpha"] = false;
    d["optimizer"]["steps"] = 300;
  });
  const RunRecord s1_mlp = train_unsupervised_stage1(mlp_cfg, runs);
  const RunRecord p_mlp = train_probe_stage2(s1_mlp.final_checkpoint, mlp_cfg, runs);
  out.probe_mlp = p_mlp.eval.map_overall;
  out.probe_d128 = p_mlp.eval.map_overall;

  const Config cnn_cfg = variant([](nlohmann::json& d) {
    d["train"]["mode"] = "unsupervised";
    d["decoder"] = {{"kind", "cnn"}, {"target", "spectrogram"}, {"alpha", false},
                    {"cnn_channels", 8}};
    d["optimizer"]["steps"] = 200;
    d["optimizer"]["batch"] = 8;
  });
  const RunRecord s1_cnn = train_unsupervised_stage1(cnn_cfg, runs);
  const RunRecord p_cnn = train_probe_stage2(s1_cnn.final_checkpoint, cnn_cfg, runs);
  out.probe_cnn = p_cnn.eval.map_overall;

  for (int d_s : {64, 16}) {
    const Config cfg = variant([&](nlohmann::json& d) {
      d["train"]["mode"] = "unsupervised";
      d["decoder"]["alpha"] = false;
      d["optimizer"]["steps"] = 300;
      d["slots"]["d_s"] = d_s;
    });
    const RunRecord s1 = train_unsupervised_stage1(cfg, runs);
    const RunRecord probe = train_probe_stage2(s1.final_checkpoint, cfg, runs);
    (d_s == 64 ? out.probe_d64 : out.probe_d16) = probe.eval.map_overall;
  }

  out.ready = true;
  return out;
}

void criterion_6(const ToyRuns& toy) {
  if (!toy.ready || !toy.sup_p2 || !toy.sup_p3 || !toy.base_p2 || !toy.base_p3) {
    record(6, false, "toy runs incomplete");
    return;
  }
  const double m2 = *toy.sup_p2 - *toy.base_p2;
  const double m3 = *toy.sup_p3 - *toy.base_p3;
  const bool ok = m2 >= 0.05 && m3 >= 0.05 && toy.block6_seconds < 3600.0;
  record(6, ok,
         "slot model vs mixture copy: p2 " + fmt(*toy.sup_p2) + " vs " + fmt(*toy.base_p2) +
             " (margin " + fmt(m2) + "), p3 " + fmt(*toy.sup_p3) + " vs " +
             fmt(*toy.base_p3) + " (margin " + fmt(m3) + "), need >= 0.05; " +
             fmt(toy.block6_seconds, 0) + " s < 3600 s");
}

void criterion_7(const ToyRuns& toy) {
  if (!toy.ready || !toy.probe_mlp || !toy.probe_cnn) {
    record(7, false, "toy runs incomplete");
    return;
  }
  const double margin = *toy.probe_mlp - *toy.probe_cnn;
  record(7, margin >= 0.0,
         "feature-target probe mAP " + fmt(*toy.probe_mlp) + " vs spectrogram-target " +
             fmt(*toy.probe_cnn) + ", margin " + fmt(margin));
}

void criterion_8(const ToyRuns& toy) {
  if (!toy.ready || !toy.probe_d128 || !toy.probe_d64 || !toy.probe_d16) {
    record(8, false, "toy runs incomplete");
    return;
  }
  const double a = *toy.probe_d128, b = *toy.probe_d64, c = *toy.probe_d16;
  int violations = 0;
  double worst_gap = 0.0;
  if (b > a) {
    ++violations;
    worst_gap = std::max(worst_gap, b - a);
  }
  if (c > b) {
    ++violations;
    worst_gap = std::max(worst_gap, c - b);
  }
  const bool ok = violations == 0 || (violations == 1 && worst_gap <= 0.02);
  record(8, ok,
         "probe mAP by slot width 128/64/16: " + fmt(a) + "/" + fmt(b) + "/" + fmt(c) +
             ", " + std::to_string(violations) + " adjacent violations (worst " +
             fmt(worst_gap) + ")");
}

// --------------------------------------------------------------------------
// Micro-scale purity and determinism (criteria 9-10)

Config micro_config(const fs::path& work, const std::string& mode) {
  nlohmann::json doc;
  doc["seed"] = 9;
  doc["dataset"] = {{"dir", (work / "micro_ds").string()},
                    {"n_seen", 4},
                    {"n_unseen", 0},
                    {"train_clips", 12},
                    {"val_clips", 3},
                    {"eval_clips", 8},
                    {"polyphony_dist", {0.5, 0.5}}};
  doc["mel"] = {{"bins", 16}};
  doc["encoder"] = {{"d_p", 16}, {"depth", 1}, {"heads", 2},
                    {"patch_t", 49}, {"patch_f", 8}, {"ffn_mult", 2}};
  doc["slots"] = {{"k", 3}, {"d_s", 16}, {"layers", 1}, {"heads", 2}, {"ffn_mult", 2}};
  doc["decoder"] = {{"kind", "mlp"}, {"target", "features"},
                    {"alpha", mode != "unsupervised"},
                    {"mlp_hidden", 16}, {"mlp_layers", 1}};
  doc["loss"] = {{"proj_dim", 8}};
  doc["optimizer"] = {{"lr", 1e-3}, {"batch", 4}, {"steps", 4}};
  doc["train"] = {{"mode", mode}, {"stage2_steps", 6}, {"log_every", 1}};
  return config_from_json(doc, work.string());
}

void criterion_9(const fs::path& work) {
  const Config cfg = micro_config(work, "unsupervised");
  synth_dataset(cfg, true);

  const RunRecord before = train_unsupervised_stage1(cfg, work / "runs9a");
  const std::string ckpt_a = slurp(before.final_checkpoint);

  // Rotate every training label within the seen classes, in place.
  const fs::path manifest = fs::path(cfg.dataset_dir()) / "manifest_train.jsonl";
  const std::string original = slurp(manifest);
  {
    std::istringstream in(original);
    std::ofstream rewritten(manifest, std::ios::binary | std::ios::trunc);
    std::string line;
    while (std::getline(in, line)) {
      nlohmann::json rec = nlohmann::json::parse(line);
      std::vector<int> labels = rec.at("labels").get<std::vector<int>>();
      for (int& c : labels) c = (c + 1) % 4;
      std::sort(labels.begin(), labels.end());
      rec["labels"] = labels;
      rewritten << rec.dump() << "\n";
    }
  }
  const RunRecord after = train_unsupervised_stage1(cfg, work / "runs9b");
  const bool identical = slurp(after.final_checkpoint) == ckpt_a;
  {
    std::ofstream restore(manifest, std::ios::binary | std::ios::trunc);
    restore << original;
  }

  // Frozen-weight audits run inside every pipeline; completing a supervised
  // run, a stage-1 run, a probe, and a baseline exercises all of them.
  const Config sup = micro_config(work, "supervised");
  train_supervised(sup, work / "runs9c");
  train_probe_stage2(after.final_checkpoint, cfg, work / "runs9c");
  baseline_mixture_copy(sup, work / "runs9c");

  record(9, identical,
         std::string("label-toggle stage-1 checkpoints ") +
             (identical ? "bitwise identical" : "DIFFER") +
             "; frozen-weight audits passed in supervised, stage-1, probe, and baseline");
}

void criterion_10(const fs::path& work) {
  const Config cfg = micro_config(work, "supervised");
  // criterion_9 already built micro_ds; rebuild defensively if missing.
  if (!fs::exists(fs::path(cfg.dataset_dir()) / "dataset.json")) {
    synth_dataset(cfg, true);
  }
  const RunRecord first = train_supervised(cfg, work / "runs10");
  const std::string eval_a = slurp(fs::path(first.dir) / "eval.json");
  const RunRecord second = train_supervised(cfg, work / "runs10");
  const std::string eval_b = slurp(fs::path(second.dir) / "eval.json");
  const bool identical = eval_a == eval_b;
  record(10, identical,
         std::string("eval report JSON across two identical runs is ") +
             (identical ? "byte-equal (" + std::to_string(eval_a.size()) + " bytes)"
                        : "DIFFERENT"));
}

}  // namespace

int main() {
  const double started = now_s();
  const fs::path work = fs::temp_directory_path() / "carl_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  run_criterion(1, criterion_1);
  run_criterion(2, criterion_2);
  run_criterion(3, criterion_3);
  run_criterion(4, criterion_4);
  run_criterion(5, criterion_5);

  run_criterion(9, [&] { criterion_9(work); });
  run_criterion(10, [&] { criterion_10(work); });

  ToyRuns toy;
  try {
    toy = run_toy(work);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "[acceptance] toy training failed: %s\n", e.what());
  }
  run_criterion(6, [&] { criterion_6(toy); });
  run_criterion(7, [&] { criterion_7(toy); });
  run_criterion(8, [&] { criterion_8(toy); });

  bool all_ok = true;
  for (int i = 1; i <= 10; ++i) {
    const Outcome& r = g_results[static_cast<size_t>(i)];
    std::printf("%s criterion %d: %s\n", r.ok ? "PASS" : "FAIL", i, r.detail.c_str());
    all_ok = all_ok && r.ok;
  }
  std::printf("%d/10 criteria passed in %.0f s\n",
              static_cast<int>(std::count_if(g_results.begin() + 1, g_results.end(),
                                             [](const Outcome& o) { return o.ok; })),
              now_s() - started);

  if (all_ok) fs::remove_all(work);
  return all_ok ? 0 : 1;
}
