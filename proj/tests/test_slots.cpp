#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "carl/posenc.hpp"
#include "carl/slots.hpp"
#include "grad_check.hpp"

using namespace carl;
using ad::Tape;
using ad::Var;

namespace {

SlotConfig tiny_config(nn::AttentionKind kind = nn::AttentionKind::kInverted) {
  SlotConfig cfg;
  cfg.k = 3;
  cfg.d_s = 8;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.ffn_mult = 2;
  cfg.attention = kind;
  cfg.seed = 4;
  return cfg;
}

Mat random_features(uint64_t seed, int n, int d) {
  Rng rng(seed);
  Mat m(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) m(i, j) = rng.normal();
  }
  return m;
}

}  // namespace

TEST_CASE("apply yields k x d_s and is deterministic") {
  SlotTransformer st(tiny_config(), 6);
  const Mat feats = random_features(1, 10, 6);
  Tape t;
  const Mat s1 = t.val(st.apply(t, t.constant(feats)));
  Tape t2;
  const Mat s2 = t2.val(st.apply(t2, t2.constant(feats)));
  REQUIRE(s1.rows() == 3);
  REQUIRE(s1.cols() == 8);
  CHECK((s1 - s2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("slots respond to the input features") {
  SlotTransformer st(tiny_config(), 6);
  Tape t;
  const Mat a = t.val(st.apply(t, t.constant(random_features(2, 10, 6))));
  Tape t2;
  const Mat b = t2.val(st.apply(t2, t2.constant(random_features(3, 10, 6))));
  CHECK((a - b).cwiseAbs().maxCoeff() > 1e-8);
}

TEST_CASE("transform matches apply on features plus the grid encoding") {
  SlotTransformer st(tiny_config(), 8);
  PatchEmbeddings e;
  e.n_t = 3;
  e.n_f = 2;
  e.patch_t = 1;
  e.patch_f = 1;
  e.values = random_features(4, 6, 8);
  const Mat via_transform = st.transform(e);
  const Mat pe = positional_encoding_2d(3, 2, 8);
  Tape t;
  const Mat via_apply = t.val(st.apply(t, t.constant(e.values + pe)));
  CHECK((via_transform - via_apply).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("standard and inverted attention produce different slots") {
  SlotTransformer inv(tiny_config(nn::AttentionKind::kInverted), 6);
  SlotTransformer std_attn(tiny_config(nn::AttentionKind::kStandard), 6);
  const Mat feats = random_features(5, 12, 6);
  Tape t1, t2;
  const Mat a = t1.val(inv.apply(t1, t1.constant(feats)));
  const Mat b = t2.val(std_attn.apply(t2, t2.constant(feats)));
  CHECK((a - b).cwiseAbs().maxCoeff() > 1e-8);
}

TEST_CASE("initial queries are a trainable k x d_s parameter") {
  SlotTransformer st(tiny_config(), 6);
  CHECK(st.initial_queries().value.rows() == 3);
  CHECK(st.initial_queries().value.cols() == 8);
  bool found = false;
  for (ad::Parameter* p : st.parameters()) {
    if (p == &st.initial_queries()) found = true;
  }
  CHECK(found);
}

TEST_CASE("slot transformer gradients match finite differences") {
  SlotConfig cfg = tiny_config();
  cfg.k = 2;
  cfg.d_s = 4;
  cfg.layers = 1;
  cfg.heads = 1;
  SlotTransformer st(cfg, 3);
  const Mat feats = random_features(6, 4, 3);
  auto build = [&](Tape& t) {
    Var slots = st.apply(t, t.constant(feats));
    return t.mean_all(t.mul(slots, slots));
  };
  CHECK(testutil::max_rel_grad_error(st.parameters(), build) < 1e-4);
}

TEST_CASE("feature gradients flow through to the input") {
  SlotConfig cfg = tiny_config();
  cfg.k = 2;
  cfg.d_s = 4;
  cfg.layers = 1;
  cfg.heads = 1;
  SlotTransformer st(cfg, 3);
  ad::Parameter feats{"feats", random_features(7, 4, 3)};
  auto build = [&](Tape& t) {
    Var slots = st.apply(t, t.param(feats));
    return t.mean_all(t.mul(slots, slots));
  };
  CHECK(testutil::max_rel_grad_error({&feats}, build) < 1e-4);
}
