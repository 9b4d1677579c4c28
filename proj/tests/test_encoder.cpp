#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <unistd.h>
#include <vector>

#include "carl/encoder.hpp"

using namespace carl;
namespace fs = std::filesystem;

namespace {

MelSpectrogram random_mel(uint64_t seed, int t, int f) {
  MelSpectrogram m;
  m.t = t;
  m.f = f;
  m.values = Mat(t, f);
  Rng rng(seed);
  for (int i = 0; i < t; ++i) {
    for (int j = 0; j < f; ++j) m.values(i, j) = rng.normal();
  }
  return m;
}

EncoderConfig tiny_config() {
  EncoderConfig cfg;
  cfg.d_p = 16;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.patch_t = 4;
  cfg.patch_f = 4;
  cfg.ffn_mult = 2;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST_CASE("patchify crops to multiples and unpatchify inverts it") {
  const MelSpectrogram m = random_mel(1, 10, 9);
  const PatchEmbeddings p = patchify(m, 4, 4);
  CHECK(p.n_t == 2);
  CHECK(p.n_f == 2);
  CHECK(p.n() == 4);
  REQUIRE(p.values.rows() == 4);
  REQUIRE(p.values.cols() == 16);
  // Row-major tiles: patch (ti, fi) flattens the 4x4 block at (4ti, 4fi).
  CHECK(p.values(0, 0) == m.values(0, 0));
  CHECK(p.values(0, 1) == m.values(0, 1));
  CHECK(p.values(0, 4) == m.values(1, 0));
  CHECK(p.values(3, 0) == m.values(4, 4));
  const Mat back = unpatchify(p);
  REQUIRE(back.rows() == 8);
  REQUIRE(back.cols() == 8);
  CHECK((back - m.values.topLeftCorner(8, 8)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("patchify rejects patches larger than the input") {
  const MelSpectrogram m = random_mel(2, 3, 3);
  CHECK_THROWS(patchify(m, 4, 4));
}

TEST_CASE("encode emits the patch grid at d_p and is deterministic") {
  const EncoderModel enc(tiny_config());
  const MelSpectrogram m = random_mel(3, 12, 8);
  const PatchEmbeddings e1 = enc.encode(m);
  const PatchEmbeddings e2 = enc.encode(m);
  CHECK(e1.n_t == 3);
  CHECK(e1.n_f == 2);
  CHECK(e1.values.rows() == 6);
  CHECK(e1.values.cols() == 16);
  CHECK((e1.values - e2.values).cwiseAbs().maxCoeff() == 0.0);
  CHECK(enc.frozen());
}

TEST_CASE("different seeds give different encoders") {
  EncoderConfig a = tiny_config(), b = tiny_config();
  b.seed = 6;
  EncoderModel ea(a), eb(b);
  CHECK(ea.weight_fingerprint() != eb.weight_fingerprint());
  const MelSpectrogram m = random_mel(4, 8, 8);
  CHECK((ea.encode(m).values - eb.encode(m).values).cwiseAbs().maxCoeff() > 1e-8);
}

TEST_CASE("weight fingerprint reacts to any weight change") {
  EncoderModel enc(tiny_config());
  const uint64_t before = enc.weight_fingerprint();
  CHECK(before == enc.weight_fingerprint());
  enc.parameters()[0]->value(0, 0) += 1e-12;
  CHECK(enc.weight_fingerprint() != before);
}

TEST_CASE("save and load preserve weights and config") {
  const fs::path path = fs::temp_directory_path() /
                        ("carl_encoder_test_" + std::to_string(::getpid()) + ".ckpt");
  EncoderModel enc(tiny_config());
  enc.save(path);
  EncoderModel back = EncoderModel::load(path);
  CHECK(back.config().d_p == 16);
  CHECK(back.config().depth == 1);
  CHECK(back.weight_fingerprint() == enc.weight_fingerprint());
  CHECK(back.frozen());
  fs::remove(path);
}

TEST_CASE("masked pretraining reduces the reconstruction loss") {
  EncoderConfig cfg = tiny_config();
  EncoderModel enc(cfg);
  std::vector<MelSpectrogram> clips;
  for (uint64_t s = 0; s < 6; ++s) clips.push_back(random_mel(100 + s, 16, 8));
  nn::AdamConfig opt;
  opt.lr = 1e-3;
  const PretrainResult res = pretrain_masked(enc, clips, 0.5, 60, 2, 9, opt);
  REQUIRE(res.losses.size() == 60);
  CHECK(res.initial_loss > 0.0);
  CHECK(res.final_loss < res.initial_loss);
  CHECK(enc.frozen());
}

TEST_CASE("clip embedding is the column mean of the patch embeddings") {
  PatchEmbeddings e;
  e.n_t = 2;
  e.n_f = 2;
  e.values = Mat(4, 3);
  e.values << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12;
  const Vec v = clip_embedding(e);
  REQUIRE(v.size() == 3);
  CHECK(v(0) == doctest::Approx(5.5));
  CHECK(v(1) == doctest::Approx(6.5));
  CHECK(v(2) == doctest::Approx(7.5));
}
