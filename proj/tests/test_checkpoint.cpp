#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "carl/checkpoint.hpp"

using namespace carl;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const char* tag) {
  return fs::temp_directory_path() /
         (std::string("carl_ckpt_test_") + tag + "_" + std::to_string(::getpid()) + ".ckpt");
}

}  // namespace

TEST_CASE("tensors and header round-trip exactly") {
  const fs::path path = temp_file("roundtrip");
  nlohmann::json header;
  header["model"] = "demo";
  header["depth"] = 3;
  std::map<std::string, Mat> tensors;
  Mat a(2, 3);
  a << 1.5, -2.25, 3.0, 0.0, 1e-300, -1e300;
  tensors["layer/weight"] = a;
  tensors["layer/bias"] = Mat::Zero(1, 3);
  save_checkpoint(path, header, tensors);

  const CheckpointData back = load_checkpoint(path);
  CHECK(back.header["model"] == "demo");
  CHECK(back.header["depth"] == 3);
  REQUIRE(back.tensors.size() == 2);
  REQUIRE(back.tensors.count("layer/weight") == 1);
  const Mat& w = back.tensors.at("layer/weight");
  REQUIRE(w.rows() == 2);
  REQUIRE(w.cols() == 3);
  CHECK((w - a).cwiseAbs().maxCoeff() == 0.0);
  fs::remove(path);
}

TEST_CASE("save is byte-stable for identical inputs") {
  const fs::path p1 = temp_file("stable1"), p2 = temp_file("stable2");
  nlohmann::json header;
  header["b"] = 1;
  header["a"] = 2;
  std::map<std::string, Mat> tensors;
  tensors["z"] = Mat::Ones(3, 3) * 0.5;
  tensors["a"] = Mat::Ones(1, 4);
  save_checkpoint(p1, header, tensors);
  save_checkpoint(p2, header, tensors);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), {});
  const std::string b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);
  CHECK(!b1.empty());
  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("corrupt magic is rejected") {
  const fs::path path = temp_file("magic");
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTACKPT garbage";
  }
  CHECK_THROWS(load_checkpoint(path));
  fs::remove(path);
}

TEST_CASE("missing file is rejected") {
  CHECK_THROWS(load_checkpoint(temp_file("missing_never_written")));
}

TEST_CASE("truncated tensor payload is rejected") {
  const fs::path full = temp_file("trunc_full");
  std::map<std::string, Mat> tensors;
  tensors["w"] = Mat::Ones(8, 8);
  save_checkpoint(full, nlohmann::json::object(), tensors);
  std::ifstream in(full, std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), {});
  const fs::path cut = temp_file("trunc_cut");
  {
    std::ofstream out(cut, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 16));
  }
  CHECK_THROWS(load_checkpoint(cut));
  fs::remove(full);
  fs::remove(cut);
}
