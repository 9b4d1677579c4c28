#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <stdexcept>
#include <string>
#include <vector>

#include "carl/report.hpp"

using namespace carl;

namespace {

int count_of(const std::string& haystack, const std::string& needle) {
  int n = 0;
  for (size_t pos = haystack.find(needle); pos != std::string::npos;
       pos = haystack.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

}  // namespace

TEST_CASE("format_double is fixed precision and locale independent") {
  CHECK(format_double(0.5, 3) == "0.500");
  CHECK(format_double(1.0 / 3.0, 4) == "0.3333");
  CHECK(format_double(-2.5, 1) == "-2.5");
  CHECK(format_double(1234.0, 0) == "1234");
  CHECK(format_double(0.0456, 2) == "0.05");
}

TEST_CASE("text tables align their columns") {
  const std::string table = render_text_table(
      {"run", "mAP"},
      {{"short", "0.5"}, {"a-much-longer-name", "0.25"}});
  CHECK(table.find("run") != std::string::npos);
  CHECK(table.find("a-much-longer-name") != std::string::npos);

  // Every line is padded to the same width per column: the separator row
  // and both data rows start their second column at the same offset.
  std::vector<std::string> lines;
  size_t start = 0;
  for (size_t pos = table.find('\n'); pos != std::string::npos;
       pos = table.find('\n', start)) {
    lines.push_back(table.substr(start, pos - start));
    start = pos + 1;
  }
  REQUIRE(lines.size() >= 4);  // header, separator, two rows
  const size_t bar = lines[0].find('|', 1);
  REQUIRE(bar != std::string::npos);
  for (const auto& line : lines) {
    if (line.empty()) continue;
    CHECK(line.size() == lines[0].size());
  }
}

TEST_CASE("text tables reject rows of the wrong width") {
  CHECK_THROWS_AS(render_text_table({"a", "b"}, {{"only-one"}}), std::exception);
}

TEST_CASE("csv quotes only the fields that need it") {
  const std::string csv = render_csv(
      {"name", "note"},
      {{"plain", "ok"},
       {"with,comma", "line\nbreak"},
       {"with\"quote", "fine"}});
  CHECK(csv.find("name,note\n") == 0);
  CHECK(csv.find("plain,ok\n") != std::string::npos);
  CHECK(csv.find("\"with,comma\"") != std::string::npos);
  CHECK(csv.find("\"line\nbreak\"") != std::string::npos);
  // Embedded quotes double up.
  CHECK(csv.find("\"with\"\"quote\"") != std::string::npos);
  CHECK(csv.back() == '\n');
}

TEST_CASE("loss curve svg draws one polyline per series") {
  CurveSeries a;
  a.name = "total";
  a.points = {{0, 2.0}, {10, 1.0}, {20, 0.5}};
  CurveSeries b;
  b.name = "ce";
  b.points = {{0, 1.5}, {10, 0.8}, {20, 0.4}};
  const std::string svg = render_loss_curves_svg({a, b}, "training loss");
  CHECK(svg.find("<svg") == 0);
  CHECK(svg.rfind("</svg>") != std::string::npos);
  CHECK(count_of(svg, "<polyline") == 2);
  CHECK(svg.find("training loss") != std::string::npos);
  CHECK(svg.find("total") != std::string::npos);
  CHECK(svg.find("ce") != std::string::npos);
  // Axis gridlines and labels are present.
  CHECK(count_of(svg, "<line") >= 2);
  CHECK(count_of(svg, "<text") >= 4);
}

TEST_CASE("loss curve svg tolerates empty input") {
  const std::string svg = render_loss_curves_svg({}, "empty");
  CHECK(svg.find("<svg") == 0);
  CHECK(svg.find("empty") != std::string::npos);
}

TEST_CASE("grouped bar svg draws a rect per present value") {
  BarGroup g1;
  g1.name = "run-a";
  g1.values = {0.5, 0.25, std::nullopt};
  BarGroup g2;
  g2.name = "run-b";
  g2.values = {0.75, std::nullopt, 0.125};
  const std::string svg =
      render_grouped_bars_svg({"all", "p1", "p2"}, {g1, g2}, "mAP by polyphony");
  CHECK(svg.find("<svg") == 0);
  CHECK(svg.find("run-a") != std::string::npos);
  CHECK(svg.find("run-b") != std::string::npos);
  CHECK(svg.find("p2") != std::string::npos);
  CHECK(svg.find("mAP by polyphony") != std::string::npos);

  // Gaps draw nothing: filling the two missing values adds exactly two rects.
  g1.values[2] = 0.4;
  g2.values[1] = 0.6;
  const std::string full =
      render_grouped_bars_svg({"all", "p1", "p2"}, {g1, g2}, "mAP by polyphony");
  CHECK(count_of(full, "<rect") == count_of(svg, "<rect") + 2);
}

TEST_CASE("grouped bar svg rejects width mismatches") {
  BarGroup g;
  g.name = "run";
  g.values = {0.5};
  CHECK_THROWS_AS(render_grouped_bars_svg({"a", "b"}, {g}, "t"), std::exception);
}
