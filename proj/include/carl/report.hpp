// Rendering helpers: aligned text tables, CSV, and self-contained SVG charts
// (loss curves, grouped bars) for run comparison reports.
#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace carl {

// Locale-independent fixed-precision formatting.
std::string format_double(double v, int precision);

// Markdown-style aligned table; every row must match the header width.
std::string render_text_table(const std::vector<std::string>& header,
                              const std::vector<std::vector<std::string>>& rows);

// Minimal CSV: fields containing comma/quote/newline get quoted.
std::string render_csv(const std::vector<std::string>& header,
                       const std::vector<std::vector<std::string>>& rows);

struct CurveSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;  // (step, value)
};

std::string render_loss_curves_svg(const std::vector<CurveSeries>& series,
                                   const std::string& title);

struct BarGroup {
  std::string name;                           // one bar cluster, e.g. a run
  std::vector<std::optional<double>> values;  // one per category; gaps drawn empty
};

std::string render_grouped_bars_svg(const std::vector<std::string>& categories,
                                    const std::vector<BarGroup>& groups,
                                    const std::string& title);

}  // namespace carl
