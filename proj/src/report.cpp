#include "carl/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "carl/common.hpp"

namespace carl {

namespace {

const char* kPalette[] = {"#4477aa", "#ee6677", "#228833", "#ccbb44",
                          "#66ccee", "#aa3377", "#bbbbbb", "#222222"};
constexpr int kPaletteSize = 8;

std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

// Round a raw axis bound to a tidy tick step.
double nice_step(double span) {
  if (span <= 0) return 1.0;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double frac = raw / mag;
  double step = 10.0;
  if (frac <= 1.0) {
    step = 1.0;
  } else if (frac <= 2.0) {
    step = 2.0;
  } else if (frac <= 5.0) {
    step = 5.0;
  }
  return step * mag;
}

}  // namespace

std::string format_double(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

std::string render_text_table(const std::vector<std::string>& header,
                              const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& row : rows) {
    if (row.size() != header.size()) {
      throw PipelineError("table row width mismatch");
    }
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  auto line = [&](const std::vector<std::string>& cells) {
    std::ostringstream out;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      out << "| " << cells[c] << std::string(width[c] - cells[c].size(), ' ') << ' ';
    }
    out << "|\n";
    return out.str();
  };
  std::ostringstream out;
  out << line(header);
  for (std::size_t c = 0; c < header.size(); ++c) {
    out << '|' << std::string(width[c] + 2, '-');
  }
  out << "|\n";
  for (const auto& row : rows) out << line(row);
  return out.str();
}

std::string render_csv(const std::vector<std::string>& header,
                       const std::vector<std::vector<std::string>>& rows) {
  auto field = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
      if (c == '"') out += '"';
      out += c;
    }
    out += '"';
    return out;
  };
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c > 0) out << ',';
      out << field(cells[c]);
    }
    out << '\n';
  };
  line(header);
  for (const auto& row : rows) {
    if (row.size() != header.size()) {
      throw PipelineError("csv row width mismatch");
    }
    line(row);
  }
  return out.str();
}

std::string render_loss_curves_svg(const std::vector<CurveSeries>& series,
                                   const std::string& title) {
  constexpr double kW = 720, kH = 420;
  constexpr double kLeft = 70, kRight = 180, kTop = 50, kBottom = 50;
  const double plot_w = kW - kLeft - kRight;
  const double plot_h = kH - kTop - kBottom;

  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
  bool any = false;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(y)) continue;
      if (!any) {
        x_min = x_max = x;
        y_min = y_max = y;
        any = true;
      } else {
        x_min = std::min(x_min, x);
        x_max = std::max(x_max, x);
        y_min = std::min(y_min, y);
        y_max = std::max(y_max, y);
      }
    }
  }
  if (x_max <= x_min) x_max = x_min + 1;
  if (y_max <= y_min) y_max = y_min + 1;
  const double pad = 0.05 * (y_max - y_min);
  y_min -= pad;
  y_max += pad;

  auto px = [&](double x) { return kLeft + (x - x_min) / (x_max - x_min) * plot_w; };
  auto py = [&](double y) { return kTop + (1.0 - (y - y_min) / (y_max - y_min)) * plot_h; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" viewBox=\"0 0 " << kW << ' ' << kH << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\""
      << " font-size=\"16\">" << svg_escape(title) << "</text>\n";

  const double y_step = nice_step(y_max - y_min);
  for (double y = std::ceil(y_min / y_step) * y_step; y <= y_max + 1e-12; y += y_step) {
    svg << "<line x1=\"" << kLeft << "\" y1=\"" << py(y) << "\" x2=\"" << kLeft + plot_w
        << "\" y2=\"" << py(y) << "\" stroke=\"#dddddd\"/>\n";
    svg << "<text x=\"" << kLeft - 8 << "\" y=\"" << py(y) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
        << format_double(y, 3) << "</text>\n";
  }
  const double x_step = nice_step(x_max - x_min);
  for (double x = std::ceil(x_min / x_step) * x_step; x <= x_max + 1e-12; x += x_step) {
    svg << "<text x=\"" << px(x) << "\" y=\"" << kTop + plot_h + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
        << format_double(x, 0) << "</text>\n";
  }
  svg << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << plot_w << "\" height=\""
      << plot_h << "\" fill=\"none\" stroke=\"#444444\"/>\n";

  int color = 0;
  double legend_y = kTop + 10;
  for (const auto& s : series) {
    const char* stroke = kPalette[color % kPaletteSize];
    std::ostringstream pts;
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(y)) continue;
      pts << px(x) << ',' << py(y) << ' ';
    }
    svg << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\"" << stroke
        << "\" stroke-width=\"1.5\"/>\n";
    svg << "<line x1=\"" << kLeft + plot_w + 12 << "\" y1=\"" << legend_y << "\" x2=\""
        << kLeft + plot_w + 34 << "\" y2=\"" << legend_y << "\" stroke=\"" << stroke
        << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << kLeft + plot_w + 40 << "\" y=\"" << legend_y + 4
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << svg_escape(s.name)
        << "</text>\n";
    legend_y += 18;
    ++color;
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string render_grouped_bars_svg(const std::vector<std::string>& categories,
                                    const std::vector<BarGroup>& groups,
                                    const std::string& title) {
  constexpr double kW = 760, kH = 440;
  constexpr double kLeft = 70, kRight = 200, kTop = 50, kBottom = 70;
  const double plot_w = kW - kLeft - kRight;
  const double plot_h = kH - kTop - kBottom;

  double y_max = 0.0;
  for (const auto& g : groups) {
    if (g.values.size() != categories.size()) {
      throw PipelineError("bar group width mismatch");
    }
    for (const auto& v : g.values) {
      if (v.has_value()) y_max = std::max(y_max, *v);
    }
  }
  if (y_max <= 0) y_max = 1.0;
  y_max *= 1.1;

  auto py = [&](double y) { return kTop + (1.0 - y / y_max) * plot_h; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" viewBox=\"0 0 " << kW << ' ' << kH << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\""
      << " font-size=\"16\">" << svg_escape(title) << "</text>\n";

  const double y_step = nice_step(y_max);
  for (double y = 0.0; y <= y_max + 1e-12; y += y_step) {
    svg << "<line x1=\"" << kLeft << "\" y1=\"" << py(y) << "\" x2=\"" << kLeft + plot_w
        << "\" y2=\"" << py(y) << "\" stroke=\"#dddddd\"/>\n";
    svg << "<text x=\"" << kLeft - 8 << "\" y=\"" << py(y) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
        << format_double(y, 2) << "</text>\n";
  }

  const std::size_t n_cat = categories.size();
  const std::size_t n_grp = std::max<std::size_t>(1, groups.size());
  const double cat_w = plot_w / std::max<std::size_t>(1, n_cat);
  const double bar_w = 0.8 * cat_w / static_cast<double>(n_grp);

  for (std::size_t c = 0; c < n_cat; ++c) {
    const double x0 = kLeft + cat_w * static_cast<double>(c) + 0.1 * cat_w;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const auto& v = groups[g].values[c];
      if (!v.has_value()) continue;
      const double x = x0 + bar_w * static_cast<double>(g);
      svg << "<rect x=\"" << x << "\" y=\"" << py(*v) << "\" width=\"" << bar_w * 0.92
          << "\" height=\"" << py(0.0) - py(*v) << "\" fill=\""
          << kPalette[g % kPaletteSize] << "\"/>\n";
    }
    svg << "<text x=\"" << kLeft + cat_w * (static_cast<double>(c) + 0.5) << "\" y=\""
        << kTop + plot_h + 20 << "\" text-anchor=\"middle\" font-family=\"sans-serif\""
        << " font-size=\"12\">" << svg_escape(categories[c]) << "</text>\n";
  }
  svg << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << plot_w << "\" height=\""
      << plot_h << "\" fill=\"none\" stroke=\"#444444\"/>\n";

  double legend_y = kTop + 10;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    svg << "<rect x=\"" << kLeft + plot_w + 12 << "\" y=\"" << legend_y - 9
        << "\" width=\"12\" height=\"12\" fill=\"" << kPalette[g % kPaletteSize] << "\"/>\n";
    svg << "<text x=\"" << kLeft + plot_w + 30 << "\" y=\"" << legend_y + 2
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << svg_escape(groups[g].name)
        << "</text>\n";
    legend_y += 18;
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace carl
