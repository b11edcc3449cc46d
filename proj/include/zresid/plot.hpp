#pragma once

// Static diagnostic figures: a CSV of the plotted points plus a self-contained
// 640x480 SVG drawn from the same numbers.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "data.hpp"
#include "error.hpp"
#include "gof_tests.hpp"
#include "lowess.hpp"
#include "normal.hpp"

namespace zresid {

enum class PlotKind { qq, chf45, scatter_lowess, grouped_box, pvalue_hist };

inline PlotKind parse_plot_kind(std::string_view s) {
  if (s == "qq") return PlotKind::qq;
  if (s == "chf45") return PlotKind::chf45;
  if (s == "scatter_lowess") return PlotKind::scatter_lowess;
  if (s == "grouped_box") return PlotKind::grouped_box;
  if (s == "pvalue_hist") return PlotKind::pvalue_hist;
  throw validation_error("unknown plot kind '" + std::string(s) + "'");
}

struct PlotSpec {
  PlotKind kind = PlotKind::qq;
  std::string x_source = "LP";  // covariate token ("x2", "x2:log") or "LP"
  std::size_t k = 10;
  std::string svg_path;
  std::string csv_path;
};

/// Plotted numbers; `rows` is written verbatim as the companion CSV.
struct PlotTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
};

struct Series {
  enum Style { points, line, step } style = points;
  std::vector<double> x, y;
};

struct BoxStats {
  double lower = 0.0, upper = 0.0;  // group interval
  std::size_t n = 0;
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0, mean = 0.0;
};

struct Figure {
  std::string title, xlabel, ylabel;
  std::vector<Series> series;
  std::vector<BoxStats> boxes;
  std::vector<std::pair<double, double>> bars;  // (lower edge, count) with common width
  double bar_width = 0.0;
  bool diagonal = false;                  // y = x reference
  std::optional<double> hline, vline;     // reference lines
  PlotTable table;
};

// ---- data ---------------------------------------------------------------------

/// Plotting positions (i - a) / (n + 1 - 2a), a = 3/8 for n <= 10 and 1/2 otherwise.
inline std::vector<double> ppoints(std::size_t n) {
  const double a = n <= 10 ? 0.375 : 0.5;
  std::vector<double> p;
  for (std::size_t i = 1; i <= n; ++i)
    p.push_back((static_cast<double>(i) - a) / (static_cast<double>(n) + 1.0 - 2.0 * a));
  return p;
}

/// Sample quantile, linear interpolation between order statistics (R type 7).
inline double quantile_sorted(const std::vector<double>& s, double prob) {
  const double h = (static_cast<double>(s.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

inline Figure qq_figure(std::span<const double> values) {
  if (values.empty()) throw validation_error("qq plot: no values");
  auto sorted = std::vector<double>(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const auto p = ppoints(sorted.size());
  Figure f{"Normal QQ plot", "theoretical quantile", "sample quantile"};
  Series s;
  f.table.columns = {"theoretical", "sample"};
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double q = normal_quantile(p[i]);
    s.x.push_back(q);
    s.y.push_back(sorted[i]);
    f.table.rows.push_back({format_double(q), format_double(sorted[i])});
  }
  f.series.push_back(std::move(s));
  f.diagonal = true;
  return f;
}

inline Figure chf45_figure(const std::vector<ChfPoint>& chf) {
  Figure f{"Cumulative hazard of Cox-Snell residuals", "Cox-Snell residual", "estimated cumulative hazard"};
  Series s;
  s.style = Series::step;
  f.table.columns = {"value", "survival", "cumulative_hazard"};
  for (const auto& c : chf) {
    f.table.rows.push_back({format_double(c.value), format_double(c.survival), format_double(c.cumulative_hazard)});
    if (std::isfinite(c.cumulative_hazard)) {
      s.x.push_back(c.value);
      s.y.push_back(c.cumulative_hazard);
    }
  }
  f.series.push_back(std::move(s));
  f.diagonal = true;
  return f;
}

inline Figure scatter_lowess_figure(std::span<const double> x, std::span<const double> residuals,
                                    const std::string& xlabel) {
  const auto curve = lowess(x, residuals);
  Figure f{"Z-residuals vs " + xlabel, xlabel, "Z-residual"};
  Series pts, line;
  line.style = Series::line;
  f.table.columns = {"series", "x", "y"};
  for (std::size_t i = 0; i < x.size(); ++i) {
    pts.x.push_back(x[i]);
    pts.y.push_back(residuals[i]);
    f.table.rows.push_back({"point", format_double(x[i]), format_double(residuals[i])});
  }
  for (std::size_t i = 0; i < curve.x.size(); ++i) {
    line.x.push_back(curve.x[i]);
    line.y.push_back(curve.fitted[i]);
    f.table.rows.push_back({"lowess", format_double(curve.x[i]), format_double(curve.fitted[i])});
  }
  f.series.push_back(std::move(pts));
  f.series.push_back(std::move(line));
  f.hline = 0.0;
  return f;
}

/// Five-number summaries of the residuals in each nonempty equal-width bin of x.
inline Figure grouped_box_figure(std::span<const double> x, std::span<const double> residuals, std::size_t k,
                                 const std::string& xlabel) {
  if (x.size() != residuals.size()) throw validation_error("grouped_box: length mismatch");
  Grouping grouping;
  const auto bin = equal_width_bins(x, k, grouping);
  std::vector<std::vector<double>> groups(k);
  for (std::size_t i = 0; i < x.size(); ++i) groups[bin[i]].push_back(residuals[i]);
  Figure f{"Z-residuals grouped by " + xlabel, xlabel, "Z-residual"};
  f.table.columns = {"group", "lower", "upper", "n", "min", "q1", "median", "q3", "max", "mean"};
  for (std::size_t b = 0; b < k; ++b) {
    auto& g = groups[b];
    if (g.empty()) continue;
    std::sort(g.begin(), g.end());
    BoxStats s;
    s.lower = grouping.boundaries[b];
    s.upper = grouping.boundaries[b + 1];
    s.n = g.size();
    s.min = g.front();
    s.max = g.back();
    s.q1 = quantile_sorted(g, 0.25);
    s.median = quantile_sorted(g, 0.5);
    s.q3 = quantile_sorted(g, 0.75);
    for (double v : g) s.mean += v;
    s.mean /= static_cast<double>(g.size());
    f.table.rows.push_back({std::to_string(b + 1), format_double(s.lower), format_double(s.upper),
                            std::to_string(s.n), format_double(s.min), format_double(s.q1), format_double(s.median),
                            format_double(s.q3), format_double(s.max), format_double(s.mean)});
    f.boxes.push_back(s);
  }
  f.hline = 0.0;
  return f;
}

/// Histogram of replicated p-values on [0, 1] with a vertical line at p_min.
inline Figure pvalue_hist_figure(std::span<const double> p_values, const std::string& test, std::size_t bins = 20) {
  if (p_values.empty()) throw validation_error("pvalue_hist: no p-values");
  if (bins < 1) throw validation_error("pvalue_hist: bins must be >= 1");
  const double pm = pmin(p_values);
  std::vector<std::size_t> counts(bins, 0);
  for (double p : p_values)
    ++counts[std::min(bins - 1, static_cast<std::size_t>(p * static_cast<double>(bins)))];
  Figure f{test + " replicated p-values, p_min = " + format_double(pm), "p-value", "count"};
  f.bar_width = 1.0 / static_cast<double>(bins);
  f.table.columns = {"lower", "upper", "count", "p_min"};
  for (std::size_t b = 0; b < bins; ++b) {
    const double lo = static_cast<double>(b) / static_cast<double>(bins);
    const double hi = static_cast<double>(b + 1) / static_cast<double>(bins);
    f.bars.emplace_back(lo, static_cast<double>(counts[b]));
    f.table.rows.push_back({format_double(lo), format_double(hi), std::to_string(counts[b]), format_double(pm)});
  }
  f.vline = pm;
  return f;
}

// ---- output -------------------------------------------------------------------

inline void write_table_csv(const PlotTable& t, std::ostream& out) {
  for (std::size_t c = 0; c < t.columns.size(); ++c) out << (c ? "," : "") << t.columns[c];
  out << '\n';
  for (const auto& row : t.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << csv_quote(row[c]);
    out << '\n';
  }
}

namespace detail {

inline std::string svg_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

/// Roughly five round tick positions covering [lo, hi].
inline std::vector<double> ticks(double lo, double hi) {
  const double raw = (hi - lo) / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  std::vector<double> out;
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * step; t += step) out.push_back(std::fabs(t) < 1e-12 * step ? 0.0 : t);
  return out;
}

}  // namespace detail

inline constexpr int kSvgWidth = 640, kSvgHeight = 480;

inline std::string render_svg(const Figure& f) {
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  auto take = [&](double x, double y) {
    if (!std::isfinite(x) || !std::isfinite(y)) return;
    xmin = std::min(xmin, x), xmax = std::max(xmax, x);
    ymin = std::min(ymin, y), ymax = std::max(ymax, y);
  };
  for (const auto& s : f.series)
    for (std::size_t i = 0; i < s.x.size(); ++i) take(s.x[i], s.y[i]);
  for (std::size_t b = 0; b < f.boxes.size(); ++b) take(static_cast<double>(b + 1), f.boxes[b].min), take(static_cast<double>(b + 1), f.boxes[b].max);
  if (!f.boxes.empty()) take(0.4, 0.0), take(static_cast<double>(f.boxes.size()) + 0.6, 0.0);
  for (const auto& [lo, c] : f.bars) take(lo, 0.0), take(lo + f.bar_width, c);
  if (f.hline) take(xmin, *f.hline);
  if (f.vline) take(*f.vline, ymin);
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (f.diagonal) {
    const double lo = std::min(xmin, ymin), hi = std::max(xmax, ymax);
    xmin = ymin = lo;
    xmax = ymax = hi;
  }
  if (xmax == xmin) xmin -= 0.5, xmax += 0.5;
  if (ymax == ymin) ymin -= 0.5, ymax += 0.5;
  const double padx = 0.04 * (xmax - xmin), pady = 0.04 * (ymax - ymin);
  xmin -= padx, xmax += padx, ymin -= pady, ymax += pady;

  const double left = 70, right = 20, top = 40, bottom = 55;
  const double pw = kSvgWidth - left - right, ph = kSvgHeight - top - bottom;
  auto sx = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto sy = [&](double y) { return top + (ymax - y) / (ymax - ymin) * ph; };
  using detail::num;

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSvgWidth << "\" height=\"" << kSvgHeight
    << "\" viewBox=\"0 0 " << kSvgWidth << ' ' << kSvgHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << kSvgWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
    << detail::svg_escape(f.title) << "</text>\n";
  o << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  if (f.boxes.empty())
    for (double t : detail::ticks(xmin, xmax))
      o << "<line x1=\"" << num(sx(t)) << "\" y1=\"" << num(top + ph) << "\" x2=\"" << num(sx(t)) << "\" y2=\""
        << num(top + ph + 5) << "\" stroke=\"black\"/><text x=\"" << num(sx(t)) << "\" y=\"" << num(top + ph + 18)
        << "\" text-anchor=\"middle\">" << format_double(t) << "</text>\n";
  for (double t : detail::ticks(ymin, ymax))
    o << "<line x1=\"" << num(left - 5) << "\" y1=\"" << num(sy(t)) << "\" x2=\"" << num(left) << "\" y2=\""
      << num(sy(t)) << "\" stroke=\"black\"/><text x=\"" << num(left - 8) << "\" y=\"" << num(sy(t) + 4)
      << "\" text-anchor=\"end\">" << format_double(t) << "</text>\n";
  o << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << kSvgHeight - 12 << "\" text-anchor=\"middle\">"
    << detail::svg_escape(f.xlabel) << "</text>\n";
  o << "<text transform=\"translate(16," << num(top + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
    << detail::svg_escape(f.ylabel) << "</text>\n";

  if (f.diagonal)
    o << "<line x1=\"" << num(sx(xmin)) << "\" y1=\"" << num(sy(xmin)) << "\" x2=\"" << num(sx(xmax)) << "\" y2=\""
      << num(sy(xmax)) << "\" stroke=\"gray\" stroke-dasharray=\"5,4\"/>\n";
  if (f.hline)
    o << "<line x1=\"" << num(left) << "\" y1=\"" << num(sy(*f.hline)) << "\" x2=\"" << num(left + pw) << "\" y2=\""
      << num(sy(*f.hline)) << "\" stroke=\"gray\" stroke-dasharray=\"5,4\"/>\n";

  for (const auto& [lo, c] : f.bars)
    o << "<rect x=\"" << num(sx(lo)) << "\" y=\"" << num(sy(c)) << "\" width=\"" << num(sx(lo + f.bar_width) - sx(lo))
      << "\" height=\"" << num(sy(0) - sy(c)) << "\" fill=\"#9ecae1\" stroke=\"#3182bd\"/>\n";

  for (std::size_t b = 0; b < f.boxes.size(); ++b) {
    const auto& s = f.boxes[b];
    const double c = static_cast<double>(b + 1), hw = 0.3;
    o << "<line x1=\"" << num(sx(c)) << "\" y1=\"" << num(sy(s.min)) << "\" x2=\"" << num(sx(c)) << "\" y2=\""
      << num(sy(s.max)) << "\" stroke=\"black\"/>\n";
    o << "<rect x=\"" << num(sx(c - hw)) << "\" y=\"" << num(sy(s.q3)) << "\" width=\"" << num(sx(c + hw) - sx(c - hw))
      << "\" height=\"" << num(sy(s.q1) - sy(s.q3)) << "\" fill=\"#dddddd\" stroke=\"black\"/>\n";
    o << "<line x1=\"" << num(sx(c - hw)) << "\" y1=\"" << num(sy(s.median)) << "\" x2=\"" << num(sx(c + hw))
      << "\" y2=\"" << num(sy(s.median)) << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << num(sx(c)) << "\" y=\"" << num(top + ph + 18) << "\" text-anchor=\"middle\">" << (b + 1)
      << "</text>\n";
  }

  for (const auto& s : f.series) {
    if (s.style == Series::points) {
      for (std::size_t i = 0; i < s.x.size(); ++i)
        o << "<circle cx=\"" << num(sx(s.x[i])) << "\" cy=\"" << num(sy(s.y[i])) << "\" r=\"2\" fill=\"#3182bd\"/>\n";
      continue;
    }
    o << "<polyline fill=\"none\" stroke=\"" << (s.style == Series::line ? "#d62728" : "black")
      << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (s.style == Series::step && i > 0) o << num(sx(s.x[i])) << ',' << num(sy(s.y[i - 1])) << ' ';
      o << num(sx(s.x[i])) << ',' << num(sy(s.y[i])) << ' ';
    }
    o << "\"/>\n";
  }
  if (f.vline)
    o << "<line x1=\"" << num(sx(*f.vline)) << "\" y1=\"" << num(top) << "\" x2=\"" << num(sx(*f.vline)) << "\" y2=\""
      << num(top + ph) << "\" stroke=\"red\" stroke-width=\"2\"/>\n";
  o << "</svg>\n";
  return o.str();
}

/// Writes the figure's SVG and CSV; throws validation_error for unwritable paths.
inline void save_figure(const Figure& f, const std::string& svg_path, const std::string& csv_path) {
  std::ofstream svg(svg_path);
  if (!svg) throw validation_error("cannot write '" + svg_path + "'");
  svg << render_svg(f);
  std::ofstream csv(csv_path);
  if (!csv) throw validation_error("cannot write '" + csv_path + "'");
  write_table_csv(f.table, csv);
  if (!svg || !csv) throw validation_error("write failed for '" + svg_path + "' or '" + csv_path + "'");
}

}  // namespace zresid
