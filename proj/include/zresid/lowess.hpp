#pragma once

// Locally weighted linear smoothing with tricube neighbourhood weights and
// bisquare robustness reweighting.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "error.hpp"

namespace zresid {

struct LowessCurve {
  std::vector<double> x;  // ascending
  std::vector<double> fitted;
};

namespace detail {

inline double tricube(double u) {
  if (u >= 1.0) return 0.0;
  const double t = 1.0 - u * u * u;
  return t * t * t;
}

inline double median_of(std::vector<double> v) {
  const std::size_t m = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), v.end());
  const double hi = v[m];
  if (v.size() % 2) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m)));
}

}  // namespace detail

inline LowessCurve lowess(std::span<const double> x, std::span<const double> y, double span = 2.0 / 3.0,
                          int iterations = 3) {
  const std::size_t n = x.size();
  if (y.size() != n) throw validation_error("lowess: length mismatch");
  if (n < 5) throw validation_error("lowess needs at least 5 points");
  if (!(span > 0.0 && span <= 1.0)) throw validation_error("lowess: span must lie in (0, 1]");
  if (iterations < 0) throw validation_error("lowess: iterations must be >= 0");
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw validation_error("lowess: non-finite input");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  LowessCurve out;
  std::vector<double> ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.x.push_back(x[order[i]]);
    ys[i] = y[order[i]];
  }
  const auto& xs = out.x;
  if (xs.front() == xs.back()) throw validation_error("lowess: all x values are equal");

  const std::size_t r = std::clamp<std::size_t>(static_cast<std::size_t>(span * static_cast<double>(n) + 1e-7), 2, n);
  std::vector<double> robust(n, 1.0), fit(n), w(n), dist(n);

  for (int pass = 0; pass <= iterations; ++pass) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) dist[j] = std::fabs(xs[j] - xs[i]);
      std::vector<double> sorted = dist;
      std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(r - 1), sorted.end());
      double h = sorted[r - 1];
      double sw = 0.0, sx = 0.0, sy = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        w[j] = robust[j] * (h > 0.0 ? detail::tricube(dist[j] / (h * (1.0 + 1e-12))) : (dist[j] == 0.0 ? 1.0 : 0.0));
        sw += w[j];
        sx += w[j] * xs[j];
        sy += w[j] * ys[j];
      }
      if (sw <= 0.0) {
        fit[i] = ys[i];
        continue;
      }
      const double mx = sx / sw, my = sy / sw;
      double sxx = 0.0, sxy = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        sxx += w[j] * (xs[j] - mx) * (xs[j] - mx);
        sxy += w[j] * (xs[j] - mx) * (ys[j] - my);
      }
      const double range = xs.back() - xs.front();
      fit[i] = sxx > 1e-12 * range * range * sw ? my + sxy / sxx * (xs[i] - mx) : my;
    }
    if (pass == iterations) break;
    std::vector<double> abs_res(n);
    double mean_abs_y = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      abs_res[j] = std::fabs(ys[j] - fit[j]);
      mean_abs_y += std::fabs(ys[j]);
    }
    const double s = detail::median_of(abs_res);
    if (s <= 1e-12 * (1.0 + mean_abs_y / static_cast<double>(n))) break;  // essentially exact fit
    for (std::size_t j = 0; j < n; ++j) {
      const double u = abs_res[j] / (6.0 * s);
      robust[j] = u < 1.0 ? (1.0 - u * u) * (1.0 - u * u) : 0.0;
    }
  }
  out.fitted = std::move(fit);
  return out;
}

}  // namespace zresid
