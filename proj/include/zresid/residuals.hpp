#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "data.hpp"
#include "error.hpp"
#include "frailty_fit.hpp"
#include "normal.hpp"
#include "rng.hpp"

namespace zresid {

enum class ResidualKind { cox_snell, martingale, deviance, censored_z, z };

inline std::string_view to_string(ResidualKind k) {
  switch (k) {
    case ResidualKind::cox_snell: return "cox_snell";
    case ResidualKind::martingale: return "martingale";
    case ResidualKind::deviance: return "deviance";
    case ResidualKind::censored_z: return "censored_z";
    case ResidualKind::z: return "z";
  }
  return "?";
}

/// Accepts the CLI spellings (cs, martingale, deviance, censored-z, z) and the canonical names.
inline ResidualKind parse_residual_kind(std::string_view s) {
  if (s == "cs" || s == "cox_snell" || s == "cox-snell") return ResidualKind::cox_snell;
  if (s == "martingale") return ResidualKind::martingale;
  if (s == "deviance") return ResidualKind::deviance;
  if (s == "censored-z" || s == "censored_z") return ResidualKind::censored_z;
  if (s == "z") return ResidualKind::z;
  throw validation_error("unknown residual kind '" + std::string(s) + "'");
}

struct ResidualSet {
  ResidualKind kind = ResidualKind::z;
  std::vector<double> values;
  std::vector<int> status;
  std::vector<double> linear_predictors;
  std::optional<std::uint64_t> seed;  // only for kind == z
  std::size_t clamped = 0;            // probabilities clamped before the normal quantile
};

// Probabilities are kept inside [kProbClamp, 1 - kProbClamp] before Phi^-1.
inline constexpr double kProbClamp = 1e-12;

namespace detail {

inline ResidualSet residual_base(ResidualKind kind, const SurvivalDataset& data, const FittedValues& fv) {
  ResidualSet r;
  r.kind = kind;
  r.linear_predictors = fv.eta;
  r.status.reserve(data.size());
  for (const auto& rec : data.records()) r.status.push_back(rec.status);
  return r;
}

inline double clamped_quantile_neg(double s, std::size_t& clamped) {
  if (s < kProbClamp) {
    s = kProbClamp;
    ++clamped;
  } else if (s > 1.0 - kProbClamp) {
    s = 1.0 - kProbClamp;
    ++clamped;
  }
  return -normal_quantile(s);
}

}  // namespace detail

inline ResidualSet cox_snell(const FrailtyFit& fit, const SurvivalDataset& data) {
  const auto fv = fitted_values(fit, data);
  auto r = detail::residual_base(ResidualKind::cox_snell, data, fv);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double s = fv.survival[i];
    // S underflows to 0 only when exp(eta) H0(y) exceeds ~745; use the exponent directly then.
    r.values.push_back(s > 0.0 ? -std::log(s) : std::exp(fv.eta[i]) * fit.baseline.at(data[i].time));
  }
  return r;
}

inline ResidualSet martingale(const FrailtyFit& fit, const SurvivalDataset& data) {
  auto r = cox_snell(fit, data);
  r.kind = ResidualKind::martingale;
  for (std::size_t i = 0; i < r.values.size(); ++i) r.values[i] = r.status[i] - r.values[i];
  return r;
}

/// sgn(m) sqrt(-2 (m + delta log(delta - m))), with 0 log(.) = 0 for censored records.
inline double deviance_value(double martingale_residual, int status) {
  const double m = martingale_residual;
  const double inner = status ? m + std::log(1.0 - m) : m;
  const double sq = -2.0 * inner;
  if (!std::isfinite(sq)) return std::numeric_limits<double>::quiet_NaN();
  const double mag = std::sqrt(std::max(0.0, sq));
  return m > 0 ? mag : (m < 0 ? -mag : 0.0);
}

inline ResidualSet deviance(const FrailtyFit& fit, const SurvivalDataset& data) {
  auto r = martingale(fit, data);
  r.kind = ResidualKind::deviance;
  for (std::size_t i = 0; i < r.values.size(); ++i) {
    const double v = deviance_value(r.values[i], r.status[i]);
    if (!std::isfinite(v))
      throw numerical_error("deviance residual is not finite for record " + std::to_string(i + 1));
    r.values[i] = v;
  }
  return r;
}

inline ResidualSet censored_z(const FrailtyFit& fit, const SurvivalDataset& data) {
  const auto fv = fitted_values(fit, data);
  auto r = detail::residual_base(ResidualKind::censored_z, data, fv);
  for (double s : fv.survival) r.values.push_back(detail::clamped_quantile_neg(s, r.clamped));
  return r;
}

/// Randomized survival probability: S(y) for events, U * S(y) for censored records,
/// with U drawn from the (seed, record index) substream.
inline double randomized_survival(double survival, int status, std::uint64_t seed, std::size_t index) {
  return status ? survival : counter_uniform(seed, index) * survival;
}

inline std::vector<double> rsp(const FrailtyFit& fit, const SurvivalDataset& data, std::uint64_t seed) {
  const auto fv = fitted_values(fit, data);
  std::vector<double> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    out.push_back(randomized_survival(fv.survival[i], data[i].status, seed, i));
  return out;
}

inline ResidualSet z_residual(const FittedValues& fv, const SurvivalDataset& data, std::uint64_t seed) {
  auto r = detail::residual_base(ResidualKind::z, data, fv);
  r.seed = seed;
  for (std::size_t i = 0; i < data.size(); ++i)
    r.values.push_back(
        detail::clamped_quantile_neg(randomized_survival(fv.survival[i], data[i].status, seed, i), r.clamped));
  return r;
}

inline ResidualSet z_residual(const FrailtyFit& fit, const SurvivalDataset& data, std::uint64_t seed) {
  return z_residual(fitted_values(fit, data), data, seed);
}

inline ResidualSet compute_residuals(ResidualKind kind, const FrailtyFit& fit, const SurvivalDataset& data,
                                     std::uint64_t seed = 0) {
  switch (kind) {
    case ResidualKind::cox_snell: return cox_snell(fit, data);
    case ResidualKind::martingale: return martingale(fit, data);
    case ResidualKind::deviance: return deviance(fit, data);
    case ResidualKind::censored_z: return censored_z(fit, data);
    case ResidualKind::z: return z_residual(fit, data, seed);
  }
  throw validation_error("unknown residual kind");
}

/// CSV columns: record_id, cluster, kind, value, status, linear_predictor, seed.
inline void write_residuals_csv(const ResidualSet& r, const SurvivalDataset& data, std::ostream& out) {
  out << "record_id,cluster,kind,value,status,linear_predictor,seed\n";
  for (std::size_t i = 0; i < r.values.size(); ++i) {
    out << (i + 1) << ',' << csv_quote(data[i].cluster) << ',' << to_string(r.kind) << ','
        << format_double(r.values[i]) << ',' << r.status[i] << ',' << format_double(r.linear_predictors[i]) << ',';
    if (r.seed) out << *r.seed;
    out << '\n';
  }
}

}  // namespace zresid
