#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "data.hpp"
#include "error.hpp"

namespace zresid {

enum class Transform { identity, log };

/// One model covariate: a dataset column, optionally log-transformed.
struct CovariateTerm {
  std::string column;
  Transform transform = Transform::identity;

  /// Display label, e.g. "x1" or "log(x2)".
  std::string label() const {
    return transform == Transform::log ? "log(" + column + ")" : column;
  }
  /// Command-line token, e.g. "x1" or "x2:log".
  std::string token() const { return transform == Transform::log ? column + ":log" : column; }

  double apply(double raw) const {
    if (transform == Transform::identity) return raw;
    if (!(raw > 0.0))
      throw validation_error("log transform of column '" + column + "' needs positive values, got " +
                             format_double(raw));
    return std::log(raw);
  }

  friend bool operator==(const CovariateTerm&, const CovariateTerm&) = default;
};

/// Parses "name" or "name:log".
inline CovariateTerm parse_term(std::string_view token) {
  CovariateTerm t;
  const auto colon = token.rfind(':');
  if (colon != std::string_view::npos) {
    const auto suffix = token.substr(colon + 1);
    if (suffix == "log") {
      t.transform = Transform::log;
    } else if (suffix != "identity") {
      throw validation_error("unknown covariate transform '" + std::string(suffix) + "'");
    }
    token = token.substr(0, colon);
  }
  if (token.empty()) throw validation_error("empty covariate name");
  t.column = std::string(token);
  return t;
}

struct ModelSpec {
  std::vector<CovariateTerm> terms;
  bool frailty = true;

  std::size_t size() const { return terms.size(); }
  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    for (const auto& t : terms) out.push_back(t.label());
    return out;
  }
};

/// Positions of each term's source column within `columns`.
inline std::vector<std::size_t> resolve_columns(const ModelSpec& spec,
                                                const std::vector<std::string>& columns) {
  std::vector<std::size_t> idx;
  for (const auto& t : spec.terms) {
    auto it = std::find(columns.begin(), columns.end(), t.column);
    if (it == columns.end()) throw validation_error("covariate column '" + t.column + "' not in dataset");
    idx.push_back(static_cast<std::size_t>(it - columns.begin()));
  }
  return idx;
}

inline Eigen::RowVectorXd design_row(const ModelSpec& spec, const std::vector<std::size_t>& columns,
                                     const std::vector<double>& raw) {
  Eigen::RowVectorXd row(static_cast<Eigen::Index>(spec.size()));
  for (std::size_t k = 0; k < spec.size(); ++k)
    row(static_cast<Eigen::Index>(k)) = spec.terms[k].apply(raw[columns[k]]);
  return row;
}

inline Eigen::MatrixXd design_matrix(const SurvivalDataset& data, const ModelSpec& spec) {
  const auto cols = resolve_columns(spec, data.covariate_names());
  Eigen::MatrixXd x(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(spec.size()));
  for (std::size_t i = 0; i < data.size(); ++i)
    x.row(static_cast<Eigen::Index>(i)) = design_row(spec, cols, data[i].covariates);
  return x;
}

}  // namespace zresid
