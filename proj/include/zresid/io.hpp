#pragma once

// JSON documents: fitted models (round-trippable), test reports, grid configs.

#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "frailty_fit.hpp"
#include "gof_tests.hpp"
#include "sim.hpp"

namespace zresid {

using json = nlohmann::ordered_json;

inline constexpr int kFitFormatVersion = 1;

namespace detail {

// NaN is stored as null.
inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline double number_from(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

}  // namespace detail

inline json fit_to_json(const FrailtyFit& fit) {
  json j;
  j["format"] = "zresid-fit";
  j["version"] = kFitFormatVersion;
  j["converged"] = fit.converged;
  j["no_frailty_evidence"] = fit.no_frailty_evidence;
  j["message"] = fit.message;
  j["frailty"] = fit.spec.frailty;
  j["terms"] = json::array();
  for (const auto& t : fit.spec.terms) j["terms"].push_back({{"column", t.column}, {"token", t.token()}, {"label", t.label()}});
  j["input_columns"] = fit.input_columns;
  j["coefficients"] = json::array();
  for (std::size_t k = 0; k < fit.spec.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    j["coefficients"].push_back({{"term", fit.spec.terms[k].label()},
                                 {"estimate", fit.beta(kk)},
                                 {"std_error", detail::number_or_null(fit.stderr_beta(kk))}});
  }
  j["theta"] = fit.theta;
  j["variance_estimator"] = kVarianceEstimator;
  j["clusters"] = json::array();
  for (std::size_t c = 0; c < fit.cluster_labels.size(); ++c)
    j["clusters"].push_back({{"label", fit.cluster_labels[c]}, {"u", fit.u(static_cast<Eigen::Index>(c))}});
  j["baseline"] = {{"times", fit.baseline.event_times}, {"increments", fit.baseline.increments}};
  j["loglik"] = {{"penalized", fit.ppl},
                 {"partial", fit.partial_loglik},
                 {"marginal", fit.marginal_loglik},
                 {"aic", fit.aic},
                 {"aic_definition", kAicDefinition}};
  j["iterations"] = {{"inner", fit.inner_iterations}, {"outer", fit.outer_iterations}, {"max_gradient", fit.max_gradient}};
  j["ppl_trace"] = fit.ppl_trace;
  j["theta_trace"] = json::array();
  for (const auto& s : fit.theta_trace)
    j["theta_trace"].push_back({{"theta", s.theta}, {"marginal_loglik", s.marginal_loglik}, {"inner_iterations", s.inner_iterations}});
  return j;
}

inline FrailtyFit fit_from_json(const json& j) {
  try {
    if (j.at("format") != "zresid-fit") throw validation_error("not a fitted-model document");
    if (j.at("version").get<int>() != kFitFormatVersion) throw validation_error("unsupported fit document version");
    FrailtyFit fit;
    fit.converged = j.at("converged").get<bool>();
    fit.no_frailty_evidence = j.at("no_frailty_evidence").get<bool>();
    fit.message = j.at("message").get<std::string>();
    fit.spec.frailty = j.at("frailty").get<bool>();
    for (const auto& t : j.at("terms")) fit.spec.terms.push_back(parse_term(t.at("token").get<std::string>()));
    fit.input_columns = j.at("input_columns").get<std::vector<std::string>>();
    const auto& coef = j.at("coefficients");
    if (coef.size() != fit.spec.size()) throw validation_error("coefficient count does not match terms");
    fit.beta.resize(static_cast<Eigen::Index>(coef.size()));
    fit.stderr_beta.resize(static_cast<Eigen::Index>(coef.size()));
    for (std::size_t k = 0; k < coef.size(); ++k) {
      fit.beta(static_cast<Eigen::Index>(k)) = coef[k].at("estimate").get<double>();
      fit.stderr_beta(static_cast<Eigen::Index>(k)) = detail::number_from(coef[k].at("std_error"));
    }
    fit.theta = j.at("theta").get<double>();
    const auto& cl = j.at("clusters");
    fit.u.resize(static_cast<Eigen::Index>(cl.size()));
    for (std::size_t c = 0; c < cl.size(); ++c) {
      fit.cluster_labels.push_back(cl[c].at("label").get<std::string>());
      fit.u(static_cast<Eigen::Index>(c)) = cl[c].at("u").get<double>();
    }
    fit.baseline = BaselineHazard::from_increments(j.at("baseline").at("times").get<std::vector<double>>(),
                                                   j.at("baseline").at("increments").get<std::vector<double>>());
    if (fit.baseline.event_times.size() != fit.baseline.increments.size())
      throw validation_error("baseline times and increments differ in length");
    const auto& ll = j.at("loglik");
    fit.ppl = ll.at("penalized").get<double>();
    fit.partial_loglik = ll.at("partial").get<double>();
    fit.marginal_loglik = ll.at("marginal").get<double>();
    fit.aic = ll.at("aic").get<double>();
    fit.inner_iterations = j.at("iterations").at("inner").get<int>();
    fit.outer_iterations = j.at("iterations").at("outer").get<int>();
    fit.max_gradient = j.at("iterations").at("max_gradient").get<double>();
    fit.ppl_trace = j.at("ppl_trace").get<std::vector<double>>();
    for (const auto& s : j.at("theta_trace"))
      fit.theta_trace.push_back({s.at("theta").get<double>(), s.at("marginal_loglik").get<double>(),
                                 s.at("inner_iterations").get<int>()});
    return fit;
  } catch (const json::exception& e) {
    throw validation_error(std::string("malformed fit document: ") + e.what());
  }
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw validation_error("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw validation_error("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline void write_json_file(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw validation_error("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
  if (!out) throw validation_error("I/O error while writing '" + path + "'");
}

inline FrailtyFit load_fit(const std::string& path) { return fit_from_json(read_json_file(path)); }

// ---- test reports -------------------------------------------------------------

inline json grouping_json(const Grouping& g) {
  return {{"k", g.k}, {"boundaries", g.boundaries}, {"counts", g.counts}, {"nonempty", g.nonempty}};
}

inline json report_to_json(const TestReport& r) {
  json j;
  j["test"] = r.test_name;
  j["statistic"] = detail::number_or_null(r.statistic);
  j["p_value"] = r.p_value;
  j["n"] = r.n;
  if (r.covariate_label) j["covariate"] = *r.covariate_label;
  if (r.grouping) j["grouping"] = grouping_json(*r.grouping);
  if (r.degenerate) j["degenerate"] = true;
  return j;
}

inline json replication_to_json(const ReplicationReport& r) {
  json j;
  j["test"] = r.test_name;
  if (r.covariate_label) j["covariate"] = *r.covariate_label;
  j["replicates"] = r.replicates;
  j["p_min"] = r.p_min;
  j["p_values"] = r.p_values;
  j["statistics"] = json::array();
  for (double s : r.statistics) j["statistics"].push_back(detail::number_or_null(s));
  j["seeds"] = r.seeds;
  return j;
}

/// One row per replicate: test, replicate, seed, statistic, p_value.
inline void write_replication_csv(const ReplicationReport& r, std::ostream& out) {
  out << "test,replicate,seed,statistic,p_value\n";
  for (std::size_t i = 0; i < r.p_values.size(); ++i)
    out << r.test_name << ',' << (i + 1) << ',' << r.seeds[i] << ',' << format_double(r.statistics[i]) << ','
        << format_double(r.p_values[i]) << '\n';
}

// ---- simulation config ----------------------------------------------------------

/// Grid config. Every key is optional; "profile": "full" starts from the full-scale grid.
///   {"profile": "desk", "seed": 1, "parallelism": 4, "replicates": 200,
///    "cluster_sizes": [10, 40, 100], "censor_targets": [0, 0.5],
///    "models": ["true", "wrong"], "tests": ["z-sw", ...], "k": 10, "pilot_size": 100000,
///    "clusters": 20, "alpha": 3, "lambda": 0.007, "beta": [1, -2, 0.5], "frailty_var": 0.5}
struct SimRunConfig {
  ExperimentGrid grid;
  std::uint64_t seed = 1;
  unsigned parallelism = 0;  // 0: default_parallelism()
};

inline SimRunConfig sim_config_from_json(const json& j) {
  try {
    SimRunConfig c;
    if (j.contains("profile")) {
      const auto p = j.at("profile").get<std::string>();
      if (p == "full") c.grid = ExperimentGrid::full_scale();
      else if (p != "desk") throw validation_error("unknown profile '" + p + "'");
    }
    auto& g = c.grid;
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("parallelism")) c.parallelism = j.at("parallelism").get<unsigned>();
    if (j.contains("replicates")) g.replicates = j.at("replicates").get<std::size_t>();
    if (j.contains("cluster_sizes")) g.cluster_sizes = j.at("cluster_sizes").get<std::vector<std::size_t>>();
    if (j.contains("censor_targets")) g.censor_targets = j.at("censor_targets").get<std::vector<double>>();
    if (j.contains("models")) {
      g.models.clear();
      for (const auto& m : j.at("models")) {
        const auto s = m.get<std::string>();
        if (s == "true") g.models.push_back(SimModel::true_model);
        else if (s == "wrong") g.models.push_back(SimModel::wrong_model);
        else throw validation_error("unknown model '" + s + "' (expected true or wrong)");
      }
    }
    if (j.contains("tests")) {
      g.tests.clear();
      for (const auto& t : j.at("tests")) g.tests.push_back(parse_test_method(t.get<std::string>()));
    }
    if (j.contains("k")) g.k = j.at("k").get<std::size_t>();
    if (j.contains("pilot_size")) g.pilot_size = j.at("pilot_size").get<std::size_t>();
    if (j.contains("clusters")) g.base.clusters = j.at("clusters").get<std::size_t>();
    if (j.contains("alpha")) g.base.alpha = j.at("alpha").get<double>();
    if (j.contains("lambda")) g.base.lambda = j.at("lambda").get<double>();
    if (j.contains("frailty_var")) g.base.frailty_var = j.at("frailty_var").get<double>();
    if (j.contains("beta")) {
      const auto b = j.at("beta").get<std::vector<double>>();
      if (b.size() != 3) throw validation_error("beta must have 3 entries");
      g.base.beta_true = {b[0], b[1], b[2]};
    }
    for (double t : g.censor_targets)
      if (!(t >= 0.0 && t < 1.0)) throw validation_error("censor targets must lie in [0, 1)");
    for (auto s : g.cluster_sizes)
      if (s < 1) throw validation_error("cluster sizes must be >= 1");
    g.validate();
    return c;
  } catch (const json::exception& e) {
    throw validation_error(std::string("malformed simulation config: ") + e.what());
  }
}

inline json sim_manifest(const SimRunConfig& cfg, const GridResult& result, unsigned parallelism) {
  json j;
  j["tool"] = "zresid";
  j["seed"] = cfg.seed;
  j["parallelism"] = parallelism;
  j["seconds"] = result.seconds;
  j["compiler"] = __VERSION__;
  j["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
               std::to_string(EIGEN_MINOR_VERSION);
  const auto& g = cfg.grid;
  j["grid"] = {{"replicates", g.replicates},
               {"cluster_sizes", g.cluster_sizes},
               {"censor_targets", g.censor_targets},
               {"k", g.k},
               {"pilot_size", g.pilot_size},
               {"clusters", g.base.clusters},
               {"alpha", g.base.alpha},
               {"lambda", g.base.lambda},
               {"beta", g.base.beta_true},
               {"frailty_var", g.base.frailty_var}};
  j["grid"]["models"] = json::array();
  for (auto m : g.models) j["grid"]["models"].push_back(std::string(to_string(m)));
  j["grid"]["tests"] = json::array();
  for (auto t : g.tests) j["grid"]["tests"].push_back(std::string(test_name(t)));
  j["censoring_calibration"] = json::array();
  for (const auto& [target, gamma] : result.gammas) j["censoring_calibration"].push_back({{"target", target}, {"gamma", gamma}});
  j["replicate_seed"] = "derive_seed(seed, {cluster_size, round(censor_target * 1e6), replicate})";
  std::size_t failed = 0;
  for (const auto& r : result.rows) failed += r.failed;
  j["failed_test_evaluations"] = failed;
  return j;
}

}  // namespace zresid
