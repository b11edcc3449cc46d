#pragma once

// Clustered Weibull / gamma-frailty data generator and the rejection-rate study
// over a grid of cluster sizes and censoring rates.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "data.hpp"
#include "error.hpp"
#include "frailty_fit.hpp"
#include "gof_tests.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "residuals.hpp"
#include "rng.hpp"

namespace zresid {

struct SimConfig {
  std::size_t clusters = 20;
  std::size_t cluster_size = 40;
  double alpha = 3.0;     // Weibull shape
  double lambda = 0.007;  // Weibull scale, H0(t) = lambda t^alpha
  std::array<double, 3> beta_true{1.0, -2.0, 0.5};  // x1, log(x2), x3
  double frailty_var = 0.5;
  double censor_rate_target = 0.0;
  double censor_gamma = 0.0;  // exponential censoring rate, 0 = no censoring

  void validate() const {
    if (!(alpha > 0.0) || !(lambda > 0.0)) throw validation_error("SimConfig: alpha and lambda must be positive");
    if (!(frailty_var >= 0.0)) throw validation_error("SimConfig: frailty variance must be >= 0");
    if (clusters < 1 || cluster_size < 1) throw validation_error("SimConfig: need g >= 1 and n_i >= 1");
    if (censor_gamma < 0.0) throw validation_error("SimConfig: censoring rate gamma must be >= 0");
  }
};

/// Failure time by inversion: t = (-log(u) / (lambda z exp(eta)))^(1/alpha).
inline double weibull_frailty_time(double u, double z, double eta, double alpha, double lambda) {
  return std::pow(-std::log(u) / (lambda * z * std::exp(eta)), 1.0 / alpha);
}

struct SimulatedSample {
  SurvivalDataset data;
  std::vector<double> frailty;   // z_i per cluster
  std::vector<double> true_eta;  // beta_true . (x1, log x2, x3) per record, without frailty
};

inline SimulatedSample generate_sample(const SimConfig& cfg, Rng& rng) {
  cfg.validate();
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution bern(0.25);
  SimulatedSample out;
  std::vector<SurvivalRecord> records;
  records.reserve(cfg.clusters * cfg.cluster_size);
  for (std::size_t i = 0; i < cfg.clusters; ++i) {
    double z = 1.0;
    if (cfg.frailty_var > 0.0) {
      std::gamma_distribution<double> gamma(1.0 / cfg.frailty_var, cfg.frailty_var);
      z = gamma(rng);
    }
    out.frailty.push_back(z);
    for (std::size_t j = 0; j < cfg.cluster_size; ++j) {
      const double x1 = unif(rng);
      double x2 = 0.0;
      while (x2 == 0.0) x2 = std::fabs(normal(rng));  // half-normal, strictly positive
      const double x3 = bern(rng) ? 1.0 : 0.0;
      double u = 0.0;
      while (u == 0.0) u = unif(rng);
      const double eta = cfg.beta_true[0] * x1 + cfg.beta_true[1] * std::log(x2) + cfg.beta_true[2] * x3;
      const double t = weibull_frailty_time(u, z, eta, cfg.alpha, cfg.lambda);
      double y = t;
      int status = 1;
      if (cfg.censor_gamma > 0.0) {
        std::exponential_distribution<double> expo(cfg.censor_gamma);
        const double c = expo(rng);
        if (!(t < c)) {
          y = c;
          status = 0;
        }
      }
      records.push_back({y, status, std::to_string(i + 1), {x1, x2, x3}});
      out.true_eta.push_back(eta);
    }
  }
  // An all-censored sample cannot be fitted; it is astronomically unlikely outside tiny configs.
  out.data = SurvivalDataset(std::move(records), {"x1", "x2", "x3"});
  return out;
}

inline SurvivalDataset generate_dataset(const SimConfig& cfg, Rng& rng) { return generate_sample(cfg, rng).data; }

/// Exponential censoring rate achieving `target` censoring, by bisection on log(gamma)
/// over a pilot sample with common random numbers (censored iff E / gamma <= t, E ~ Exp(1)).
inline double calibrate_censoring(SimConfig cfg, double target, std::size_t n_pilot, Rng& rng) {
  if (target == 0.0) return 0.0;
  if (!(target > 0.0 && target < 1.0)) throw validation_error("censoring target must lie in [0, 1)");
  if (n_pilot < 1000) throw validation_error("calibrate_censoring: pilot too small");
  cfg.censor_gamma = 0.0;
  cfg.cluster_size = std::max<std::size_t>(cfg.cluster_size, 1);
  cfg.clusters = (n_pilot + cfg.cluster_size - 1) / cfg.cluster_size;
  const auto pilot = generate_sample(cfg, rng).data;
  std::exponential_distribution<double> expo(1.0);
  std::vector<double> ratio;  // censored iff ratio <= gamma
  ratio.reserve(pilot.size());
  for (const auto& r : pilot.records()) ratio.push_back(expo(rng) / r.time);

  auto rate = [&](double gamma) {
    return static_cast<double>(std::count_if(ratio.begin(), ratio.end(), [&](double v) { return v <= gamma; })) /
           static_cast<double>(ratio.size());
  };
  double lo = std::log(1e-8), hi = std::log(1e4);
  if (rate(std::exp(lo)) > target || rate(std::exp(hi)) < target)
    throw numerical_error("calibrate_censoring: bracket does not contain the target rate");
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double r = rate(std::exp(mid));
    if (std::fabs(r - target) < 1e-4 || hi - lo < 1e-12) return std::exp(mid);
    (r < target ? lo : hi) = mid;
  }
  const double gamma = std::exp(0.5 * (lo + hi));
  if (std::fabs(rate(gamma) - target) > 0.01) throw numerical_error("calibrate_censoring: did not reach target");
  return gamma;
}

enum class SimModel { true_model, wrong_model };

inline std::string_view to_string(SimModel m) { return m == SimModel::true_model ? "true" : "wrong"; }

/// true: x1 + log(x2) + x3; wrong: x1 + x2 + x3 (linear in x2). Both with gamma frailty.
inline ModelSpec sim_model_spec(SimModel m) {
  ModelSpec spec;
  spec.terms = {CovariateTerm{"x1"},
                CovariateTerm{"x2", m == SimModel::true_model ? Transform::log : Transform::identity},
                CovariateTerm{"x3"}};
  spec.frailty = true;
  return spec;
}

struct ExperimentGrid {
  SimConfig base;
  std::vector<std::size_t> cluster_sizes{10, 40, 100};
  std::vector<double> censor_targets{0.0, 0.5};
  std::size_t replicates = 200;
  std::vector<SimModel> models{SimModel::true_model, SimModel::wrong_model};
  std::vector<TestMethod> tests{kAllTestMethods, kAllTestMethods + 7};
  std::size_t k = 10;
  CovariateTerm grouping_covariate{"x2", Transform::log};
  std::size_t pilot_size = 100000;
  FitControl control;

  /// 10 cluster sizes x 4 censoring rates x 1000 replicates.
  static ExperimentGrid full_scale() {
    ExperimentGrid g;
    g.cluster_sizes = {10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
    g.censor_targets = {0.0, 0.2, 0.5, 0.8};
    g.replicates = 1000;
    return g;
  }

  void validate() const {
    if (cluster_sizes.empty() || censor_targets.empty() || models.empty() || tests.empty() || replicates == 0)
      throw validation_error("experiment grid: lists must be nonempty and replicates >= 1");
    base.validate();
  }
};

struct RejectionRow {
  std::size_t cluster_size = 0;
  double censor_target = 0.0;
  double censor_gamma = 0.0;
  double achieved_censoring = 0.0;  // mean over replicates
  SimModel model = SimModel::true_model;
  std::string test;
  std::size_t replicates = 0;  // usable replicates (denominator)
  std::size_t failed = 0;      // fit or test failures, excluded
  std::size_t rejections = 0;
  double rejection_rate = 0.0;
  double mc_standard_error = 0.0;
};

struct ReplicateOutcome {
  double censoring = 0.0;
  // [model][test]; NaN marks a failure
  std::vector<std::vector<double>> p_values;
  std::vector<std::string> errors;
};

struct GridResult {
  std::vector<RejectionRow> rows;
  std::vector<std::pair<double, double>> gammas;  // (target, gamma)
  double seconds = 0.0;
};

/// Replicate seed depends only on (seed, cluster size, censoring target, replicate).
inline std::uint64_t cell_replicate_seed(std::uint64_t seed, std::size_t cluster_size, double target,
                                         std::size_t replicate) {
  return derive_seed(seed, {cluster_size, static_cast<std::uint64_t>(std::llround(target * 1e6)), replicate});
}

/// Seed of the single Z-residual draw for one model within a replicate.
inline std::uint64_t z_draw_seed(std::uint64_t rep_seed, SimModel model) {
  return derive_seed(rep_seed, {model == SimModel::true_model ? 1u : 2u});
}

/// One replicate of one cell: generate, fit every model, draw one Z-residual set, test.
inline ReplicateOutcome run_replicate(const ExperimentGrid& grid, const SimConfig& cfg, std::uint64_t rep_seed) {
  Rng rng(rep_seed);
  const auto data = generate_dataset(cfg, rng);
  ReplicateOutcome out;
  out.censoring = data.censoring_rate();
  for (std::size_t m = 0; m < grid.models.size(); ++m) {
    std::vector<double> p(grid.tests.size(), std::numeric_limits<double>::quiet_NaN());
    try {
      const auto fit = fit_ppl(data, sim_model_spec(grid.models[m]), grid.control);
      if (!fit.converged) throw numerical_error("fit did not converge: " + fit.message);
      const TestContext ctx(fit, data, TestOptions{grid.k, grid.grouping_covariate});
      const auto z = z_residual(ctx.fitted(), data, z_draw_seed(rep_seed, grid.models[m]));
      for (std::size_t t = 0; t < grid.tests.size(); ++t) {
        try {
          p[t] = ctx.run_on(grid.tests[t], z).p_value;
        } catch (const std::exception& e) {
          out.errors.push_back(std::string(test_name(grid.tests[t])) + ": " + e.what());
        }
      }
    } catch (const std::exception& e) {
      out.errors.push_back(std::string(to_string(grid.models[m])) + " model: " + e.what());
    }
    out.p_values.push_back(std::move(p));
  }
  return out;
}

inline GridResult run_grid(const ExperimentGrid& grid, unsigned parallelism, std::uint64_t seed) {
  grid.validate();
  const auto start = std::chrono::steady_clock::now();
  GridResult result;
  std::vector<double> gamma_of(grid.censor_targets.size());
  for (std::size_t c = 0; c < grid.censor_targets.size(); ++c) {
    Rng rng(derive_seed(seed, {0xCA11B, c}));
    SimConfig cfg = grid.base;
    gamma_of[c] = calibrate_censoring(cfg, grid.censor_targets[c], grid.pilot_size, rng);
    result.gammas.emplace_back(grid.censor_targets[c], gamma_of[c]);
  }

  struct Job {
    std::size_t size_idx, target_idx, replicate;
  };
  std::vector<Job> jobs;
  for (std::size_t s = 0; s < grid.cluster_sizes.size(); ++s)
    for (std::size_t c = 0; c < grid.censor_targets.size(); ++c)
      for (std::size_t r = 0; r < grid.replicates; ++r) jobs.push_back({s, c, r});

  std::vector<ReplicateOutcome> outcomes(jobs.size());
  parallel_for(jobs.size(), parallelism, [&](std::size_t j) {
    const Job& job = jobs[j];
    SimConfig cfg = grid.base;
    cfg.cluster_size = grid.cluster_sizes[job.size_idx];
    cfg.censor_rate_target = grid.censor_targets[job.target_idx];
    cfg.censor_gamma = gamma_of[job.target_idx];
    outcomes[j] = run_replicate(grid, cfg,
                                cell_replicate_seed(seed, cfg.cluster_size, cfg.censor_rate_target, job.replicate));
  });

  std::size_t j = 0;
  for (std::size_t s = 0; s < grid.cluster_sizes.size(); ++s)
    for (std::size_t c = 0; c < grid.censor_targets.size(); ++c) {
      const std::size_t first = j;
      j += grid.replicates;
      double cens = 0.0;
      for (std::size_t k = first; k < j; ++k) cens += outcomes[k].censoring;
      cens /= static_cast<double>(grid.replicates);
      for (std::size_t m = 0; m < grid.models.size(); ++m)
        for (std::size_t t = 0; t < grid.tests.size(); ++t) {
          RejectionRow row;
          row.cluster_size = grid.cluster_sizes[s];
          row.censor_target = grid.censor_targets[c];
          row.censor_gamma = gamma_of[c];
          row.achieved_censoring = cens;
          row.model = grid.models[m];
          row.test = std::string(test_name(grid.tests[t]));
          for (std::size_t k = first; k < j; ++k) {
            const double p = outcomes[k].p_values[m][t];
            if (std::isnan(p)) {
              ++row.failed;
              continue;
            }
            ++row.replicates;
            if (p < 0.05) ++row.rejections;
          }
          if (row.replicates > 0) {
            const double n = static_cast<double>(row.replicates);
            row.rejection_rate = static_cast<double>(row.rejections) / n;
            row.mc_standard_error = std::sqrt(row.rejection_rate * (1.0 - row.rejection_rate) / n);
          }
          result.rows.push_back(std::move(row));
        }
    }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

/// Long-format table, one row per (cell, model, test).
inline void write_grid_csv(const GridResult& result, std::ostream& out) {
  out << "cluster_size,censor_target,censor_gamma,achieved_censoring,model,test,replicates,failed,rejections,"
         "rejection_rate,mc_standard_error\n";
  for (const auto& r : result.rows) {
    out << r.cluster_size << ',' << format_double(r.censor_target) << ',' << format_double(r.censor_gamma) << ','
        << format_double(r.achieved_censoring) << ',' << to_string(r.model) << ',' << r.test << ',' << r.replicates
        << ',' << r.failed << ',' << r.rejections << ',' << format_double(r.rejection_rate) << ','
        << format_double(r.mc_standard_error) << '\n';
  }
}

inline const RejectionRow* find_row(const GridResult& result, std::size_t cluster_size, double target, SimModel model,
                                    std::string_view test) {
  for (const auto& r : result.rows)
    if (r.cluster_size == cluster_size && r.censor_target == target && r.model == model && r.test == test) return &r;
  return nullptr;
}

}  // namespace zresid
