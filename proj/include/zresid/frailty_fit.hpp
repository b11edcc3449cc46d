#pragma once

// Shared gamma-frailty proportional hazards fit by penalized partial likelihood.
//
// Linear predictor eta_ij = x_ij beta + u_i with u_i = log z_i, z_i ~ Gamma(1/theta, theta)
// (mean 1, variance theta). For fixed theta the inner loop maximizes
//   ppl(beta, u) = partial(beta, u) + sum_i log f_U(u_i | theta)
// by Newton-Raphson with step-halving. The outer loop maximizes the profile
// marginal log-likelihood of theta, obtained by integrating the gamma frailties
// out analytically with the Breslow baseline plugged in. At the inner optimum
// exp(u_i) = (1/theta + D_i) / (1/theta + A_i), the EM fixed point, so the
// closed form below is the marginal likelihood profiled over beta and the
// baseline jumps.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "data.hpp"
#include "error.hpp"
#include "model.hpp"

namespace zresid {

/// Right-continuous step function estimate of the baseline cumulative hazard.
struct BaselineHazard {
  std::vector<double> event_times;  // strictly increasing
  std::vector<double> increments;
  std::vector<double> cumulative;

  double at(double t) const {
    auto it = std::upper_bound(event_times.begin(), event_times.end(), t);
    if (it == event_times.begin()) return 0.0;
    return cumulative[static_cast<std::size_t>(it - event_times.begin()) - 1];
  }

  /// Jump at exactly t, zero if t is not an event time.
  double increment_at(double t) const {
    auto it = std::lower_bound(event_times.begin(), event_times.end(), t);
    if (it == event_times.end() || *it != t) return 0.0;
    return increments[static_cast<std::size_t>(it - event_times.begin())];
  }

  static BaselineHazard from_increments(std::vector<double> times, std::vector<double> increments) {
    BaselineHazard h{std::move(times), std::move(increments), {}};
    double acc = 0.0;
    for (double d : h.increments) h.cumulative.push_back(acc += d);
    return h;
  }
};

struct FitControl {
  double tol = 1e-6;        // max-norm of the ppl gradient (inner)
  double outer_tol = 1e-5;  // |delta log theta| (outer)
  int max_inner = 50;
  int max_outer = 100;
  double theta_lower = 1e-4;
  double theta_upper = 10.0;
  double theta_init = 0.5;  // used only to seed the first inner solve
};

struct OuterStep {
  double theta = 0.0;
  double marginal_loglik = 0.0;
  int inner_iterations = 0;
};

struct FrailtyFit {
  ModelSpec spec;
  std::vector<std::string> input_columns;  // dataset covariate columns at fit time
  std::vector<std::string> cluster_labels;

  Eigen::VectorXd beta;
  Eigen::VectorXd u;
  double theta = 0.0;
  BaselineHazard baseline;
  Eigen::VectorXd stderr_beta;

  bool converged = false;
  bool no_frailty_evidence = false;
  std::string message;
  int inner_iterations = 0;
  int outer_iterations = 0;
  std::vector<double> ppl_trace;
  std::vector<OuterStep> theta_trace;

  double ppl = 0.0;
  double partial_loglik = 0.0;
  double marginal_loglik = 0.0;
  double aic = 0.0;
  double max_gradient = 0.0;

  std::optional<std::size_t> cluster_index(const std::string& label) const {
    auto it = std::find(cluster_labels.begin(), cluster_labels.end(), label);
    if (it == cluster_labels.end()) return std::nullopt;
    return static_cast<std::size_t>(it - cluster_labels.begin());
  }
};

inline constexpr const char* kVarianceEstimator = "inverse negative Hessian of the penalized partial likelihood, beta block";
inline constexpr const char* kAicDefinition = "-2 * profile marginal loglik + 2 * (number of beta + 1 if frailty)";

namespace detail {

inline std::vector<double> times_of(const SurvivalDataset& d) {
  std::vector<double> t;
  t.reserve(d.size());
  for (const auto& r : d.records()) t.push_back(r.time);
  return t;
}
inline std::vector<int> status_of(const SurvivalDataset& d) {
  std::vector<int> s;
  s.reserve(d.size());
  for (const auto& r : d.records()) s.push_back(r.status);
  return s;
}
inline std::vector<std::size_t> clusters_of(const SurvivalDataset& d) {
  std::vector<std::size_t> c;
  c.reserve(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) c.push_back(d.cluster_of(i));
  return c;
}

/// Record indices sorted by decreasing time, and [begin, end) ranges of tied times.
struct TimeGroups {
  std::vector<std::size_t> order;
  std::vector<std::pair<std::size_t, std::size_t>> groups;

  explicit TimeGroups(std::span<const double> time) : order(time.size()) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return time[a] > time[b]; });
    for (std::size_t k = 0; k < order.size();) {
      std::size_t e = k + 1;
      while (e < order.size() && time[order[e]] == time[order[k]]) ++e;
      groups.emplace_back(k, e);
      k = e;
    }
  }
};

inline Eigen::VectorXd linear_predictor(const Eigen::MatrixXd& x, const Eigen::VectorXd& beta,
                                        std::span<const std::size_t> cluster, const Eigen::VectorXd& u) {
  Eigen::VectorXd eta = x.cols() > 0 ? Eigen::VectorXd(x * beta) : Eigen::VectorXd::Zero(x.rows());
  if (u.size() > 0)
    for (Eigen::Index i = 0; i < eta.size(); ++i) eta(i) += u(static_cast<Eigen::Index>(cluster[static_cast<std::size_t>(i)]));
  return eta;
}

}  // namespace detail

/// Cox partial log-likelihood with Breslow ties, as a function of the linear predictor.
inline double partial_loglik(std::span<const double> eta, std::span<const double> time,
                             std::span<const int> status) {
  if (eta.size() != time.size() || eta.size() != status.size())
    throw validation_error("partial_loglik: dimension mismatch");
  for (double e : eta)
    if (!std::isfinite(e)) throw numerical_error("partial_loglik: non-finite linear predictor");
  const double shift = *std::max_element(eta.begin(), eta.end());
  const detail::TimeGroups tg(time);
  double s0 = 0.0, value = 0.0;
  bool any_event = false;
  for (auto [b, e] : tg.groups) {
    int d = 0;
    double eta_events = 0.0;
    for (std::size_t k = b; k < e; ++k) {
      const std::size_t i = tg.order[k];
      s0 += std::exp(eta[i] - shift);
      if (status[i]) {
        ++d;
        eta_events += eta[i];
      }
    }
    if (d > 0) {
      any_event = true;
      value += eta_events - d * (std::log(s0) + shift);
    }
  }
  if (!any_event) throw validation_error("partial_loglik: no events");
  return value;
}

inline double partial_loglik(const Eigen::VectorXd& beta, const Eigen::VectorXd& u,
                             const SurvivalDataset& data, const ModelSpec& spec) {
  const Eigen::MatrixXd x = design_matrix(data, spec);
  if (beta.size() != x.cols()) throw validation_error("partial_loglik: beta has wrong length");
  if (u.size() != 0 && u.size() != static_cast<Eigen::Index>(data.cluster_count()))
    throw validation_error("partial_loglik: u has wrong length");
  const auto cl = detail::clusters_of(data);
  const Eigen::VectorXd eta = detail::linear_predictor(x, beta, cl, u);
  const auto t = detail::times_of(data);
  const auto s = detail::status_of(data);
  return partial_loglik(std::span<const double>(eta.data(), static_cast<std::size_t>(eta.size())), t, s);
}

/// log density of u = log z for z ~ Gamma(shape 1/theta, scale theta).
inline double log_gamma_frailty_density(double u, double theta) {
  const double k = 1.0 / theta;
  return k * (u - std::exp(u)) - std::lgamma(k) - k * std::log(theta);
}

inline double penalty_loglik(const Eigen::VectorXd& u, double theta) {
  if (!(theta > 0.0) || !std::isfinite(theta)) throw validation_error("penalty_loglik: theta must be positive");
  double s = 0.0;
  for (double v : u) s += log_gamma_frailty_density(v, theta);
  return s;
}

/// Breslow estimator from a linear predictor: jump d_v / sum_{y >= y_v} exp(eta).
inline BaselineHazard breslow_baseline(std::span<const double> eta, std::span<const double> time,
                                       std::span<const int> status) {
  const double shift = *std::max_element(eta.begin(), eta.end());
  const detail::TimeGroups tg(time);
  std::vector<double> times, inc;
  double s0 = 0.0;
  for (auto [b, e] : tg.groups) {
    int d = 0;
    for (std::size_t k = b; k < e; ++k) {
      const std::size_t i = tg.order[k];
      s0 += std::exp(eta[i] - shift);
      d += status[i];
    }
    if (d > 0) {
      times.push_back(time[tg.order[b]]);
      inc.push_back(d / s0 * std::exp(-shift));
    }
  }
  if (times.empty()) throw validation_error("breslow_baseline: no events");
  std::reverse(times.begin(), times.end());
  std::reverse(inc.begin(), inc.end());
  return BaselineHazard::from_increments(std::move(times), std::move(inc));
}

inline BaselineHazard breslow_baseline(const Eigen::VectorXd& beta, const Eigen::VectorXd& u,
                                       const SurvivalDataset& data, const ModelSpec& spec) {
  const Eigen::MatrixXd x = design_matrix(data, spec);
  const auto cl = detail::clusters_of(data);
  const Eigen::VectorXd eta = detail::linear_predictor(x, beta, cl, u);
  const auto t = detail::times_of(data);
  const auto s = detail::status_of(data);
  return breslow_baseline(std::span<const double>(eta.data(), static_cast<std::size_t>(eta.size())), t, s);
}

/// Marginal log-likelihood with gamma frailties integrated out in closed form,
/// for given beta and baseline jumps. theta = 0 gives the no-frailty limit.
inline double gamma_marginal_loglik(std::span<const double> xbeta, std::span<const double> time,
                                    std::span<const int> status, std::span<const std::size_t> cluster,
                                    std::size_t clusters, const BaselineHazard& h0, double theta) {
  if (theta < 0.0) throw validation_error("gamma_marginal_loglik: theta must be >= 0");
  std::vector<double> a(clusters, 0.0);
  std::vector<int> d(clusters, 0);
  double value = 0.0;
  for (std::size_t i = 0; i < time.size(); ++i) {
    a[cluster[i]] += std::exp(xbeta[i]) * h0.at(time[i]);
    if (status[i]) {
      d[cluster[i]] += 1;
      value += std::log(h0.increment_at(time[i])) + xbeta[i];
    }
  }
  for (std::size_t c = 0; c < clusters; ++c) {
    if (theta == 0.0) {
      value -= a[c];
      continue;
    }
    const double nu = 1.0 / theta;
    // lgamma(nu + D) - lgamma(nu) - D log(nu), exact for integer D
    for (int k = 0; k < d[c]; ++k) value += std::log1p(k / nu);
    value -= (nu + d[c]) * std::log1p(a[c] / nu);
  }
  return value;
}

inline double gamma_marginal_loglik(const Eigen::VectorXd& beta, const BaselineHazard& h0,
                                    const SurvivalDataset& data, const ModelSpec& spec, double theta) {
  const Eigen::MatrixXd x = design_matrix(data, spec);
  const Eigen::VectorXd xb = x.cols() > 0 ? Eigen::VectorXd(x * beta) : Eigen::VectorXd::Zero(x.rows());
  const auto t = detail::times_of(data);
  const auto s = detail::status_of(data);
  const auto cl = detail::clusters_of(data);
  return gamma_marginal_loglik(std::span<const double>(xb.data(), static_cast<std::size_t>(xb.size())), t, s, cl,
                               data.cluster_count(), h0, theta);
}

/// Penalized partial likelihood over params = [beta; u] (u omitted without frailty),
/// with analytic gradient and observed information (negative Hessian).
class PenalizedLikelihood {
 public:
  struct Evaluation {
    double partial = 0.0;
    double penalty = 0.0;
    double value = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd information;
  };

  PenalizedLikelihood(Eigen::MatrixXd x, std::vector<std::size_t> cluster, std::size_t clusters,
                      std::vector<double> time, std::vector<int> status, bool frailty)
      : x_(std::move(x)),
        cluster_(std::move(cluster)),
        g_(frailty ? clusters : 0),
        time_(std::move(time)),
        status_(std::move(status)),
        groups_(time_) {}

  PenalizedLikelihood(const SurvivalDataset& data, const ModelSpec& spec)
      : PenalizedLikelihood(design_matrix(data, spec), detail::clusters_of(data), data.cluster_count(),
                            detail::times_of(data), detail::status_of(data), spec.frailty) {}

  Eigen::Index beta_size() const { return x_.cols(); }
  Eigen::Index frailty_size() const { return static_cast<Eigen::Index>(g_); }
  Eigen::Index size() const { return beta_size() + frailty_size(); }
  const Eigen::MatrixXd& design() const { return x_; }
  const std::vector<std::size_t>& cluster() const { return cluster_; }
  const std::vector<double>& time() const { return time_; }
  const std::vector<int>& status() const { return status_; }

  Eigen::VectorXd eta(const Eigen::VectorXd& params) const {
    const Eigen::Index p = beta_size();
    return detail::linear_predictor(x_, params.head(p), cluster_, params.tail(frailty_size()));
  }

  /// theta is ignored when the model has no frailty.
  Evaluation evaluate(const Eigen::VectorXd& params, double theta, bool derivatives = true) const {
    const Eigen::Index p = beta_size();
    const Eigen::Index g = frailty_size();
    const Eigen::Index dim = p + g;
    if (params.size() != dim) throw validation_error("PenalizedLikelihood: parameter length mismatch");
    const Eigen::VectorXd eta = this->eta(params);
    for (double e : eta)
      if (!std::isfinite(e)) throw numerical_error("non-finite linear predictor");
    const double shift = eta.maxCoeff();

    Evaluation ev;
    if (derivatives) {
      ev.gradient = Eigen::VectorXd::Zero(dim);
      ev.information = Eigen::MatrixXd::Zero(dim, dim);
    }
    double s0 = 0.0;
    Eigen::VectorXd s1x = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd s1u = Eigen::VectorXd::Zero(g);
    Eigen::MatrixXd s2xx = Eigen::MatrixXd::Zero(p, p);
    Eigen::MatrixXd s2xu = Eigen::MatrixXd::Zero(p, g);

    for (auto [b, e] : groups_.groups) {
      int d = 0;
      for (std::size_t k = b; k < e; ++k) {
        const std::size_t i = groups_.order[k];
        const auto ii = static_cast<Eigen::Index>(i);
        const double w = std::exp(eta(ii) - shift);
        s0 += w;
        if (status_[i]) {
          ++d;
          ev.partial += eta(ii);
        }
        if (!derivatives) continue;
        if (p > 0) {
          const auto xi = x_.row(ii).transpose();
          s1x.noalias() += w * xi;
          s2xx.noalias() += w * xi * xi.transpose();
          if (g > 0) s2xu.col(static_cast<Eigen::Index>(cluster_[i])).noalias() += w * xi;
          if (status_[i]) ev.gradient.head(p) += xi;
        }
        if (g > 0) {
          const auto c = static_cast<Eigen::Index>(cluster_[i]);
          s1u(c) += w;
          if (status_[i]) ev.gradient(p + c) += 1.0;
        }
      }
      if (d == 0) continue;
      ev.partial -= d * (std::log(s0) + shift);
      if (!derivatives) continue;
      const Eigen::VectorXd a = s1x / s0;
      const Eigen::VectorXd bu = s1u / s0;
      if (p > 0) {
        ev.gradient.head(p) -= d * a;
        ev.information.topLeftCorner(p, p) += d * (s2xx / s0 - a * a.transpose());
      }
      if (g > 0) {
        ev.gradient.tail(g) -= d * bu;
        Eigen::MatrixXd uu = -bu * bu.transpose();
        uu.diagonal() += bu;
        ev.information.bottomRightCorner(g, g) += d * uu;
        if (p > 0) ev.information.topRightCorner(p, g) += d * (s2xu / s0 - a * bu.transpose());
      }
    }
    if (derivatives && p > 0 && g > 0)
      ev.information.bottomLeftCorner(g, p) = ev.information.topRightCorner(p, g).transpose();

    if (g > 0) {
      const Eigen::VectorXd u = params.tail(g);
      ev.penalty = penalty_loglik(u, theta);
      if (derivatives) {
        for (Eigen::Index c = 0; c < g; ++c) {
          const double eu = std::exp(u(c));
          ev.gradient(p + c) += (1.0 - eu) / theta;
          ev.information(p + c, p + c) += eu / theta;
        }
      }
    }
    ev.value = ev.partial + ev.penalty;
    return ev;
  }

 private:
  Eigen::MatrixXd x_;
  std::vector<std::size_t> cluster_;
  std::size_t g_;
  std::vector<double> time_;
  std::vector<int> status_;
  detail::TimeGroups groups_;
};

/// Gradient of the penalized partial likelihood at (beta, u, theta).
inline Eigen::VectorXd ppl_gradient(const Eigen::VectorXd& beta, const Eigen::VectorXd& u, double theta,
                                    const SurvivalDataset& data, const ModelSpec& spec) {
  const PenalizedLikelihood lik(data, spec);
  Eigen::VectorXd params(lik.size());
  params << beta, u;
  return lik.evaluate(params, theta).gradient;
}

inline double ppl_value(const Eigen::VectorXd& beta, const Eigen::VectorXd& u, double theta,
                        const SurvivalDataset& data, const ModelSpec& spec) {
  const PenalizedLikelihood lik(data, spec);
  Eigen::VectorXd params(lik.size());
  params << beta, u;
  return lik.evaluate(params, theta, false).value;
}

namespace detail {

struct InnerResult {
  Eigen::VectorXd params;
  PenalizedLikelihood::Evaluation eval;
  bool converged = false;
  int iterations = 0;
  std::vector<double> trace;
};

inline constexpr double kAscentSlack = 1e-12;

inline double max_abs(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

/// Newton-Raphson with step-halving; accepted steps never decrease the objective.
inline InnerResult newton_inner(const PenalizedLikelihood& lik, Eigen::VectorXd start, double theta,
                                const FitControl& control) {
  InnerResult r;
  r.params = std::move(start);
  r.eval = lik.evaluate(r.params, theta);
  r.trace.push_back(r.eval.value);
  while (true) {
    if (max_abs(r.eval.gradient) < control.tol) {
      r.converged = true;
      return r;
    }
    if (r.iterations >= control.max_inner) return r;
    ++r.iterations;
    Eigen::LLT<Eigen::MatrixXd> llt(r.eval.information);
    Eigen::VectorXd step;
    if (llt.info() == Eigen::Success) {
      step = llt.solve(r.eval.gradient);
    } else {
      Eigen::LDLT<Eigen::MatrixXd> ldlt(r.eval.information);
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
        throw numerical_error("information matrix is not positive definite");
      step = ldlt.solve(r.eval.gradient);
    }
    if (!step.allFinite()) throw numerical_error("non-finite Newton step");
    bool accepted = false;
    double scale = 1.0;
    for (int half = 0; half < 60; ++half, scale *= 0.5) {
      const Eigen::VectorXd cand = r.params + scale * step;
      PenalizedLikelihood::Evaluation ev;
      try {
        ev = lik.evaluate(cand, theta);
      } catch (const numerical_error&) {
        continue;
      }
      // near the optimum the objective is flat to rounding; a relative slack keeps full steps
      if (std::isfinite(ev.value) && ev.value >= r.eval.value - kAscentSlack * (1.0 + std::fabs(r.eval.value))) {
        r.params = cand;
        r.eval = std::move(ev);
        accepted = true;
        break;
      }
    }
    if (!accepted) return r;
    r.trace.push_back(r.eval.value);
  }
}

/// Names covariate terms that are linearly dependent on earlier ones or constant.
inline std::vector<std::string> collinear_terms(const Eigen::MatrixXd& x, const ModelSpec& spec) {
  if (x.cols() == 0) return {};
  Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(centered);
  const double scale = std::max(1.0, centered.cwiseAbs().maxCoeff());
  qr.setThreshold(1e-10 * scale);
  const Eigen::Index rank = qr.rank();
  std::vector<std::string> out;
  for (Eigen::Index k = rank; k < x.cols(); ++k)
    out.push_back(spec.terms[static_cast<std::size_t>(qr.colsPermutation().indices()(k))].label());
  return out;
}

/// Brent's one-dimensional maximizer on [a, b] with absolute tolerance tol.
template <class F>
double brent_maximize(F&& f, double a, double b, double tol, int max_iter, int& iterations, bool& ok) {
  constexpr double golden = 0.3819660112501051;
  double x = a + golden * (b - a), w = x, v = x;
  double fx = -f(x), fw = fx, fv = fx;
  double d = 0.0, e = 0.0;
  ok = false;
  for (iterations = 0; iterations < max_iter; ++iterations) {
    const double xm = 0.5 * (a + b);
    const double tol1 = 1e-10 * std::fabs(x) + tol / 3.0;
    const double tol2 = 2.0 * tol1;
    if (std::fabs(x - xm) <= tol2 - 0.5 * (b - a)) {
      ok = true;
      return x;
    }
    bool golden_step = true;
    if (std::fabs(e) > tol1) {
      const double r = (x - w) * (fx - fv);
      double q = (x - v) * (fx - fw);
      double pp = (x - v) * q - (x - w) * r;
      q = 2.0 * (q - r);
      if (q > 0.0) pp = -pp;
      q = std::fabs(q);
      const double etemp = e;
      e = d;
      if (!(std::fabs(pp) >= std::fabs(0.5 * q * etemp) || pp <= q * (a - x) || pp >= q * (b - x))) {
        d = pp / q;
        const double uu = x + d;
        if (uu - a < tol2 || b - uu < tol2) d = xm - x >= 0 ? tol1 : -tol1;
        golden_step = false;
      }
    }
    if (golden_step) {
      e = (x >= xm ? a : b) - x;
      d = golden * e;
    }
    const double uu = std::fabs(d) >= tol1 ? x + d : x + (d >= 0 ? tol1 : -tol1);
    const double fu = -f(uu);
    if (fu <= fx) {
      (uu >= x ? a : b) = x;
      v = w, fv = fw;
      w = x, fw = fx;
      x = uu, fx = fu;
    } else {
      (uu < x ? a : b) = uu;
      if (fu <= fw || w == x) {
        v = w, fv = fw;
        w = uu, fw = fu;
      } else if (fu <= fv || v == x || v == w) {
        v = uu, fv = fu;
      }
    }
  }
  return x;
}

}  // namespace detail

inline double linear_predictor(const FrailtyFit& fit, const SurvivalRecord& record) {
  const auto c = fit.cluster_index(record.cluster);
  if (!c) throw validation_error("cluster '" + record.cluster + "' is not part of the fit");
  const auto cols = resolve_columns(fit.spec, fit.input_columns);
  double eta = 0.0;
  if (fit.beta.size() > 0) eta = design_row(fit.spec, cols, record.covariates).dot(fit.beta);
  if (fit.u.size() > 0) eta += fit.u(static_cast<Eigen::Index>(*c));
  return eta;
}

/// Conditional survival probability exp(-exp(x beta + u) H0(t)) given the fitted frailty.
inline double survival_prob(const FrailtyFit& fit, const SurvivalRecord& record, double t) {
  if (!(t > 0.0)) throw validation_error("survival_prob: t must be positive");
  return std::exp(-std::exp(linear_predictor(fit, record)) * fit.baseline.at(t));
}

/// Linear predictors and S(y) for every record of `data` (columns matched by name).
struct FittedValues {
  std::vector<double> eta;
  std::vector<double> survival;
};

inline FittedValues fitted_values(const FrailtyFit& fit, const SurvivalDataset& data) {
  const auto cols = resolve_columns(fit.spec, data.covariate_names());
  std::vector<std::size_t> cluster_map(data.cluster_count());
  for (std::size_t c = 0; c < data.cluster_count(); ++c) {
    const auto idx = fit.cluster_index(data.cluster_labels()[c]);
    if (!idx) throw validation_error("cluster '" + data.cluster_labels()[c] + "' is not part of the fit");
    cluster_map[c] = *idx;
  }
  FittedValues out;
  out.eta.reserve(data.size());
  out.survival.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& r = data[i];
    double eta = fit.beta.size() > 0 ? design_row(fit.spec, cols, r.covariates).dot(fit.beta) : 0.0;
    if (fit.u.size() > 0) eta += fit.u(static_cast<Eigen::Index>(cluster_map[data.cluster_of(i)]));
    out.eta.push_back(eta);
    out.survival.push_back(std::exp(-std::exp(eta) * fit.baseline.at(r.time)));
  }
  return out;
}

/// Fits the shared gamma-frailty model (or the plain Cox model when spec.frailty is off).
/// A result with converged == false carries its traces; it is never silently returned
/// as a valid estimate.
inline FrailtyFit fit_ppl(const SurvivalDataset& data, const ModelSpec& spec, const FitControl& control = {}) {
  if (spec.frailty && data.cluster_count() < 2)
    throw validation_error("frailty model needs at least 2 clusters");
  if (!(control.theta_lower > 0.0) || !(control.theta_upper > control.theta_lower))
    throw validation_error("invalid theta bracket");

  const PenalizedLikelihood lik(data, spec);
  if (const auto bad = detail::collinear_terms(lik.design(), spec); !bad.empty()) {
    std::string names;
    for (const auto& n : bad) names += (names.empty() ? "" : ", ") + n;
    throw numerical_error("singular Hessian: collinear or constant covariates: " + names);
  }

  FrailtyFit fit;
  fit.spec = spec;
  fit.input_columns = data.covariate_names();
  fit.cluster_labels = data.cluster_labels();
  const Eigen::Index p = lik.beta_size();
  const Eigen::Index g = lik.frailty_size();
  const Eigen::VectorXd origin = Eigen::VectorXd::Zero(lik.size());
  std::vector<std::size_t> cl = lik.cluster();
  const auto& time = lik.time();
  const auto& status = lik.status();

  auto marginal_at = [&](const Eigen::VectorXd& params, double theta) {
    const Eigen::VectorXd eta = lik.eta(params);
    const auto h0 = breslow_baseline(std::span<const double>(eta.data(), static_cast<std::size_t>(eta.size())), time, status);
    const Eigen::VectorXd xb = p > 0 ? Eigen::VectorXd(lik.design() * params.head(p)) : Eigen::VectorXd::Zero(eta.size());
    return gamma_marginal_loglik(std::span<const double>(xb.data(), static_cast<std::size_t>(xb.size())), time, status,
                                 cl, data.cluster_count(), h0, theta);
  };

  double theta_hat = 0.0;
  bool outer_ok = true;
  if (g > 0) {
    Eigen::VectorXd warm = origin;
    bool inner_ok = true;
    auto profile = [&](double log_theta) {
      const double theta = std::exp(log_theta);
      auto r = detail::newton_inner(lik, warm, theta, control);
      inner_ok = inner_ok && r.converged;
      warm = r.params;
      const double m = marginal_at(r.params, theta);
      fit.theta_trace.push_back({theta, m, r.iterations});
      fit.inner_iterations += r.iterations;
      return m;
    };
    // Seed the warm start at the initial theta.
    warm = detail::newton_inner(lik, origin, control.theta_init, control).params;

    const double lo = std::log(control.theta_lower), hi = std::log(control.theta_upper);
    constexpr double edge = 1e-3;
    int iters = 0;
    double s = detail::brent_maximize(profile, lo, hi, control.outer_tol, control.max_outer, iters, outer_ok);
    fit.outer_iterations = iters;
    if (outer_ok && s - lo < edge) {
      const double lo2 = lo - std::log(100.0);
      s = detail::brent_maximize(profile, lo2, lo + 1.0, control.outer_tol, control.max_outer, iters, outer_ok);
      fit.outer_iterations += iters;
      if (s - lo2 < edge) fit.no_frailty_evidence = true;
    } else if (outer_ok && hi - s < edge) {
      const double hi2 = hi + std::log(10.0);
      s = detail::brent_maximize(profile, hi - 1.0, hi2, control.outer_tol, control.max_outer, iters, outer_ok);
      fit.outer_iterations += iters;
      if (hi2 - s < edge) {
        outer_ok = false;
        fit.message = "frailty variance diverges beyond the expanded bracket";
      }
    }
    if (!inner_ok && fit.message.empty()) fit.message = "inner loop did not converge for some theta";
    outer_ok = outer_ok && inner_ok;
    if (!outer_ok && fit.message.empty()) fit.message = "outer loop exceeded max_outer iterations";
    theta_hat = std::exp(s);
  }

  // Final inner solve at theta_hat from the initial point; its trace is reported.
  const auto final_fit = detail::newton_inner(lik, origin, g > 0 ? theta_hat : 1.0, control);
  fit.inner_iterations += final_fit.iterations;
  fit.ppl_trace = final_fit.trace;
  fit.converged = outer_ok && final_fit.converged;
  if (!final_fit.converged && fit.message.empty()) fit.message = "inner Newton iterations did not converge";

  const Eigen::VectorXd& params = final_fit.params;
  fit.beta = params.head(p);
  fit.u = g > 0 ? Eigen::VectorXd(params.tail(g)) : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(data.cluster_count()));
  fit.theta = theta_hat;
  fit.ppl = final_fit.eval.value;
  fit.partial_loglik = final_fit.eval.partial;
  fit.max_gradient = detail::max_abs(final_fit.eval.gradient);
  const Eigen::VectorXd eta = lik.eta(params);
  fit.baseline = breslow_baseline(std::span<const double>(eta.data(), static_cast<std::size_t>(eta.size())), time, status);
  fit.marginal_loglik = marginal_at(params, theta_hat);
  fit.aic = -2.0 * fit.marginal_loglik + 2.0 * static_cast<double>(p + (g > 0 ? 1 : 0));

  fit.stderr_beta = Eigen::VectorXd::Constant(p, std::numeric_limits<double>::quiet_NaN());
  if (lik.size() > 0) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(final_fit.eval.information);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
      const Eigen::MatrixXd cov = ldlt.solve(Eigen::MatrixXd::Identity(lik.size(), lik.size()));
      for (Eigen::Index k = 0; k < p; ++k) fit.stderr_beta(k) = std::sqrt(cov(k, k));
    }
  }
  return fit;
}

}  // namespace zresid
