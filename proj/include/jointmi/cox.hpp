#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "jointmi/baseline.hpp"
#include "jointmi/design.hpp"
#include "jointmi/types.hpp"

namespace jointmi {

struct CoxFit {
  std::vector<std::string> column_names;
  Eigen::VectorXd gamma;
  Eigen::VectorXd se;
  double partial_loglik = 0.0;
  int iterations = 0;
  BaselineHazard baseline = PiecewiseBaseline{};  // Breslow estimate
};

// Breslow partial log-likelihood and derivatives. Rows may be in any order.
inline double cox_partial_loglik(const Eigen::VectorXd& time, const std::vector<char>& event,
                                 const Eigen::MatrixXd& X, const Eigen::VectorXd& gamma,
                                 Eigen::VectorXd* gradient = nullptr,
                                 Eigen::MatrixXd* information = nullptr) {
  const int n = static_cast<int>(time.size());
  const int q = static_cast<int>(X.cols());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return time(a) > time(b); });

  Eigen::VectorXd eta = X * gamma;
  double loglik = 0.0;
  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(q);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(q, q);
  if (gradient) gradient->setZero(q);
  if (information) information->setZero(q, q);

  std::size_t i = 0;
  while (i < order.size()) {
    double t = time(order[i]);
    // extend the risk set with everything tied at this time
    std::size_t j = i;
    while (j < order.size() && time(order[j]) == t) {
      int r = order[j];
      double w = std::exp(eta(r));
      s0 += w;
      s1 += w * X.row(r).transpose();
      s2 += w * X.row(r).transpose() * X.row(r);
      ++j;
    }
    for (std::size_t k = i; k < j; ++k) {
      int r = order[k];
      if (!event[static_cast<std::size_t>(r)]) continue;
      loglik += eta(r) - std::log(s0);
      if (gradient) *gradient += X.row(r).transpose() - s1 / s0;
      if (information) *information += s2 / s0 - (s1 / s0) * (s1 / s0).transpose();
    }
    i = j;
  }
  return loglik;
}

inline CoxFit fit_cox_raw(const Eigen::VectorXd& time, const std::vector<char>& event,
                          const Eigen::MatrixXd& X, std::vector<std::string> column_names,
                          int max_iter = 100, double grad_tol = 1e-8) {
  const int q = static_cast<int>(X.cols());
  long n_events = std::count(event.begin(), event.end(), char(1));
  if (n_events == 0) throw std::invalid_argument("fit_cox: no events");
  for (int c = 0; c < q; ++c) {
    double lo = X.col(c).minCoeff(), hi = X.col(c).maxCoeff();
    if (lo == hi)
      throw std::invalid_argument("fit_cox: covariate '" +
                                  (column_names.empty() ? std::to_string(c) : column_names[static_cast<std::size_t>(c)]) +
                                  "' is constant");
  }

  CoxFit fit;
  fit.column_names = std::move(column_names);
  fit.gamma = Eigen::VectorXd::Zero(q);
  Eigen::VectorXd gradient(q);
  Eigen::MatrixXd information(q, q);
  double loglik = cox_partial_loglik(time, event, X, fit.gamma, &gradient, &information);
  int iter = 0;
  // Convergence needs both a flat gradient and a vanishing Newton step: under
  // a monotone likelihood the gradient decays but the step keeps moving, so
  // the iterates drift until the norm guard trips.
  double applied_step = std::numeric_limits<double>::infinity();
  while (iter < max_iter &&
         (gradient.lpNorm<Eigen::Infinity>() >= grad_tol ||
          applied_step >= 1e-7 * (1.0 + fit.gamma.norm()))) {
    Eigen::VectorXd step = information.ldlt().solve(gradient);
    double scale = 1.0;
    Eigen::VectorXd candidate;
    double cand_loglik;
    // halve until the likelihood does not decrease
    for (;;) {
      candidate = fit.gamma + scale * step;
      cand_loglik = cox_partial_loglik(time, event, X, candidate, nullptr, nullptr);
      if (cand_loglik >= loglik - 1e-12 || scale < 1e-8) break;
      scale *= 0.5;
    }
    applied_step = (candidate - fit.gamma).norm();
    fit.gamma = candidate;
    loglik = cand_loglik;
    if (fit.gamma.norm() > 50.0)
      throw std::runtime_error("fit_cox: monotone partial likelihood (perfect separation)");
    cox_partial_loglik(time, event, X, fit.gamma, &gradient, &information);
    // the score can underflow to exact zero while the iterates are still
    // drifting outward; that is the same monotone likelihood
    if (gradient.lpNorm<Eigen::Infinity>() == 0.0 && fit.gamma.norm() > 10.0 &&
        applied_step >= 1e-7 * (1.0 + fit.gamma.norm()))
      throw std::runtime_error("fit_cox: monotone partial likelihood (perfect separation)");
    ++iter;
  }
  fit.iterations = iter;
  fit.partial_loglik = loglik;
  Eigen::MatrixXd covariance = information.inverse();
  fit.se = covariance.diagonal().cwiseMax(0.0).cwiseSqrt();

  // Breslow baseline: cumulative-hazard increments spread as piecewise rates
  // between consecutive distinct event times.
  std::vector<int> order(static_cast<std::size_t>(time.size()));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return time(a) < time(b); });
  Eigen::VectorXd eta = X * fit.gamma;
  std::vector<double> event_times, increments;
  {
    double risk_sum = 0.0;
    for (int r : order) risk_sum += std::exp(eta(r));
    std::size_t i2 = 0;
    while (i2 < order.size()) {
      double t = time(order[i2]);
      int d = 0;
      std::size_t j2 = i2;
      double removed = 0.0;
      while (j2 < order.size() && time(order[j2]) == t) {
        if (event[static_cast<std::size_t>(order[j2])]) ++d;
        removed += std::exp(eta(order[j2]));
        ++j2;
      }
      if (d > 0) {
        event_times.push_back(t);
        increments.push_back(d / risk_sum);
      }
      risk_sum -= removed;
      i2 = j2;
    }
  }
  PiecewiseBaseline breslow;
  double prev = 0.0;
  for (std::size_t k = 0; k < event_times.size(); ++k) {
    double width = event_times[k] - prev;
    breslow.rates.push_back(width > 0.0 ? increments[k] / width : 0.0);
    breslow.cutpoints.push_back(event_times[k]);
    prev = event_times[k];
  }
  breslow.rates.push_back(0.0);  // beyond the last event time
  fit.baseline = breslow;
  return fit;
}

inline CoxFit fit_cox(const Dataset& ds, const SurvivalModelSpec& spec, double time_scale = 365.0) {
  SurvivalDesign design = build_survival_design(ds, spec, time_scale);
  return fit_cox_raw(design.time, design.event, design.K, design.column_names);
}

inline CoxFit fit_cox(const Dataset& ds) {
  SurvivalModelSpec spec;
  for (const auto& cov : ds.schema.covariates) spec.covariates.push_back({cov.name, CovariateCoding::Dummy});
  return fit_cox(ds, spec);
}

}  // namespace jointmi
