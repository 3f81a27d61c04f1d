#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <variant>
#include <vector>

#include "jointmi/bspline.hpp"
#include "jointmi/numeric.hpp"

namespace jointmi {

struct WeibullBaseline {
  double shape = 1.0;
  double scale = 1.0;
};

// Intervals [0,c1), [c1,c2), ..., [c_{R-1}, inf); rates.size() == cutpoints.size() + 1.
struct PiecewiseBaseline {
  std::vector<double> cutpoints;
  std::vector<double> rates;
};

// log h0(t) = basis(t)' coefficients
struct BSplineBaseline {
  BSplineBasis basis;
  Eigen::VectorXd log_coefficients;
};

using BaselineHazard = std::variant<WeibullBaseline, PiecewiseBaseline, BSplineBaseline>;

inline double baseline_hazard(const BaselineHazard& baseline, double t) {
  if (t < 0.0) throw std::domain_error("baseline_hazard: t must be >= 0");
  if (const auto* w = std::get_if<WeibullBaseline>(&baseline)) {
    if (w->shape == 1.0) return 1.0 / w->scale;
    return (w->shape / w->scale) * std::pow(t / w->scale, w->shape - 1.0);
  }
  if (const auto* p = std::get_if<PiecewiseBaseline>(&baseline)) {
    std::size_t j = 0;
    while (j < p->cutpoints.size() && t >= p->cutpoints[j]) ++j;
    return p->rates[j];
  }
  const auto& s = std::get<BSplineBaseline>(baseline);
  return std::exp(s.basis.evaluate(t).dot(s.log_coefficients));
}

// closed form for Weibull and piecewise, quadrature for the spline
inline double baseline_cumulative(const BaselineHazard& baseline, double t, double rel_tol = 1e-10) {
  if (t <= 0.0) return 0.0;
  if (const auto* w = std::get_if<WeibullBaseline>(&baseline)) {
    return std::pow(t / w->scale, w->shape);
  }
  if (const auto* p = std::get_if<PiecewiseBaseline>(&baseline)) {
    double total = 0.0, lo = 0.0;
    for (std::size_t j = 0; j < p->rates.size(); ++j) {
      double hi = j < p->cutpoints.size() ? p->cutpoints[j] : t;
      if (hi > t) hi = t;
      if (hi > lo) total += p->rates[j] * (hi - lo);
      if (hi >= t) break;
      lo = hi;
    }
    return total;
  }
  return adaptive_simpson([&](double s) { return baseline_hazard(baseline, s); }, 0.0, t, rel_tol);
}

// h0(t) * exp(gamma'K + alpha * m(t))
inline double hazard_at(const BaselineHazard& baseline, const Eigen::VectorXd& gamma, double alpha,
                        const Eigen::VectorXd& covariates, double trajectory_at_t, double t) {
  return baseline_hazard(baseline, t) *
         std::exp(gamma.dot(covariates) + alpha * trajectory_at_t);
}

struct AffineTrajectory {
  double at_zero = 0.0;
  double slope = 0.0;
  double operator()(double t) const { return at_zero + slope * t; }
};

// Integral of hazard_at over [from, to], adaptive per smooth segment so that
// piecewise-rate discontinuities do not degrade the quadrature.
template <typename Trajectory>
double cumulative_hazard_between(const BaselineHazard& baseline, const Eigen::VectorXd& gamma,
                                 double alpha, const Eigen::VectorXd& covariates,
                                 Trajectory&& trajectory, double from, double to,
                                 double rel_tol = 1e-8) {
  if (!(to > from)) return 0.0;
  const double link = std::exp(gamma.dot(covariates));
  if (const auto* p = std::get_if<PiecewiseBaseline>(&baseline)) {
    // rate is constant per segment; keep it outside the quadrature
    double total = 0.0, lo = from;
    for (std::size_t j = 0; j < p->rates.size() && lo < to; ++j) {
      double hi = j < p->cutpoints.size() ? p->cutpoints[j] : to;
      if (hi <= from) {
        lo = std::max(lo, hi);
        continue;
      }
      hi = std::min(hi, to);
      if (hi > lo)
        total += p->rates[j] * link *
                 adaptive_simpson([&](double s) { return std::exp(alpha * trajectory(s)); }, lo, hi,
                                  rel_tol);
      lo = hi;
    }
    return total;
  }
  return link * adaptive_simpson(
                    [&](double s) {
                      return baseline_hazard(baseline, s) * std::exp(alpha * trajectory(s));
                    },
                    from, to, rel_tol);
}

template <typename Trajectory>
double cumulative_hazard(const BaselineHazard& baseline, const Eigen::VectorXd& gamma, double alpha,
                         const Eigen::VectorXd& covariates, Trajectory&& trajectory, double horizon,
                         double rel_tol = 1e-8) {
  if (horizon < 0.0) throw std::domain_error("cumulative_hazard: horizon must be >= 0");
  return cumulative_hazard_between(baseline, gamma, alpha, covariates, trajectory, 0.0, horizon,
                                   rel_tol);
}

}  // namespace jointmi
