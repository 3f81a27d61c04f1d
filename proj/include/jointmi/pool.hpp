#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

#include "jointmi/numeric.hpp"

namespace jointmi {

// One fitted analysis of one completed dataset, reduced to the quantities
// pooling needs. `ses` holds posterior SDs for Bayesian fits.
struct ModelFitSummary {
  std::vector<std::string> names;
  Eigen::VectorXd estimates;
  Eigen::VectorXd ses;
  double criterion = 0.0;  // AIC or DIC
  bool converged = true;
};

struct PooledFit {
  std::vector<std::string> names;
  Eigen::VectorXd estimate;  // Qbar
  Eigen::VectorXd within;    // W
  Eigen::VectorXd between;   // B
  Eigen::VectorXd total;     // T = W + (1 + 1/m) B
  Eigen::VectorXd se;        // sqrt(T)
  Eigen::VectorXd ci_lo;
  Eigen::VectorXd ci_hi;
  double mean_criterion = 0.0;
  int m = 0;
};

// Rubin's rules with normal-quantile intervals on sqrt(T).
inline PooledFit pool(const std::vector<ModelFitSummary>& fits, double level = 0.95) {
  if (fits.empty()) throw std::invalid_argument("pool: no fits");
  const int m = static_cast<int>(fits.size());
  const Eigen::Index k = fits.front().estimates.size();
  for (const auto& fit : fits) {
    if (fit.estimates.size() != k || fit.ses.size() != k || fit.names != fits.front().names)
      throw std::invalid_argument("pool: mismatched parameter layouts");
  }
  PooledFit out;
  out.names = fits.front().names;
  out.m = m;
  out.estimate = Eigen::VectorXd::Zero(k);
  out.within = Eigen::VectorXd::Zero(k);
  out.between = Eigen::VectorXd::Zero(k);
  for (const auto& fit : fits) {
    out.estimate += fit.estimates;
    out.within += fit.ses.cwiseProduct(fit.ses);
    out.mean_criterion += fit.criterion;
  }
  out.estimate /= m;
  out.within /= m;
  out.mean_criterion /= m;
  if (m > 1) {
    for (const auto& fit : fits) {
      Eigen::VectorXd dev = fit.estimates - out.estimate;
      out.between += dev.cwiseProduct(dev);
    }
    out.between /= (m - 1);
  }
  out.total = out.within + (1.0 + 1.0 / m) * out.between;
  out.se = out.total.cwiseMax(0.0).cwiseSqrt();
  const double z = normal_quantile(0.5 + level / 2.0);
  out.ci_lo = out.estimate - z * out.se;
  out.ci_hi = out.estimate + z * out.se;
  return out;
}

}  // namespace jointmi
