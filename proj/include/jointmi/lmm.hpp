#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "jointmi/design.hpp"
#include "jointmi/numeric.hpp"
#include "jointmi/types.hpp"

namespace jointmi {

struct LmmFit {
  std::vector<std::string> column_names;
  Eigen::VectorXd beta;
  Eigen::VectorXd beta_se;
  double D = 0.0;
  double sigma = 1.0;
  double loglik = 0.0;
  bool reml = false;
};

// Marginal log-likelihood of the random-intercept model,
// V_i = sigma^2 I + D 11'. Gradient (optional) is with respect to
// (beta..., sigma, D).
inline double lmm_marginal_loglik(const LongitudinalDesign& design, const Eigen::VectorXd& beta,
                                  double sigma, double D, Eigen::VectorXd* gradient = nullptr) {
  if (!(sigma > 0.0) || D < 0.0 || !beta.allFinite() || !std::isfinite(sigma) || !std::isfinite(D))
    throw std::domain_error("lmm_marginal_loglik: invalid parameters");
  const double sigma2 = sigma * sigma;
  const double lambda = D / sigma2;
  const int p = design.n_columns();
  double loglik = 0.0;
  Eigen::VectorXd grad_beta = Eigen::VectorXd::Zero(p);
  double dl_dsigma2 = 0.0, dl_dD = 0.0;
  for (int i = 0; i < design.n_subjects(); ++i) {
    const Eigen::MatrixXd& X = design.X[static_cast<std::size_t>(i)];
    const Eigen::VectorXd& y = design.y[static_cast<std::size_t>(i)];
    const int ni = static_cast<int>(y.size());
    if (ni == 0) continue;
    const double shrink = lambda / (1.0 + ni * lambda);
    Eigen::VectorXd r = y - X * beta;
    const double rsum = r.sum();
    const double quad = (r.squaredNorm() - shrink * rsum * rsum) / sigma2;
    loglik += -0.5 * (ni * std::log(2.0 * M_PI * sigma2) + std::log1p(ni * lambda) + quad);
    if (gradient) {
      // V^{-1} r = (r - shrink * rsum * 1) / sigma2
      Eigen::VectorXd vinv_r = (r.array() - shrink * rsum).matrix() / sigma2;
      grad_beta += X.transpose() * vinv_r;
      const double tr_vinv = (ni - ni * shrink) / sigma2;
      dl_dsigma2 += -0.5 * tr_vinv + 0.5 * vinv_r.squaredNorm();
      const double one_vinv_r = (rsum - shrink * rsum * ni) / sigma2;  // 1'V^{-1}r
      const double tr_vinv_J = ni / (sigma2 * (1.0 + ni * lambda));
      dl_dD += -0.5 * tr_vinv_J + 0.5 * one_vinv_r * one_vinv_r;
    }
  }
  if (gradient) {
    gradient->resize(p + 2);
    gradient->head(p) = grad_beta;
    (*gradient)(p) = dl_dsigma2 * 2.0 * sigma;  // d/dsigma
    (*gradient)(p + 1) = dl_dD;
  }
  return loglik;
}

// Conditional-on-b Gaussian log density of the responses.
inline double lmm_conditional_loglik(const LongitudinalDesign& design, const Eigen::VectorXd& beta,
                                     double sigma, const Eigen::VectorXd& random_intercepts) {
  if (!(sigma > 0.0)) throw std::domain_error("lmm_conditional_loglik: sigma must be > 0");
  if (random_intercepts.size() != design.n_subjects())
    throw std::invalid_argument("lmm_conditional_loglik: one intercept per subject required");
  const double sigma2 = sigma * sigma;
  double loglik = 0.0;
  for (int i = 0; i < design.n_subjects(); ++i) {
    const Eigen::VectorXd r = design.y[static_cast<std::size_t>(i)] -
                              design.X[static_cast<std::size_t>(i)] * beta -
                              Eigen::VectorXd::Constant(design.y[static_cast<std::size_t>(i)].size(),
                                                        random_intercepts(i));
    loglik += -0.5 * (r.size() * std::log(2.0 * M_PI * sigma2) + r.squaredNorm() / sigma2);
  }
  return loglik;
}

namespace detail {

struct LmmProfile {
  Eigen::VectorXd beta;
  Eigen::MatrixXd gls_information;  // sum X'R^{-1}X (unscaled by sigma^2)
  double rss_gls = 0.0;
  long n_rows = 0;
};

inline LmmProfile lmm_profile_at(const LongitudinalDesign& design, double lambda) {
  const int p = design.n_columns();
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(p);
  LmmProfile prof;
  for (int i = 0; i < design.n_subjects(); ++i) {
    const Eigen::MatrixXd& X = design.X[static_cast<std::size_t>(i)];
    const Eigen::VectorXd& y = design.y[static_cast<std::size_t>(i)];
    const int ni = static_cast<int>(y.size());
    if (ni == 0) continue;
    prof.n_rows += ni;
    const double shrink = lambda / (1.0 + ni * lambda);
    Eigen::VectorXd xsum = X.colwise().sum();
    A += X.transpose() * X - shrink * xsum * xsum.transpose();
    c += X.transpose() * y - shrink * xsum * y.sum();
  }
  prof.gls_information = A;
  prof.beta = A.ldlt().solve(c);
  for (int i = 0; i < design.n_subjects(); ++i) {
    const Eigen::MatrixXd& X = design.X[static_cast<std::size_t>(i)];
    const Eigen::VectorXd& y = design.y[static_cast<std::size_t>(i)];
    const int ni = static_cast<int>(y.size());
    if (ni == 0) continue;
    const double shrink = lambda / (1.0 + ni * lambda);
    Eigen::VectorXd r = y - X * prof.beta;
    prof.rss_gls += r.squaredNorm() - shrink * r.sum() * r.sum();
  }
  return prof;
}

}  // namespace detail

// Profile maximum likelihood: closed-form GLS for beta and sigma^2 at each
// variance ratio lambda = D / sigma^2, one-dimensional search over lambda.
inline LmmFit fit_lmm(const LongitudinalDesign& design, bool reml = false) {
  if (design.n_subjects() < 2) throw std::invalid_argument("fit_lmm: need at least 2 subjects");
  const int p = design.n_columns();
  const long N = design.n_rows();
  if (N <= p) throw std::invalid_argument("fit_lmm: fewer rows than design columns");
  {
    Eigen::MatrixXd stacked(N, p);
    long row = 0;
    for (const auto& X : design.X) {
      stacked.middleRows(row, X.rows()) = X;
      row += X.rows();
    }
    auto collinear = collinear_columns(stacked, design.column_names);
    if (!collinear.empty()) {
      std::string names;
      for (const auto& n : collinear) names += (names.empty() ? "" : ", ") + n;
      throw std::runtime_error("fit_lmm: singular design, collinear columns: " + names);
    }
  }

  auto profile_value = [&](double lambda) {
    detail::LmmProfile prof = detail::lmm_profile_at(design, lambda);
    double denom = reml ? static_cast<double>(N - p) : static_cast<double>(N);
    double sigma2 = prof.rss_gls / denom;
    if (!(sigma2 > 0.0)) return std::numeric_limits<double>::infinity();
    double value = -0.5 * (N * std::log(2.0 * M_PI * sigma2) + denom);
    for (int i = 0; i < design.n_subjects(); ++i) {
      const long ni = design.y[static_cast<std::size_t>(i)].size();
      if (ni > 0) value -= 0.5 * std::log1p(ni * lambda);
    }
    if (reml) {
      Eigen::LLT<Eigen::MatrixXd> llt(prof.gls_information / sigma2);
      value -= Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
    }
    return -value;  // minimized
  };

  // search over log(lambda); lambda = 0 checked separately
  double best_t = brent_minimize([&](double t) { return profile_value(std::exp(t)); }, -15.0, 8.0,
                                 1e-12);
  double lambda = std::exp(best_t);
  if (profile_value(0.0) <= profile_value(lambda)) lambda = 0.0;

  detail::LmmProfile prof = detail::lmm_profile_at(design, lambda);
  double denom = reml ? static_cast<double>(N - p) : static_cast<double>(N);
  double sigma2 = prof.rss_gls / denom;
  if (!(sigma2 > 1e-12)) throw std::runtime_error("fit_lmm: degenerate fit, zero residual variance");

  LmmFit fit;
  fit.column_names = design.column_names;
  fit.beta = prof.beta;
  fit.sigma = std::sqrt(sigma2);
  fit.D = lambda * sigma2;
  fit.reml = reml;
  Eigen::MatrixXd cov = (prof.gls_information / sigma2).inverse();
  fit.beta_se = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  fit.loglik = lmm_marginal_loglik(design, fit.beta, fit.sigma, fit.D);
  return fit;
}

inline LmmFit fit_lmm(const Dataset& ds, const LongitudinalModelSpec& spec, bool reml = false) {
  return fit_lmm(build_longitudinal_design(ds, spec), reml);
}

}  // namespace jointmi
