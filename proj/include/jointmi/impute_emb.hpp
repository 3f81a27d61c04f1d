#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <vector>

#include "jointmi/impute_engines.hpp"
#include "jointmi/rng.hpp"

namespace jointmi {

struct EmbModel {
  Eigen::VectorXd mu;
  Eigen::MatrixXd Sigma;
  bool converged = false;
  int iterations = 0;
};

namespace emb_detail {

inline bool is_missing(double v) { return std::isnan(v); }

struct Pattern {
  std::vector<int> observed;
  std::vector<int> missing;
  std::vector<int> rows;
};

inline std::vector<Pattern> group_patterns(const Eigen::MatrixXd& data) {
  std::map<std::vector<bool>, Pattern> groups;
  const int p = static_cast<int>(data.cols());
  for (int r = 0; r < data.rows(); ++r) {
    std::vector<bool> mask(static_cast<std::size_t>(p));
    for (int c = 0; c < p; ++c) mask[static_cast<std::size_t>(c)] = is_missing(data(r, c));
    auto it = groups.find(mask);
    if (it == groups.end()) {
      Pattern pat;
      for (int c = 0; c < p; ++c)
        (mask[static_cast<std::size_t>(c)] ? pat.missing : pat.observed).push_back(c);
      it = groups.emplace(mask, std::move(pat)).first;
    }
    it->second.rows.push_back(r);
  }
  std::vector<Pattern> out;
  for (auto& [mask, pat] : groups) out.push_back(std::move(pat));
  return out;
}

}  // namespace emb_detail

// EM for a multivariate normal with arbitrary missingness; NaN marks a
// missing cell. Conditional expectations of the missing block feed the
// complete-data sufficient statistics.
inline EmbModel emb_em(const Eigen::MatrixXd& data, double tol = 1e-6, int max_iter = 500) {
  const int n = static_cast<int>(data.rows());
  const int p = static_cast<int>(data.cols());
  if (n < 2) throw std::invalid_argument("emb_em: need at least 2 rows");
  for (int c = 0; c < p; ++c) {
    bool any = false;
    for (int r = 0; r < n; ++r)
      if (!emb_detail::is_missing(data(r, c))) {
        any = true;
        break;
      }
    if (!any) throw std::invalid_argument("emb_em: column " + std::to_string(c) + " fully missing");
  }

  // start from observed-cell means and variances
  EmbModel model;
  model.mu.setZero(p);
  Eigen::VectorXd var = Eigen::VectorXd::Ones(p);
  for (int c = 0; c < p; ++c) {
    double sum = 0.0, sum2 = 0.0;
    int cnt = 0;
    for (int r = 0; r < n; ++r)
      if (!emb_detail::is_missing(data(r, c))) {
        sum += data(r, c);
        sum2 += data(r, c) * data(r, c);
        ++cnt;
      }
    model.mu(c) = sum / cnt;
    var(c) = std::max(sum2 / cnt - model.mu(c) * model.mu(c), 1e-8);
  }
  model.Sigma = var.asDiagonal();

  auto patterns = emb_detail::group_patterns(data);
  for (int iter = 1; iter <= max_iter; ++iter) {
    Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);
    for (const auto& pat : patterns) {
      const int no = static_cast<int>(pat.observed.size());
      const int nm = static_cast<int>(pat.missing.size());
      Eigen::MatrixXd gain;          // Sigma_mo Sigma_oo^{-1}
      Eigen::MatrixXd cond_cov;      // conditional covariance of the missing block
      if (nm > 0 && no > 0) {
        Eigen::MatrixXd Soo(no, no), Smo(nm, no);
        for (int a = 0; a < no; ++a)
          for (int b = 0; b < no; ++b) Soo(a, b) = model.Sigma(pat.observed[a], pat.observed[b]);
        for (int a = 0; a < nm; ++a)
          for (int b = 0; b < no; ++b) Smo(a, b) = model.Sigma(pat.missing[a], pat.observed[b]);
        Soo.diagonal().array() += 1e-10;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(Soo);
        gain = ldlt.solve(Smo.transpose()).transpose();
        Eigen::MatrixXd Smm(nm, nm);
        for (int a = 0; a < nm; ++a)
          for (int b = 0; b < nm; ++b) Smm(a, b) = model.Sigma(pat.missing[a], pat.missing[b]);
        cond_cov = Smm - gain * Smo.transpose();
      } else if (nm > 0) {
        Eigen::MatrixXd Smm(nm, nm);
        for (int a = 0; a < nm; ++a)
          for (int b = 0; b < nm; ++b) Smm(a, b) = model.Sigma(pat.missing[a], pat.missing[b]);
        cond_cov = Smm;
      }
      for (int r : pat.rows) {
        Eigen::VectorXd filled(p);
        for (int a = 0; a < no; ++a) filled(pat.observed[a]) = data(r, pat.observed[a]);
        if (nm > 0) {
          Eigen::VectorXd cond_mean(nm);
          if (no > 0) {
            Eigen::VectorXd dev(no);
            for (int a = 0; a < no; ++a) dev(a) = data(r, pat.observed[a]) - model.mu(pat.observed[a]);
            Eigen::VectorXd adj = gain * dev;
            for (int a = 0; a < nm; ++a) cond_mean(a) = model.mu(pat.missing[a]) + adj(a);
          } else {
            for (int a = 0; a < nm; ++a) cond_mean(a) = model.mu(pat.missing[a]);
          }
          for (int a = 0; a < nm; ++a) filled(pat.missing[a]) = cond_mean(a);
        }
        s1 += filled;
        s2 += filled * filled.transpose();
        if (nm > 0)
          for (int a = 0; a < nm; ++a)
            for (int b = 0; b < nm; ++b) s2(pat.missing[a], pat.missing[b]) += cond_cov(a, b);
      }
    }
    Eigen::VectorXd mu_new = s1 / n;
    Eigen::MatrixXd sigma_new = s2 / n - mu_new * mu_new.transpose();
    sigma_new = 0.5 * (sigma_new + sigma_new.transpose()).eval();
    double delta = (mu_new - model.mu).lpNorm<Eigen::Infinity>();
    delta = std::max(delta, (sigma_new - model.Sigma).lpNorm<Eigen::Infinity>());
    model.mu = mu_new;
    model.Sigma = sigma_new;
    model.iterations = iter;
    if (delta < tol) {
      model.converged = true;
      break;
    }
  }
  return model;
}

// EM on a bootstrap resample of the rows.
inline EmbModel emb_fit(const Eigen::MatrixXd& data, Rng& rng, double tol = 1e-6,
                        int max_iter = 500) {
  const int n = static_cast<int>(data.rows());
  std::vector<int> idx = bootstrap_indices(n, rng);
  Eigen::MatrixXd resample(n, data.cols());
  for (int i = 0; i < n; ++i) resample.row(i) = data.row(idx[static_cast<std::size_t>(i)]);
  return emb_em(resample, tol, max_iter);
}

// Conditional-normal draw of the missing entries of one row under (mu, Sigma).
inline void emb_conditional_impute_row(const EmbModel& model, Eigen::VectorXd& row, Rng& rng) {
  const int p = static_cast<int>(row.size());
  std::vector<int> observed, missing;
  for (int c = 0; c < p; ++c)
    (emb_detail::is_missing(row(c)) ? missing : observed).push_back(c);
  if (missing.empty()) return;
  const int no = static_cast<int>(observed.size());
  const int nm = static_cast<int>(missing.size());
  Eigen::VectorXd cond_mean(nm);
  Eigen::MatrixXd cond_cov(nm, nm);
  if (no > 0) {
    Eigen::MatrixXd Soo(no, no), Smo(nm, no), Smm(nm, nm);
    for (int a = 0; a < no; ++a)
      for (int b = 0; b < no; ++b) Soo(a, b) = model.Sigma(observed[a], observed[b]);
    for (int a = 0; a < nm; ++a)
      for (int b = 0; b < no; ++b) Smo(a, b) = model.Sigma(missing[a], observed[b]);
    for (int a = 0; a < nm; ++a)
      for (int b = 0; b < nm; ++b) Smm(a, b) = model.Sigma(missing[a], missing[b]);
    Soo.diagonal().array() += 1e-10;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(Soo);
    Eigen::MatrixXd gain = ldlt.solve(Smo.transpose()).transpose();
    Eigen::VectorXd dev(no);
    for (int a = 0; a < no; ++a) dev(a) = row(observed[a]) - model.mu(observed[a]);
    Eigen::VectorXd adj = gain * dev;
    for (int a = 0; a < nm; ++a) cond_mean(a) = model.mu(missing[a]) + adj(a);
    cond_cov = Smm - gain * Smo.transpose();
  } else {
    for (int a = 0; a < nm; ++a) cond_mean(a) = model.mu(missing[a]);
    for (int a = 0; a < nm; ++a)
      for (int b = 0; b < nm; ++b) cond_cov(a, b) = model.Sigma(missing[a], missing[b]);
  }
  cond_cov = 0.5 * (cond_cov + cond_cov.transpose()).eval();
  cond_cov.diagonal().array() += 1e-12;
  Eigen::LLT<Eigen::MatrixXd> llt(cond_cov);
  Eigen::VectorXd z(nm);
  for (int a = 0; a < nm; ++a) z(a) = rng.normal();
  Eigen::VectorXd draw = cond_mean;
  if (llt.info() == Eigen::Success) draw += Eigen::MatrixXd(llt.matrixL()) * z;
  for (int a = 0; a < nm; ++a) row(missing[a]) = draw(a);
}

}  // namespace jointmi
