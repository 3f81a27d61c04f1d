#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "jointmi/rng.hpp"

namespace jointmi {

// Posterior draw of linear-regression coefficients:
//   V = (S + diag(S) kappa)^{-1},  S = X'X
//   beta_hat = V X'y
//   sigma_dot^2 = RSS / g,  g ~ chi^2(n - q)
//   beta_dot = beta_hat + sigma_dot * V^{1/2} z
struct RegressionDraw {
  Eigen::VectorXd beta_hat;
  Eigen::VectorXd beta_dot;
  double sigma_dot = 0.0;
};

inline RegressionDraw draw_regression_posterior(const Eigen::MatrixXd& X_obs,
                                                const Eigen::VectorXd& y_obs, double kappa,
                                                Rng& rng) {
  const int n = static_cast<int>(X_obs.rows());
  const int q = static_cast<int>(X_obs.cols());
  if (n <= q) throw std::invalid_argument("regression draw: need more observed rows than predictors");
  Eigen::MatrixXd S = X_obs.transpose() * X_obs;
  Eigen::MatrixXd penalized = S + kappa * S.diagonal().asDiagonal().toDenseMatrix();
  Eigen::LLT<Eigen::MatrixXd> llt(penalized);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("regression draw: singular design");
  Eigen::MatrixXd V = llt.solve(Eigen::MatrixXd::Identity(q, q));

  RegressionDraw draw;
  draw.beta_hat = V * (X_obs.transpose() * y_obs);
  double rss = (y_obs - X_obs * draw.beta_hat).squaredNorm();
  double g = rng.chi_squared(static_cast<double>(n - q));
  draw.sigma_dot = g > 0.0 ? std::sqrt(rss / g) : 0.0;
  Eigen::LLT<Eigen::MatrixXd> v_llt(0.5 * (V + V.transpose()));
  if (v_llt.info() != Eigen::Success)
    throw std::runtime_error("regression draw: singular design");
  Eigen::VectorXd z(q);
  for (int j = 0; j < q; ++j) z(j) = rng.normal();
  draw.beta_dot = draw.beta_hat + draw.sigma_dot * (Eigen::MatrixXd(v_llt.matrixL()) * z);
  return draw;
}

// Bayesian linear regression imputation: noisy predictions under the
// coefficient draw.
inline Eigen::VectorXd impute_variable_norm(const Eigen::VectorXd& y_obs,
                                            const Eigen::MatrixXd& X_obs,
                                            const Eigen::MatrixXd& X_mis, double kappa, Rng& rng) {
  if (X_mis.rows() == 0) return Eigen::VectorXd();
  RegressionDraw draw = draw_regression_posterior(X_obs, y_obs, kappa, rng);
  Eigen::VectorXd out = X_mis * draw.beta_dot;
  for (int i = 0; i < out.size(); ++i) out(i) += rng.normal() * draw.sigma_dot;
  return out;
}

// Predictive mean matching: predictions for the observed cases under
// beta_hat, for the missing cases under the posterior draw; each missing case
// borrows the observed value of one of its k nearest donors.
inline Eigen::VectorXd impute_variable_pmm(const Eigen::VectorXd& y_obs,
                                           const Eigen::MatrixXd& X_obs,
                                           const Eigen::MatrixXd& X_mis, int k, double kappa,
                                           Rng& rng, bool* fallback_warning = nullptr) {
  const int n_mis = static_cast<int>(X_mis.rows());
  if (n_mis == 0) return Eigen::VectorXd();
  const int n_obs = static_cast<int>(X_obs.rows());
  if (n_obs < 1) throw std::invalid_argument("impute_variable_pmm: no observed cases");
  k = std::min(k, n_obs);

  Eigen::VectorXd pred_obs, pred_mis;
  if (n_obs > X_obs.cols()) {
    RegressionDraw draw = draw_regression_posterior(X_obs, y_obs, kappa, rng);
    pred_obs = X_obs * draw.beta_hat;
    pred_mis = X_mis * draw.beta_dot;
  } else {
    // not enough rows to fit the full model: mean matching on the intercept alone
    if (fallback_warning) *fallback_warning = true;
    pred_obs = Eigen::VectorXd::Constant(n_obs, y_obs.mean());
    pred_mis = Eigen::VectorXd::Constant(n_mis, y_obs.mean());
  }

  Eigen::VectorXd out(n_mis);
  std::vector<int> order(static_cast<std::size_t>(n_obs));
  for (int i = 0; i < n_mis; ++i) {
    std::iota(order.begin(), order.end(), 0);
    double target = pred_mis(i);
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
      double da = std::abs(pred_obs(a) - target), db = std::abs(pred_obs(b) - target);
      if (da != db) return da < db;
      return a < b;
    });
    int donor = order[rng.index(static_cast<std::size_t>(k))];
    out(i) = y_obs(donor);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CART: binary tree with variance-reduction splits for numeric targets and
// Gini splits for categorical targets; imputation draws a donor from the leaf
// a missing case is routed to.

struct CartOptions {
  int min_leaf = 5;
  bool categorical_target = false;
};

class CartTree {
 public:
  void fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const CartOptions& options) {
    X_ = X;
    y_ = y;
    options_ = options;
    nodes_.clear();
    std::vector<int> rows(static_cast<std::size_t>(X.rows()));
    std::iota(rows.begin(), rows.end(), 0);
    build(std::move(rows), 0);
  }

  // training-row indices of the leaf containing x
  const std::vector<int>& leaf_members(const Eigen::RowVectorXd& x) const {
    int node = 0;
    while (!nodes_[static_cast<std::size_t>(node)].is_leaf) {
      const Node& nd = nodes_[static_cast<std::size_t>(node)];
      node = x(nd.feature) <= nd.threshold ? nd.left : nd.right;
    }
    return nodes_[static_cast<std::size_t>(node)].members;
  }

 private:
  struct Node {
    bool is_leaf = true;
    int feature = -1;
    double threshold = 0.0;
    int left = -1, right = -1;
    std::vector<int> members;
  };

  int build(std::vector<int> rows, int depth) {
    int id = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    int feature = -1;
    double threshold = 0.0;
    bool can_split = static_cast<int>(rows.size()) >= 2 * options_.min_leaf && depth < 30 &&
                     find_best_split(rows, feature, threshold);
    if (!can_split) {
      nodes_[static_cast<std::size_t>(id)].members = std::move(rows);
      return id;
    }
    std::vector<int> left_rows, right_rows;
    for (int r : rows) {
      (X_(r, feature) <= threshold ? left_rows : right_rows).push_back(r);
    }
    int left = build(std::move(left_rows), depth + 1);
    int right = build(std::move(right_rows), depth + 1);
    Node& node = nodes_[static_cast<std::size_t>(id)];
    node.is_leaf = false;
    node.feature = feature;
    node.threshold = threshold;
    node.left = left;
    node.right = right;
    return id;
  }

  bool find_best_split(const std::vector<int>& rows, int& best_feature, double& best_threshold) {
    double best_score = -1e-12;
    bool found = false;
    const int n = static_cast<int>(rows.size());
    std::vector<std::pair<double, double>> vals(static_cast<std::size_t>(n));  // (x, y)
    for (int f = 0; f < X_.cols(); ++f) {
      for (int i = 0; i < n; ++i)
        vals[static_cast<std::size_t>(i)] = {X_(rows[static_cast<std::size_t>(i)], f),
                                             y_(rows[static_cast<std::size_t>(i)])};
      std::sort(vals.begin(), vals.end());
      if (vals.front().first == vals.back().first) continue;
      double score, threshold;
      bool ok = options_.categorical_target ? best_gini_split(vals, score, threshold)
                                            : best_variance_split(vals, score, threshold);
      if (ok && score > best_score) {
        best_score = score;
        best_feature = f;
        best_threshold = threshold;
        found = true;
      }
    }
    return found;
  }

  // decrease in sum of squares from splitting at a threshold
  bool best_variance_split(const std::vector<std::pair<double, double>>& vals, double& best_score,
                           double& best_threshold) const {
    const int n = static_cast<int>(vals.size());
    double total = 0.0;
    for (const auto& v : vals) total += v.second;
    double left_sum = 0.0;
    bool found = false;
    best_score = 0.0;
    for (int i = 0; i < n - 1; ++i) {
      left_sum += vals[static_cast<std::size_t>(i)].second;
      if (vals[static_cast<std::size_t>(i)].first == vals[static_cast<std::size_t>(i + 1)].first)
        continue;
      int nl = i + 1, nr = n - nl;
      if (nl < options_.min_leaf || nr < options_.min_leaf) continue;
      double right_sum = total - left_sum;
      double score = left_sum * left_sum / nl + right_sum * right_sum / nr - total * total / n;
      if (!found || score > best_score) {
        best_score = score;
        best_threshold = 0.5 * (vals[static_cast<std::size_t>(i)].first +
                                vals[static_cast<std::size_t>(i + 1)].first);
        found = true;
      }
    }
    return found && best_score > 1e-12;
  }

  bool best_gini_split(const std::vector<std::pair<double, double>>& vals, double& best_score,
                       double& best_threshold) const {
    // class labels are level codes; collect the distinct ones
    std::vector<double> classes;
    for (const auto& v : vals) classes.push_back(v.second);
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    const int n = static_cast<int>(vals.size());
    const int c = static_cast<int>(classes.size());
    if (c < 2) return false;
    auto class_index = [&](double v) {
      return static_cast<int>(std::lower_bound(classes.begin(), classes.end(), v) - classes.begin());
    };
    std::vector<double> total(static_cast<std::size_t>(c), 0.0), left(static_cast<std::size_t>(c), 0.0);
    for (const auto& v : vals) total[static_cast<std::size_t>(class_index(v.second))] += 1.0;
    auto gini_sum = [&](const std::vector<double>& counts, double m) {
      if (m <= 0.0) return 0.0;
      double s = 0.0;
      for (double x : counts) s += x * x;
      return m - s / m;  // m * gini impurity
    };
    double parent = gini_sum(total, n);
    bool found = false;
    best_score = 0.0;
    for (int i = 0; i < n - 1; ++i) {
      left[static_cast<std::size_t>(class_index(vals[static_cast<std::size_t>(i)].second))] += 1.0;
      if (vals[static_cast<std::size_t>(i)].first == vals[static_cast<std::size_t>(i + 1)].first)
        continue;
      int nl = i + 1, nr = n - nl;
      if (nl < options_.min_leaf || nr < options_.min_leaf) continue;
      std::vector<double> right(static_cast<std::size_t>(c));
      for (int j = 0; j < c; ++j)
        right[static_cast<std::size_t>(j)] = total[static_cast<std::size_t>(j)] - left[static_cast<std::size_t>(j)];
      double score = parent - gini_sum(left, nl) - gini_sum(right, nr);
      if (!found || score > best_score) {
        best_score = score;
        best_threshold = 0.5 * (vals[static_cast<std::size_t>(i)].first +
                                vals[static_cast<std::size_t>(i + 1)].first);
        found = true;
      }
    }
    return found && best_score > 1e-12;
  }

  Eigen::MatrixXd X_;
  Eigen::VectorXd y_;
  CartOptions options_;
  std::vector<Node> nodes_;
};

inline std::vector<int> bootstrap_indices(int n, Rng& rng) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (auto& i : idx) i = static_cast<int>(rng.index(static_cast<std::size_t>(n)));
  return idx;
}

// CART imputation: tree fitted on a bootstrap resample of the observed cases;
// each missing case takes the observed value of a donor drawn uniformly from
// its leaf.
inline Eigen::VectorXd impute_variable_cart(const Eigen::VectorXd& y_obs,
                                            const Eigen::MatrixXd& X_obs,
                                            const Eigen::MatrixXd& X_mis,
                                            const CartOptions& options, Rng& rng) {
  const int n_mis = static_cast<int>(X_mis.rows());
  if (n_mis == 0) return Eigen::VectorXd();
  const int n_obs = static_cast<int>(X_obs.rows());
  if (n_obs < 1) throw std::invalid_argument("impute_variable_cart: no observed cases");

  std::vector<int> boot = bootstrap_indices(n_obs, rng);
  Eigen::MatrixXd Xb(n_obs, X_obs.cols());
  Eigen::VectorXd yb(n_obs);
  for (int i = 0; i < n_obs; ++i) {
    Xb.row(i) = X_obs.row(boot[static_cast<std::size_t>(i)]);
    yb(i) = y_obs(boot[static_cast<std::size_t>(i)]);
  }
  CartTree tree;
  tree.fit(Xb, yb, options);
  Eigen::VectorXd out(n_mis);
  for (int i = 0; i < n_mis; ++i) {
    const std::vector<int>& members = tree.leaf_members(X_mis.row(i));
    int donor = members[rng.index(members.size())];
    out(i) = yb(donor);
  }
  return out;
}

}  // namespace jointmi
