#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace jointmi {

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

namespace detail {

// Golub-Welsch: nodes are the eigenvalues of the symmetric tridiagonal Jacobi
// matrix, weights are mu0 * (first eigenvector component)^2.
inline QuadratureRule golub_welsch(const std::vector<double>& offdiag, double mu0) {
  const int n = static_cast<int>(offdiag.size()) + 1;
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i + 1 < n; ++i) {
    jacobi(i, i + 1) = offdiag[static_cast<std::size_t>(i)];
    jacobi(i + 1, i) = offdiag[static_cast<std::size_t>(i)];
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
  QuadratureRule rule;
  rule.nodes.resize(static_cast<std::size_t>(n));
  rule.weights.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    rule.nodes[static_cast<std::size_t>(i)] = solver.eigenvalues()(i);
    double v0 = solver.eigenvectors()(0, i);
    rule.weights[static_cast<std::size_t>(i)] = mu0 * v0 * v0;
  }
  return rule;
}

}  // namespace detail

// Gauss-Hermite rule for integrals against exp(-x^2); weights sum to sqrt(pi).
inline QuadratureRule gauss_hermite(int n) {
  if (n < 1) throw std::invalid_argument("gauss_hermite: n must be >= 1");
  std::vector<double> offdiag;
  offdiag.reserve(static_cast<std::size_t>(n - 1));
  for (int i = 1; i < n; ++i) offdiag.push_back(std::sqrt(0.5 * i));
  QuadratureRule rule = detail::golub_welsch(offdiag, std::sqrt(M_PI));
  // enforce exact symmetry about zero
  for (int i = 0, j = n - 1; i < j; ++i, --j) {
    double x = 0.5 * (rule.nodes[static_cast<std::size_t>(j)] - rule.nodes[static_cast<std::size_t>(i)]);
    rule.nodes[static_cast<std::size_t>(i)] = -x;
    rule.nodes[static_cast<std::size_t>(j)] = x;
    double w = 0.5 * (rule.weights[static_cast<std::size_t>(i)] + rule.weights[static_cast<std::size_t>(j)]);
    rule.weights[static_cast<std::size_t>(i)] = w;
    rule.weights[static_cast<std::size_t>(j)] = w;
  }
  if (n % 2 == 1) rule.nodes[static_cast<std::size_t>(n / 2)] = 0.0;
  return rule;
}

// Gauss-Legendre rule on [-1,1]; weights sum to 2.
inline QuadratureRule gauss_legendre(int n) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: n must be >= 1");
  std::vector<double> offdiag;
  offdiag.reserve(static_cast<std::size_t>(n - 1));
  for (int i = 1; i < n; ++i) offdiag.push_back(i / std::sqrt(4.0 * i * i - 1.0));
  return detail::golub_welsch(offdiag, 2.0);
}

// Gauss-Legendre rule mapped to [a,b].
inline QuadratureRule gauss_legendre(int n, double a, double b) {
  QuadratureRule rule = gauss_legendre(n);
  double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  for (auto& x : rule.nodes) x = mid + half * x;
  for (auto& w : rule.weights) w *= half;
  return rule;
}

}  // namespace jointmi
