#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace jointmi {

// Clamped B-spline basis on [lo, hi] with the given interior knots.
// basis_count() = interior_knots + degree + 1.
class BSplineBasis {
 public:
  BSplineBasis(int degree, double lo, double hi, std::vector<double> interior_knots)
      : degree_(degree), lo_(lo), hi_(hi) {
    if (degree < 1) throw std::invalid_argument("BSplineBasis: degree must be >= 1");
    if (!(hi > lo)) throw std::invalid_argument("BSplineBasis: empty support");
    std::sort(interior_knots.begin(), interior_knots.end());
    for (std::size_t i = 1; i < interior_knots.size(); ++i) {
      if (interior_knots[i] <= interior_knots[i - 1])
        throw std::invalid_argument("BSplineBasis: knots must be strictly increasing");
    }
    for (double k : interior_knots) {
      if (k <= lo || k >= hi) throw std::invalid_argument("BSplineBasis: interior knot outside (lo,hi)");
    }
    for (int i = 0; i <= degree_; ++i) knots_.push_back(lo_);
    for (double k : interior_knots) knots_.push_back(k);
    for (int i = 0; i <= degree_; ++i) knots_.push_back(hi_);
  }

  int basis_count() const { return static_cast<int>(knots_.size()) - degree_ - 1; }
  double lo() const { return lo_; }
  double hi() const { return hi_; }

  // Cox-de Boor recursion; t is clamped to [lo, hi].
  Eigen::VectorXd evaluate(double t) const {
    t = std::clamp(t, lo_, hi_);
    const int m = basis_count();
    Eigen::VectorXd out = Eigen::VectorXd::Zero(m);
    int span = find_span(t);
    // triangular table of the nonzero basis values at t
    std::vector<double> left(static_cast<std::size_t>(degree_) + 1);
    std::vector<double> right(static_cast<std::size_t>(degree_) + 1);
    std::vector<double> ndu(static_cast<std::size_t>(degree_) + 1);
    ndu[0] = 1.0;
    for (int j = 1; j <= degree_; ++j) {
      left[static_cast<std::size_t>(j)] = t - knots_[static_cast<std::size_t>(span + 1 - j)];
      right[static_cast<std::size_t>(j)] = knots_[static_cast<std::size_t>(span + j)] - t;
      double saved = 0.0;
      for (int r = 0; r < j; ++r) {
        double denom = right[static_cast<std::size_t>(r + 1)] + left[static_cast<std::size_t>(j - r)];
        double temp = denom > 0.0 ? ndu[static_cast<std::size_t>(r)] / denom : 0.0;
        ndu[static_cast<std::size_t>(r)] = saved + right[static_cast<std::size_t>(r + 1)] * temp;
        saved = left[static_cast<std::size_t>(j - r)] * temp;
      }
      ndu[static_cast<std::size_t>(j)] = saved;
    }
    for (int j = 0; j <= degree_; ++j) {
      int idx = span - degree_ + j;
      if (idx >= 0 && idx < m) out(idx) = ndu[static_cast<std::size_t>(j)];
    }
    return out;
  }

 private:
  int find_span(double t) const {
    const int m = basis_count();
    if (t >= hi_) return m - 1;  // last nonempty span
    int span = degree_;
    while (span < m && t >= knots_[static_cast<std::size_t>(span + 1)]) ++span;
    return span;
  }

  int degree_;
  double lo_, hi_;
  std::vector<double> knots_;
};

}  // namespace jointmi
