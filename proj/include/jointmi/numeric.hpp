#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace jointmi {

inline double log_sum_exp(std::span<const double> xs) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

namespace detail {

template <typename F>
double simpson(F&& f, double a, double b, double fa, double fm, double fb) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

template <typename F>
double adaptive_simpson_rec(F&& f, double a, double b, double fa, double fm, double fb,
                            double whole, double tol, int depth) {
  double m = 0.5 * (a + b);
  double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  double flm = f(lm), frm = f(rm);
  double left = simpson(f, a, m, fa, flm, fm);
  double right = simpson(f, m, b, fm, frm, fb);
  double err = left + right - whole;
  if (depth <= 0 || std::abs(err) <= 15.0 * tol) {
    return left + right + err / 15.0;
  }
  return adaptive_simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

}  // namespace detail

// Adaptive Simpson on [a,b]; tolerance is relative to the running estimate,
// with an absolute floor for integrals near zero.
template <typename F>
double adaptive_simpson(F&& f, double a, double b, double rel_tol = 1e-10,
                        double abs_floor = 1e-300, int max_depth = 40) {
  if (!(b > a)) return 0.0;
  double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  double whole = detail::simpson(f, a, b, fa, fm, fb);
  double tol = std::max(std::abs(whole) * rel_tol, abs_floor);
  return detail::adaptive_simpson_rec(f, a, b, fa, fm, fb, whole, tol, max_depth);
}

// Brent's method for a 1-d minimum on [a,b].
template <typename F>
double brent_minimize(F&& f, double a, double b, double tol = 1e-10, int max_iter = 200) {
  const double golden = 0.3819660112501051;
  double x = a + golden * (b - a);
  double w = x, v = x;
  double fx = f(x), fw = fx, fv = fx;
  double d = 0.0, e = 0.0;
  for (int iter = 0; iter < max_iter; ++iter) {
    double mid = 0.5 * (a + b);
    double tol1 = tol * std::abs(x) + 1e-12;
    double tol2 = 2.0 * tol1;
    if (std::abs(x - mid) <= tol2 - 0.5 * (b - a)) break;
    bool parabola_ok = false;
    double u = 0.0;
    if (std::abs(e) > tol1) {
      double r = (x - w) * (fx - fv);
      double q = (x - v) * (fx - fw);
      double p = (x - v) * q - (x - w) * r;
      q = 2.0 * (q - r);
      if (q > 0.0) p = -p;
      q = std::abs(q);
      double etmp = e;
      e = d;
      if (std::abs(p) < std::abs(0.5 * q * etmp) && p > q * (a - x) && p < q * (b - x)) {
        d = p / q;
        u = x + d;
        if (u - a < tol2 || b - u < tol2) d = (mid > x ? tol1 : -tol1);
        parabola_ok = true;
      }
    }
    if (!parabola_ok) {
      e = (x >= mid ? a - x : b - x);
      d = golden * e;
    }
    u = (std::abs(d) >= tol1 ? x + d : x + (d > 0 ? tol1 : -tol1));
    double fu = f(u);
    if (fu <= fx) {
      if (u >= x) a = x; else b = x;
      v = w; w = x; x = u;
      fv = fw; fw = fx; fx = fu;
    } else {
      if (u < x) a = u; else b = u;
      if (fu <= fw || w == x) {
        v = w; w = u; fv = fw; fw = fu;
      } else if (fu <= fv || v == x || v == w) {
        v = u; fv = fu;
      }
    }
  }
  return x;
}

// Bisection for f(x)=0 on a bracketing interval [lo,hi].
template <typename F>
double bisect_root(F&& f, double lo, double hi, double rel_tol = 1e-8, int max_iter = 200) {
  double flo = f(lo), fhi = f(hi);
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  if (flo * fhi > 0.0) throw std::invalid_argument("bisect_root: interval does not bracket a root");
  for (int i = 0; i < max_iter; ++i) {
    double mid = 0.5 * (lo + hi);
    double fm = f(mid);
    if (fm == 0.0 || (hi - lo) <= rel_tol * std::max(1.0, std::abs(mid))) return mid;
    if (flo * fm < 0.0) {
      hi = mid;
    } else {
      lo = mid;
      flo = fm;
    }
  }
  return 0.5 * (lo + hi);
}

// Moments of the exponential over an interval: int_a^b s^k exp(c s) ds for
// k = 0,1,2, series-expanded near c = 0 to avoid cancellation.
inline void exp_moments(double c, double a, double b, double& m0, double& m1, double& m2) {
  const double d = b - a;
  if (d <= 0.0) {
    m0 = m1 = m2 = 0.0;
    return;
  }
  const double cd = c * d;
  double i0, i1, i2;  // int_0^d u^k exp(c u) du
  if (std::abs(cd) < 1e-4) {
    i0 = d * (1.0 + cd / 2.0 + cd * cd / 6.0 + cd * cd * cd / 24.0);
    i1 = d * d * (0.5 + cd / 3.0 + cd * cd / 8.0 + cd * cd * cd / 30.0);
    i2 = d * d * d * (1.0 / 3.0 + cd / 4.0 + cd * cd / 10.0 + cd * cd * cd / 36.0);
  } else {
    const double e = std::exp(cd);
    i0 = (e - 1.0) / c;
    i1 = (d * e) / c - (e - 1.0) / (c * c);
    i2 = (d * d * e) / c - 2.0 * i1 / c;
  }
  const double ea = std::exp(c * a);
  m0 = ea * i0;
  m1 = ea * (a * i0 + i1);
  m2 = ea * (a * a * i0 + 2.0 * a * i1 + i2);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Wichura's AS241 rational approximation of the standard normal quantile.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("normal_quantile: p outside (0,1)");
  double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    double r = 0.180625 - q * q;
    return q *
           (((((((2509.0809287301226727 * r + 33430.575583588128105) * r + 67265.770927008700853) * r +
                 45921.953931549871457) * r + 13731.693765509461125) * r + 1971.5909503065514427) * r +
              133.14166789178437745) * r + 3.387132872796366608) /
           (((((((5226.495278852545703 * r + 28729.085735721942674) * r + 39307.89580009271061) * r +
                 21213.794301586595867) * r + 5394.1960214247511077) * r + 687.1870074920579083) * r +
              42.313330701600911252) * r + 1.0);
  }
  double r = (q < 0.0 ? p : 1.0 - p);
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r + 0.24178072517745061177) * r +
               1.27045825245236838258) * r + 3.64784832476320460504) * r + 5.7694972214606914055) * r +
             4.6303378461565452959) * r + 1.42343711074968357734) /
          (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r + 0.0151986665636164571966) * r +
               0.14810397642748007459) * r + 0.68976733498510000455) * r + 1.6763848301838038494) * r +
             2.05319162663775882187) * r + 1.0);
  } else {
    r -= 5.0;
    val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r +
               0.026532189526576123093) * r + 0.29656057182850489123) * r + 1.7848265399172913358) * r +
             5.4637849111641143699) * r + 6.6579046435011037772) /
          (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5) * r +
               7.868691311456132591e-4) * r + 0.0148753612908506148525) * r + 0.13692988092273580531) * r +
             0.59983220655588793769) * r + 1.0);
  }
  return q < 0.0 ? -val : val;
}

// Central-difference gradient, used by tests and by Hessian assembly.
template <typename F>
std::vector<double> finite_difference_gradient(F&& f, std::vector<double> x, double rel_step = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double h = rel_step * std::max(1.0, std::abs(x[i]));
    double xi = x[i];
    x[i] = xi + h;
    double fp = f(x);
    x[i] = xi - h;
    double fm = f(x);
    x[i] = xi;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace jointmi
