#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "jointmi/baseline.hpp"
#include "jointmi/cox.hpp"
#include "jointmi/km.hpp"
#include "jointmi/numeric.hpp"
#include "jointmi/rng.hpp"

using namespace jointmi;

namespace {
std::vector<SurvivalRecord> records(std::initializer_list<std::pair<double, bool>> xs) {
  std::vector<SurvivalRecord> out;
  for (auto [t, e] : xs) out.push_back({t, e});
  return out;
}
}  // namespace

TEST_CASE("Kaplan-Meier product limit by hand") {
  auto km = km_estimate(records({{1, true}, {2, true}, {3, true}}));
  CHECK(km.at(0.5) == 1.0);
  CHECK(km.at(1.0) == Catch::Approx(2.0 / 3.0));
  CHECK(km.at(2.0) == Catch::Approx(1.0 / 3.0));
  CHECK(km.at(3.0) == Catch::Approx(0.0).margin(1e-15));

  auto km2 = km_estimate(records({{1, true}, {2, false}}));
  CHECK(km2.at(1.0) == Catch::Approx(0.5));
  CHECK(km2.at(5.0) == Catch::Approx(0.5));

  auto km3 = km_estimate(records({{1, false}, {2, false}, {3, false}}));
  CHECK(km3.at(10.0) == 1.0);
}

TEST_CASE("Kaplan-Meier equals the empirical survival function without censoring") {
  Rng rng(5);
  std::vector<SurvivalRecord> recs;
  for (int i = 0; i < 40; ++i) recs.push_back({rng.uniform(0.1, 10.0), true});
  auto km = km_estimate(recs);
  for (double t : {0.5, 2.0, 4.0, 9.0}) {
    double empirical = 0.0;
    for (const auto& r : recs) empirical += r.observed_time_days > t ? 1.0 : 0.0;
    empirical /= static_cast<double>(recs.size());
    CHECK(km.at(t) == Catch::Approx(empirical).margin(1e-12));
  }
}

TEST_CASE("hazard_at closed forms") {
  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(1);
  Eigen::VectorXd K = Eigen::VectorXd::Zero(1);
  BaselineHazard weibull = WeibullBaseline{5.0, 1.0};
  CHECK(hazard_at(weibull, gamma, 0.0, K, 0.0, 1.0) == Catch::Approx(5.0));

  // alpha = 0: independent of the trajectory value
  CHECK(hazard_at(weibull, gamma, 0.0, K, 123.0, 1.0) ==
        Catch::Approx(hazard_at(weibull, gamma, 0.0, K, -9.0, 1.0)));

  // adding log 2 inside the exponent doubles the hazard
  Eigen::VectorXd gamma2(1), K2(1);
  gamma2 << std::log(2.0);
  K2 << 1.0;
  CHECK(hazard_at(weibull, gamma2, 0.0, K2, 0.0, 1.0) ==
        Catch::Approx(2.0 * hazard_at(weibull, gamma, 0.0, K, 0.0, 1.0)));
}

TEST_CASE("cumulative hazard closed forms and additivity") {
  Eigen::VectorXd gamma(0), K(0);
  AffineTrajectory flat{0.0, 0.0};
  BaselineHazard weibull = WeibullBaseline{5.0, 1.0};
  CHECK(cumulative_hazard(weibull, gamma, 0.0, K, flat, 1.0) == Catch::Approx(1.0).epsilon(1e-10));

  BaselineHazard constant2 = PiecewiseBaseline{{}, {2.0}};
  CHECK(cumulative_hazard(constant2, gamma, 0.0, K, flat, 3.0) == Catch::Approx(6.0).epsilon(1e-12));

  BaselineHazard pieces = PiecewiseBaseline{{1.0, 2.0}, {1.0, 2.0, 0.5}};
  AffineTrajectory traj{0.3, 0.8};
  double whole = cumulative_hazard(pieces, gamma, 0.7, K, traj, 2.6);
  double split = cumulative_hazard_between(pieces, gamma, 0.7, K, traj, 0.0, 1.3) +
                 cumulative_hazard_between(pieces, gamma, 0.7, K, traj, 1.3, 2.6);
  CHECK(whole == Catch::Approx(split).epsilon(1e-8));
}

TEST_CASE("bspline cumulative hazard matches a dense trapezoid oracle") {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    BSplineBasis basis(3, 0.0, 2.0, {0.4, 0.8, 1.2, 1.6});
    Eigen::VectorXd coef(basis.basis_count());
    for (int j = 0; j < coef.size(); ++j) coef(j) = rng.uniform(-1.0, 1.0);
    BaselineHazard spline = BSplineBaseline{basis, coef};
    Eigen::VectorXd gamma(1), K(1);
    gamma << rng.uniform(-0.5, 0.5);
    K << rng.uniform(0.0, 2.0);
    double alpha = rng.uniform(-0.5, 0.5);
    AffineTrajectory traj{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    double T = rng.uniform(0.3, 2.0);

    double fast = cumulative_hazard(spline, gamma, alpha, K, traj, T, 1e-10);
    // independent oracle: 10,000-point trapezoid
    const int grid = 10000;
    double oracle = 0.0;
    for (int g = 0; g < grid; ++g) {
      double s0 = T * g / grid, s1 = T * (g + 1) / grid;
      double f0 = hazard_at(spline, gamma, alpha, K, traj(s0), s0);
      double f1 = hazard_at(spline, gamma, alpha, K, traj(s1), s1);
      oracle += 0.5 * (f0 + f1) * (s1 - s0);
    }
    CHECK(fast == Catch::Approx(oracle).epsilon(1e-6));
  }
}

TEST_CASE("Cox fit is zero under symmetry") {
  // two groups with identical event-time patterns
  Eigen::VectorXd time(6);
  time << 1, 2, 3, 1, 2, 3;
  std::vector<char> event = {1, 1, 0, 1, 1, 0};
  Eigen::MatrixXd X(6, 1);
  X << 0, 0, 0, 1, 1, 1;
  CoxFit fit = fit_cox_raw(time, event, X, {"group"});
  CHECK(std::abs(fit.gamma(0)) < 1e-8);
}

TEST_CASE("Cox estimate matches the grid oracle on a 6-subject instance") {
  Eigen::VectorXd time(6);
  time << 2.0, 3.5, 1.0, 5.0, 4.0, 6.5;
  std::vector<char> event = {1, 1, 1, 0, 1, 1};
  Eigen::MatrixXd X(6, 1);
  X << 1, 0, 1, 0, 1, 0;
  CoxFit fit = fit_cox_raw(time, event, X, {"x"});

  // brute-force grid maximization of the partial likelihood
  double best_g = -5.0, best_val = -1e300;
  for (double g = -5.0; g <= 5.0; g += 1e-4) {
    Eigen::VectorXd gamma(1);
    gamma << g;
    double val = cox_partial_loglik(time, event, X, gamma);
    if (val > best_val) {
      best_val = val;
      best_g = g;
    }
  }
  CHECK(fit.gamma(0) == Catch::Approx(best_g).margin(1e-4));
  CHECK(fit.partial_loglik >= best_val - 1e-8);
}

TEST_CASE("Cox reparameterization invariance under covariate scaling") {
  Rng rng(17);
  const int n = 60;
  Eigen::VectorXd time(n);
  std::vector<char> event(n);
  Eigen::MatrixXd X(n, 2);
  for (int i = 0; i < n; ++i) {
    time(i) = rng.uniform(0.1, 10.0);
    event[static_cast<std::size_t>(i)] = rng.uniform() < 0.7 ? 1 : 0;
    X(i, 0) = rng.normal();
    X(i, 1) = rng.uniform() < 0.5 ? 0.0 : 1.0;
  }
  CoxFit fit = fit_cox_raw(time, event, X, {"a", "b"});
  Eigen::MatrixXd Xs = X;
  const double c = 4.0;
  Xs.col(0) *= c;
  CoxFit fit_scaled = fit_cox_raw(time, event, Xs, {"a", "b"});
  CHECK(fit_scaled.gamma(0) == Catch::Approx(fit.gamma(0) / c).epsilon(1e-6));
  CHECK(fit_scaled.partial_loglik == Catch::Approx(fit.partial_loglik).epsilon(1e-9));
}

TEST_CASE("Cox partial-likelihood gradient matches finite differences") {
  Rng rng(23);
  const int n = 40;
  Eigen::VectorXd time(n);
  std::vector<char> event(n);
  Eigen::MatrixXd X(n, 3);
  for (int i = 0; i < n; ++i) {
    time(i) = rng.uniform(0.1, 10.0);
    event[static_cast<std::size_t>(i)] = rng.uniform() < 0.6 ? 1 : 0;
    for (int j = 0; j < 3; ++j) X(i, j) = rng.normal();
  }
  for (int point = 0; point < 100; ++point) {
    Eigen::VectorXd gamma(3);
    for (int j = 0; j < 3; ++j) gamma(j) = rng.uniform(-1.0, 1.0);
    Eigen::VectorXd grad;
    cox_partial_loglik(time, event, X, gamma, &grad);
    auto fd = finite_difference_gradient(
        [&](const std::vector<double>& v) {
          Eigen::VectorXd g = Eigen::Map<const Eigen::VectorXd>(v.data(), 3);
          return cox_partial_loglik(time, event, X, g);
        },
        {gamma(0), gamma(1), gamma(2)}, 1e-6);
    for (int j = 0; j < 3; ++j) {
      double scale = std::max(1.0, std::abs(fd[static_cast<std::size_t>(j)]));
      CHECK(std::abs(grad(j) - fd[static_cast<std::size_t>(j)]) / scale < 1e-5);
    }
  }
}

TEST_CASE("perfect separation raises the monotone-likelihood error") {
  Eigen::VectorXd time(6);
  time << 1, 2, 3, 10, 11, 12;
  std::vector<char> event = {1, 1, 1, 1, 1, 1};
  Eigen::MatrixXd X(6, 1);
  X << 1, 1, 1, 0, 0, 0;  // the covariate perfectly orders all events
  CHECK_THROWS_WITH(fit_cox_raw(time, event, X, {"x"}),
                    Catch::Matchers::ContainsSubstring("monotone"));
}

TEST_CASE("Breslow baseline reproduces Nelson-Aalen at gamma = 0") {
  Eigen::VectorXd time(4);
  time << 1, 2, 3, 4;
  std::vector<char> event = {1, 1, 0, 1};
  Eigen::MatrixXd X(4, 1);
  X << 0.0, 1.0, 0.0, 1.0;
  CoxFit fit = fit_cox_raw(time, event, X, {"x"}, 0);  // zero iterations: gamma stays 0
  const auto& pw = std::get<PiecewiseBaseline>(fit.baseline);
  // cumulative baseline hazard at the event times: 1/4, 1/4+1/3, +1/1
  double H1 = baseline_cumulative(fit.baseline, 1.0);
  double H2 = baseline_cumulative(fit.baseline, 2.0);
  double H4 = baseline_cumulative(fit.baseline, 4.0);
  CHECK(H1 == Catch::Approx(0.25).epsilon(1e-12));
  CHECK(H2 == Catch::Approx(0.25 + 1.0 / 3.0).epsilon(1e-12));
  CHECK(H4 == Catch::Approx(0.25 + 1.0 / 3.0 + 1.0).epsilon(1e-12));
  CHECK(pw.rates.back() == 0.0);
}
