#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "jointmi/joint_ml.hpp"
#include "jointmi/lmm.hpp"
#include "jointmi/simulate.hpp"

using namespace jointmi;

namespace {

ParameterSet mid_params() {
  ParameterSet p;
  p.beta = Eigen::VectorXd(6);
  p.beta << 5.0, 0.75, 0.75, 0.95, 1.15, 0.85;
  p.gamma = Eigen::VectorXd(3);
  p.gamma << 0.2, -0.3, 0.4;
  p.alpha = 1.0;
  p.D = 1.0;
  p.sigma = 1.0;
  return p;
}

Dataset simulated(int n, std::uint64_t seed, ParameterSet p = mid_params()) {
  SimulationConfig config;
  config.n_subjects = n;
  return simulate_dataset(p, config, seed);
}

// independent dense-trapezoid integration over the random intercept
double trapezoid_joint_loglik(const JointModelParameters& params, const JointDesign& design,
                              int grid = 10000) {
  double total = 0.0;
  const int tcol = design.lng.time_column;
  for (int i = 0; i < design.n(); ++i) {
    const Eigen::MatrixXd& X = design.lng.X[static_cast<std::size_t>(i)];
    const Eigen::VectorXd& y = design.lng.y[static_cast<std::size_t>(i)];
    const double a = design.lng.x0[static_cast<std::size_t>(i)].dot(params.beta);
    const double slope = params.beta(tcol);
    const Eigen::VectorXd K = design.surv.K.row(i).transpose();
    const double link = params.gamma.size() > 0 ? params.gamma.dot(K) : 0.0;
    const double T = design.surv.time(i);
    const bool event = design.surv.event[static_cast<std::size_t>(i)] != 0;

    // H(b) factorizes as exp(alpha b) * H(0) for the affine trajectory
    const int tgrid = 2000;
    double H0 = 0.0;
    for (int g = 0; g < tgrid; ++g) {
      double s0 = T * g / tgrid, s1 = T * (g + 1) / tgrid;
      auto f = [&](double s) {
        return baseline_hazard(params.baseline, s) * std::exp(link + params.alpha * (a + slope * s));
      };
      H0 += 0.5 * (f(s0) + f(s1)) * (s1 - s0);
    }

    const double span = 8.0 * std::sqrt(params.D);
    double sum = 0.0;
    for (int g = 0; g <= grid; ++g) {
      double b = -span + 2.0 * span * g / grid;
      double logdens = -0.5 * std::log(2.0 * M_PI * params.D) - 0.5 * b * b / params.D;
      for (int j = 0; j < y.size(); ++j) {
        double mu = X.row(j).dot(params.beta) + b;
        logdens += -0.5 * std::log(2.0 * M_PI * params.sigma2) -
                   0.5 * (y(j) - mu) * (y(j) - mu) / params.sigma2;
      }
      double H = std::exp(params.alpha * b) * H0;
      logdens -= H;
      if (event)
        logdens += std::log(baseline_hazard(params.baseline, T)) + link +
                   params.alpha * (a + slope * T + b);
      double weight = (g == 0 || g == grid) ? 0.5 : 1.0;
      sum += weight * std::exp(logdens);
    }
    sum *= 2.0 * span / grid;
    total += std::log(sum);
  }
  return total;
}

}  // namespace

TEST_CASE("degenerate D reduces to the b = 0 plug-in likelihood") {
  Dataset ds = simulated(30, 1);
  JointModelSpec spec = JointModelSpec::simulation_default();
  JointDesign design = build_joint_design(ds, spec);
  JointModelParameters params = JointModelParameters::from_truth(mid_params());
  params.D = 1e-12;
  double gh = joint_loglik(params, design);

  // plug-in at b = 0
  double plug = 0.0;
  for (int i = 0; i < design.n(); ++i) {
    const Eigen::MatrixXd& X = design.lng.X[static_cast<std::size_t>(i)];
    const Eigen::VectorXd& y = design.lng.y[static_cast<std::size_t>(i)];
    for (int j = 0; j < y.size(); ++j) {
      double mu = X.row(j).dot(params.beta);
      plug += -0.5 * std::log(2.0 * M_PI * params.sigma2) -
              0.5 * (y(j) - mu) * (y(j) - mu) / params.sigma2;
    }
    const Eigen::VectorXd K = design.surv.K.row(i).transpose();
    double link = params.gamma.dot(K);
    double a = design.lng.x0[static_cast<std::size_t>(i)].dot(params.beta);
    AffineTrajectory traj{a, params.beta(design.lng.time_column)};
    double T = design.surv.time(i);
    plug -= cumulative_hazard(params.baseline, params.gamma, params.alpha, K, traj, T, 1e-12);
    if (design.surv.event[static_cast<std::size_t>(i)])
      plug += std::log(baseline_hazard(params.baseline, T)) + link + params.alpha * traj(T);
  }
  CHECK(gh == Catch::Approx(plug).epsilon(1e-6));
}

TEST_CASE("alpha = 0 factorizes into longitudinal and survival blocks") {
  for (std::uint64_t seed : {2, 3, 4, 5, 6}) {
    Dataset ds = simulated(25, seed);
    JointModelSpec spec = JointModelSpec::simulation_default();
    JointDesign design = build_joint_design(ds, spec);
    JointModelParameters params = JointModelParameters::from_truth(mid_params());
    params.alpha = 0.0;
    double joint = joint_loglik(params, design);

    double lmm_part =
        lmm_marginal_loglik(design.lng, params.beta, std::sqrt(params.sigma2), params.D);
    double surv_part = 0.0;
    for (int i = 0; i < design.n(); ++i) {
      const Eigen::VectorXd K = design.surv.K.row(i).transpose();
      double link = params.gamma.dot(K);
      double T = design.surv.time(i);
      surv_part -= std::exp(link) * baseline_cumulative(params.baseline, T);
      if (design.surv.event[static_cast<std::size_t>(i)])
        surv_part += std::log(baseline_hazard(params.baseline, T)) + link;
    }
    CHECK(joint == Catch::Approx(lmm_part + surv_part).epsilon(1e-8));
  }
}

TEST_CASE("15-node Gauss-Hermite matches the dense trapezoid oracle") {
  // small instances: one or two observations per subject keep the conditional
  // posterior of b wide relative to the prior, where the 15-node rule holds
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    ParameterSet truth = mid_params();
    truth.sigma = 1.3;
    truth.D = 0.45;
    truth.alpha = rng.uniform(0.3, 1.0);
    Dataset ds = simulated(5, 100 + static_cast<std::uint64_t>(trial), truth);
    for (auto& s : ds.subjects)
      if (s.observations.size() > 2) s.observations.resize(1 + rng.index(2));
    JointModelSpec spec = JointModelSpec::simulation_default();
    JointDesign design = build_joint_design(ds, spec);
    JointModelParameters params = JointModelParameters::from_truth(truth);
    params.D = rng.uniform(0.3, 0.55);
    double gh = joint_loglik(params, design);
    double oracle = trapezoid_joint_loglik(params, design);
    CHECK(gh == Catch::Approx(oracle).epsilon(1e-6));
  }
}

TEST_CASE("joint gradient matches finite differences") {
  Dataset ds = simulated(25, 8);
  JointModelSpec spec = JointModelSpec::simulation_default();
  JointDesign design = build_joint_design(ds, spec);
  jointml_detail::Context ctx = jointml_detail::build_context(design, 15, 4);
  const int p = design.lng.n_columns();
  const int q = static_cast<int>(design.surv.column_names.size());
  const int R = ctx.n_rates;
  Rng rng(9);

  for (int point = 0; point < 50; ++point) {
    jointml_detail::Theta theta;
    theta.beta.resize(p);
    theta.beta << rng.uniform(3.0, 6.0), rng.uniform(0.3, 1.2), rng.uniform(0.2, 1.0),
        rng.uniform(0.2, 1.2), rng.uniform(0.5, 1.5), rng.uniform(0.3, 1.1);
    theta.gamma.resize(q);
    for (int j = 0; j < q; ++j) theta.gamma(j) = rng.uniform(-0.6, 0.6);
    theta.alpha = rng.uniform(0.2, 1.3);
    theta.sigma2 = rng.uniform(0.5, 2.0);
    theta.D = rng.uniform(0.4, 1.6);
    theta.rates.resize(R);
    for (int r = 0; r < R; ++r) theta.rates(r) = rng.uniform(0.05, 2.0);

    Eigen::VectorXd grad;
    joint_loglik_at(ctx, theta, &grad);

    std::vector<double> x;
    for (int j = 0; j < p; ++j) x.push_back(theta.beta(j));
    for (int j = 0; j < q; ++j) x.push_back(theta.gamma(j));
    x.push_back(theta.alpha);
    x.push_back(0.5 * std::log(theta.sigma2));
    x.push_back(std::log(theta.D));
    for (int r = 0; r < R; ++r) x.push_back(std::log(theta.rates(r)));

    auto eval = [&](const std::vector<double>& v) {
      jointml_detail::Theta t = theta;
      int idx = 0;
      for (int j = 0; j < p; ++j) t.beta(j) = v[static_cast<std::size_t>(idx++)];
      for (int j = 0; j < q; ++j) t.gamma(j) = v[static_cast<std::size_t>(idx++)];
      t.alpha = v[static_cast<std::size_t>(idx++)];
      t.sigma2 = std::exp(2.0 * v[static_cast<std::size_t>(idx++)]);
      t.D = std::exp(v[static_cast<std::size_t>(idx++)]);
      for (int r = 0; r < R; ++r) t.rates(r) = std::exp(v[static_cast<std::size_t>(idx++)]);
      return joint_loglik_at(ctx, t);
    };
    auto fd = finite_difference_gradient(eval, x, 1e-6);
    for (std::size_t j = 0; j < x.size(); ++j) {
      double scale = std::max(1.0, std::abs(fd[j]));
      CHECK(std::abs(grad(static_cast<Eigen::Index>(j)) - fd[j]) / scale < 1e-4);
    }
  }
}

TEST_CASE("EM fit: alpha held at zero matches the standalone LMM") {
  Dataset ds = simulated(120, 10);
  JointModelSpec spec = JointModelSpec::simulation_default();
  spec.fix_alpha_zero = true;
  JointMlOptions options;
  options.compute_se = false;
  options.loglik_tol = 1e-10;
  JointMlFit fit = fit_joint_ml(ds, spec, options);
  LmmFit lmm = fit_lmm(ds, spec.longitudinal);
  for (int j = 0; j < lmm.beta.size(); ++j)
    CHECK(fit.beta(j) == Catch::Approx(lmm.beta(j)).margin(1e-4));
  CHECK(fit.sigma == Catch::Approx(lmm.sigma).margin(1e-4));
  CHECK(fit.alpha == 0.0);
}

TEST_CASE("EM is monotone and converges on simulated data") {
  Dataset ds = simulated(100, 11);
  JointModelSpec spec = JointModelSpec::simulation_default();
  JointMlOptions options;
  options.compute_se = false;
  JointMlFit fit = fit_joint_ml(ds, spec, options);
  CHECK(fit.converged);
  CHECK(fit.max_loglik_decrease <= 1e-10);
  CHECK(fit.aic == Catch::Approx(-2.0 * fit.loglik + 2.0 * fit.n_parameters).margin(1e-9));
}

TEST_CASE("EM recovers the generating parameters on a moderate sample") {
  ParameterSet truth = mid_params();
  Dataset ds = simulated(250, 12, truth);
  JointModelSpec spec = JointModelSpec::simulation_default();
  JointMlFit fit = fit_joint_ml(ds, spec);
  REQUIRE(fit.se_valid);
  for (int j = 0; j < 6; ++j)
    CHECK(std::abs(fit.beta(j) - truth.beta(j)) < 4.0 * fit.beta_se(j));
  for (int j = 0; j < 3; ++j)
    CHECK(std::abs(fit.gamma(j) - truth.gamma(j)) < 4.0 * fit.gamma_se(j));
  CHECK(std::abs(fit.alpha - truth.alpha) < 4.0 * fit.alpha_se);
  CHECK(std::abs(fit.sigma - truth.sigma) < 4.0 * fit.sigma_se);
}

TEST_CASE("relabeling subjects leaves the fit unchanged") {
  Dataset ds = simulated(150, 13);
  Dataset reversed = ds;
  std::reverse(reversed.subjects.begin(), reversed.subjects.end());
  JointModelSpec spec = JointModelSpec::simulation_default();

  // the likelihood itself is permutation invariant up to reduction rounding
  JointDesign d_a = build_joint_design(ds, spec);
  JointDesign d_b = build_joint_design(reversed, spec);
  JointModelParameters params = JointModelParameters::from_truth(mid_params());
  double ll_a = joint_loglik(params, d_a);
  double ll_b = joint_loglik(params, d_b);
  CHECK(ll_a == Catch::Approx(ll_b).epsilon(1e-12));

  // fitted values agree to the optimizer's attainable resolution
  JointMlOptions options;
  options.compute_se = false;
  options.loglik_tol = 1e-10;
  options.max_iter = 600;
  JointMlFit a = fit_joint_ml(ds, spec, options);
  JointMlFit b = fit_joint_ml(reversed, spec, options);
  REQUIRE(a.converged);
  REQUIRE(b.converged);
  for (int j = 0; j < a.beta.size(); ++j) CHECK(a.beta(j) == Catch::Approx(b.beta(j)).margin(2e-5));
  CHECK(a.alpha == Catch::Approx(b.alpha).margin(2e-4));
  CHECK(a.D == Catch::Approx(b.D).margin(2e-5));
  CHECK(a.loglik == Catch::Approx(b.loglik).margin(1e-7));
}

TEST_CASE("invalid variance parameters raise a domain error") {
  Dataset ds = simulated(10, 14);
  JointModelSpec spec = JointModelSpec::simulation_default();
  JointDesign design = build_joint_design(ds, spec);
  JointModelParameters params = JointModelParameters::from_truth(mid_params());
  params.D = 0.0;
  CHECK_THROWS_AS(joint_loglik(params, design), std::domain_error);
  params.D = 1.0;
  params.sigma2 = -1.0;
  CHECK_THROWS_AS(joint_loglik(params, design), std::domain_error);
}
