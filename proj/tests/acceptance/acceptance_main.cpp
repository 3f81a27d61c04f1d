// Acceptance suite: runs every gate criterion at its stated tolerance and
// prints one PASS/FAIL line per criterion. Exit code is the failure count.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "jointmi/cox.hpp"
#include "jointmi/impute.hpp"
#include "jointmi/joint_bayes.hpp"
#include "jointmi/joint_ml.hpp"
#include "jointmi/lmm.hpp"
#include "jointmi/pool.hpp"
#include "jointmi/report.hpp"
#include "jointmi/simulate.hpp"
#include "jointmi/study.hpp"

using namespace jointmi;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  int id;
  bool pass;
  std::string detail;
  double seconds;
};

std::vector<Outcome> outcomes;

void report(int id, bool pass, const std::string& detail, double seconds) {
  outcomes.push_back({id, pass, detail, seconds});
  std::printf("%s criterion %2d: %s [%.1fs]\n", pass ? "PASS" : "FAIL", id, detail.c_str(),
              seconds);
  std::fflush(stdout);
}

double elapsed(const Clock::time_point& start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

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

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// shared study results reused across criteria 2 and 3
PerformanceReport study_both_missing;
PerformanceReport study_response_only;
bool study_both_ready = false;
bool study_response_ready = false;

StudyConfig method_study_config(bool covariate_missing) {
  StudyConfig config;
  config.replicates = 100;
  config.sim.n_subjects = 250;
  config.sim.response_missing_target = 0.22;
  config.sim.covariate_missing_fraction = covariate_missing ? 0.20 : 0.0;
  config.imputation.m = 20;
  config.methods = {ImputationMethod::PMM, ImputationMethod::CART};
  config.estimators = {Estimator::ML};
  config.full_data_arm = true;
  return config;
}

const ArmPerformance* find_arm(const PerformanceReport& report, const std::string& method) {
  for (const auto& arm : report.arms)
    if (arm.method == method && arm.estimator == "ml") return &arm;
  return nullptr;
}

// ---------------------------------------------------------------------------

void criterion_1() {
  auto start = Clock::now();
  StudyConfig config;
  config.replicates = 200;
  config.sim.n_subjects = 250;
  config.sim.response_missing_target = 0.0;
  config.sim.covariate_missing_fraction = 0.0;
  config.methods = {};
  config.estimators = {Estimator::ML};
  config.full_data_arm = true;
  PerformanceReport rep = run_study(config, 101);
  const ArmPerformance* arm = find_arm(rep, "full");
  bool pass = arm != nullptr;
  std::string worst;
  if (arm) {
    // beta1..beta6, gamma1..gamma3, alpha: indices 0..9
    for (int j = 0; j <= 9 && j < arm->coverage.size(); ++j) {
      double c = arm->coverage(j);
      if (c < 0.91 || c > 0.99) {
        pass = false;
        worst += " " + rep.parameter_names[static_cast<std::size_t>(j)] + "=" +
                 std::to_string(c);
      }
    }
  }
  double secs = elapsed(start);
  if (secs > 1200.0) pass = false;
  std::ostringstream msg;
  msg << "full-data ML coverage in [0.91,0.99] for every beta, gamma, alpha (R=200, n=250)";
  if (arm) {
    msg << "; range [" << arm->coverage.head(10).minCoeff() << ", "
        << arm->coverage.head(10).maxCoeff() << "]";
  }
  if (!worst.empty()) msg << "; out of band:" << worst;
  report(1, pass, msg.str(), secs);
}

void criterion_2() {
  auto start = Clock::now();
  study_both_missing = run_study(method_study_config(true), 202);
  study_both_ready = true;
  const ArmPerformance* pmm = find_arm(study_both_missing, "pmm");
  const ArmPerformance* cart = find_arm(study_both_missing, "cart");
  bool pass = pmm && cart;
  int rmse_wins = 0, cover_wins = 0;
  if (pass) {
    for (int j = 0; j < 12; ++j) {
      if (pmm->rmse(j) <= cart->rmse(j)) ++rmse_wins;
      if (pmm->coverage(j) >= cart->coverage(j)) ++cover_wins;
    }
    pass = rmse_wins >= 9 && cover_wins >= 9;
  }
  double secs = elapsed(start);
  if (secs > 3600.0) pass = false;
  std::ostringstream msg;
  msg << "PMM beats CART under both-missingness (R=100, m=20): RMSE wins " << rmse_wins
      << "/12, coverage wins " << cover_wins << "/12 (need 9)";
  report(2, pass, msg.str(), secs);

  // informational harness properties at R=100
  const ArmPerformance* full = find_arm(study_both_missing, "full");
  if (full && pmm && cart) {
    double full_rmse = full->rmse.mean();
    std::printf("INFO: mean RMSE full=%.4f pmm=%.4f cart=%.4f (full-data arm should dominate)\n",
                full_rmse, pmm->rmse.mean(), cart->rmse.mean());
    std::printf("INFO: mean CI width full=%.4f pmm=%.4f cart=%.4f (pooled intervals widen)\n",
                full->mean_ci_width.mean(), pmm->mean_ci_width.mean(),
                cart->mean_ci_width.mean());
  }
}

void criterion_3() {
  auto start = Clock::now();
  if (!study_both_ready) {
    study_both_missing = run_study(method_study_config(true), 202);
    study_both_ready = true;
  }
  study_response_only = run_study(method_study_config(false), 303);
  study_response_ready = true;
  const ArmPerformance* pmm_b = find_arm(study_both_missing, "pmm");
  const ArmPerformance* cart_b = find_arm(study_both_missing, "cart");
  const ArmPerformance* pmm_r = find_arm(study_response_only, "pmm");
  const ArmPerformance* cart_r = find_arm(study_response_only, "cart");
  bool pass = pmm_b && cart_b && pmm_r && cart_r;
  int wins = 0;
  if (pass) {
    for (int j = 0; j < 12; ++j) {
      double both = 0.5 * (pmm_b->coverage(j) + cart_b->coverage(j));
      double resp = 0.5 * (pmm_r->coverage(j) + cart_r->coverage(j));
      if (resp >= both) ++wins;
    }
    pass = wins >= 9;
  }
  std::ostringstream msg;
  msg << "response-only missingness covers at least as well as both-missing for " << wins
      << "/12 parameters (need 9)";
  report(3, pass, msg.str(), elapsed(start));
}

void criterion_4() {
  auto start = Clock::now();
  Rng rng(404);
  double worst = 0.0;
  int count = 0;
  for (int instance = 0; instance < 100; ++instance) {
    ParameterSet truth = mid_params();
    truth.sigma = 1.3;
    truth.D = 0.45;
    truth.alpha = rng.uniform(0.3, 1.0);
    SimulationConfig config;
    config.n_subjects = 2;
    Dataset ds = simulate_dataset(truth, config, 4000 + static_cast<std::uint64_t>(instance));
    ds.subjects.resize(1);
    for (auto& s : ds.subjects)
      if (s.observations.size() > 2) s.observations.resize(1 + rng.index(2));
    JointModelSpec spec = JointModelSpec::simulation_default();
    JointDesign design = build_joint_design(ds, spec);
    JointModelParameters params = JointModelParameters::from_truth(truth);
    params.D = rng.uniform(0.3, 0.55);

    double gh = joint_loglik(params, design, 15);
    // dense trapezoid over b: H factorizes as exp(alpha b) H(0)
    const Eigen::MatrixXd& X = design.lng.X[0];
    const Eigen::VectorXd& y = design.lng.y[0];
    double a = design.lng.x0[0].dot(params.beta);
    double slope = params.beta(design.lng.time_column);
    Eigen::VectorXd K = design.surv.K.row(0).transpose();
    double link = params.gamma.dot(K);
    double T = design.surv.time(0);
    bool event = design.surv.event[0] != 0;
    const int tgrid = 2000;
    double H0 = 0.0;
    for (int g = 0; g < tgrid; ++g) {
      double s0 = T * g / tgrid, s1 = T * (g + 1) / tgrid;
      auto f = [&](double s) {
        return baseline_hazard(params.baseline, s) *
               std::exp(link + params.alpha * (a + slope * s));
      };
      H0 += 0.5 * (f(s0) + f(s1)) * (s1 - s0);
    }
    const double span = 8.0 * std::sqrt(params.D);
    const int grid = 10000;
    double sum = 0.0;
    for (int g = 0; g <= grid; ++g) {
      double b = -span + 2.0 * span * g / grid;
      double logdens = -0.5 * std::log(2.0 * M_PI * params.D) - 0.5 * b * b / params.D;
      for (int j = 0; j < y.size(); ++j) {
        double mu = X.row(j).dot(params.beta) + b;
        logdens += -0.5 * std::log(2.0 * M_PI * params.sigma2) -
                   0.5 * (y(j) - mu) * (y(j) - mu) / params.sigma2;
      }
      logdens -= std::exp(params.alpha * b) * H0;
      if (event)
        logdens += std::log(baseline_hazard(params.baseline, T)) + link +
                   params.alpha * (a + slope * T + b);
      sum += ((g == 0 || g == grid) ? 0.5 : 1.0) * std::exp(logdens);
    }
    double oracle = std::log(sum * 2.0 * span / grid);
    double rel = std::abs(gh - oracle) / std::max(1.0, std::abs(oracle));
    worst = std::max(worst, rel);
    ++count;
  }
  double secs = elapsed(start);
  bool pass = worst <= 1e-6 && count == 100 && secs <= 60.0;
  std::ostringstream msg;
  msg << "15-node quadrature vs 10k-point trapezoid on 100 small instances: worst rel err "
      << worst << " (cap 1e-6)";
  report(4, pass, msg.str(), secs);
}

void criterion_5() {
  auto start = Clock::now();
  Rng rng(505);
  double worst_lmm = 0.0, worst_cox = 0.0, worst_joint = 0.0;

  // LMM marginal gradient
  {
    ParameterSet truth = mid_params();
    SimulationConfig config;
    config.n_subjects = 40;
    Dataset ds = simulate_dataset(truth, config, 51);
    LongitudinalModelSpec spec = JointModelSpec::simulation_default().longitudinal;
    LongitudinalDesign design = build_longitudinal_design(ds, spec);
    const int P = design.n_columns();
    for (int point = 0; point < 50; ++point) {
      Eigen::VectorXd beta(P);
      for (int j = 0; j < P; ++j) beta(j) = rng.uniform(-2.0, 5.0);
      double sigma = rng.uniform(0.6, 2.0);
      double D = rng.uniform(0.1, 2.0);
      Eigen::VectorXd grad;
      lmm_marginal_loglik(design, beta, sigma, D, &grad);
      std::vector<double> x(static_cast<std::size_t>(P) + 2);
      for (int j = 0; j < P; ++j) x[static_cast<std::size_t>(j)] = beta(j);
      x[static_cast<std::size_t>(P)] = sigma;
      x[static_cast<std::size_t>(P) + 1] = D;
      auto fd = finite_difference_gradient(
          [&](const std::vector<double>& v) {
            Eigen::VectorXd bb = Eigen::Map<const Eigen::VectorXd>(v.data(), P);
            return lmm_marginal_loglik(design, bb, v[static_cast<std::size_t>(P)],
                                       v[static_cast<std::size_t>(P) + 1]);
          },
          x, 1e-6);
      for (std::size_t j = 0; j < x.size(); ++j)
        worst_lmm = std::max(worst_lmm,
                             std::abs(grad(static_cast<Eigen::Index>(j)) - fd[j]) /
                                 std::max(1.0, std::abs(fd[j])));
    }
  }

  // Cox partial-likelihood gradient
  {
    const int n = 50;
    Eigen::VectorXd time(n);
    std::vector<char> event(static_cast<std::size_t>(n));
    Eigen::MatrixXd X(n, 3);
    for (int i = 0; i < n; ++i) {
      time(i) = rng.uniform(0.1, 10.0);
      event[static_cast<std::size_t>(i)] = rng.uniform() < 0.6 ? 1 : 0;
      for (int j = 0; j < 3; ++j) X(i, j) = rng.normal();
    }
    for (int point = 0; point < 50; ++point) {
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
      for (int j = 0; j < 3; ++j)
        worst_cox = std::max(worst_cox, std::abs(grad(j) - fd[static_cast<std::size_t>(j)]) /
                                            std::max(1.0, std::abs(fd[static_cast<std::size_t>(j)])));
    }
  }

  // joint log-likelihood gradient
  {
    ParameterSet truth = mid_params();
    SimulationConfig config;
    config.n_subjects = 25;
    Dataset ds = simulate_dataset(truth, config, 52);
    JointModelSpec spec = JointModelSpec::simulation_default();
    JointDesign design = build_joint_design(ds, spec);
    jointml_detail::Context ctx = jointml_detail::build_context(design, 15, 4);
    const int p = design.lng.n_columns();
    const int q = static_cast<int>(design.surv.column_names.size());
    const int R = ctx.n_rates;
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
      auto fd = finite_difference_gradient(
          [&](const std::vector<double>& v) {
            jointml_detail::Theta t = theta;
            int idx = 0;
            for (int j = 0; j < p; ++j) t.beta(j) = v[static_cast<std::size_t>(idx++)];
            for (int j = 0; j < q; ++j) t.gamma(j) = v[static_cast<std::size_t>(idx++)];
            t.alpha = v[static_cast<std::size_t>(idx++)];
            t.sigma2 = std::exp(2.0 * v[static_cast<std::size_t>(idx++)]);
            t.D = std::exp(v[static_cast<std::size_t>(idx++)]);
            for (int r = 0; r < R; ++r) t.rates(r) = std::exp(v[static_cast<std::size_t>(idx++)]);
            return joint_loglik_at(ctx, t);
          },
          x, 1e-6);
      for (std::size_t j = 0; j < x.size(); ++j)
        worst_joint = std::max(worst_joint,
                               std::abs(grad(static_cast<Eigen::Index>(j)) - fd[j]) /
                                   std::max(1.0, std::abs(fd[j])));
    }
  }

  double secs = elapsed(start);
  bool pass = worst_lmm <= 1e-5 && worst_cox <= 1e-5 && worst_joint <= 1e-4 && secs <= 120.0;
  std::ostringstream msg;
  msg << "gradient suites: worst rel err lmm " << worst_lmm << " (1e-5), cox " << worst_cox
      << " (1e-5), joint " << worst_joint << " (1e-4), 50 points each";
  report(5, pass, msg.str(), secs);
}

void criterion_6() {
  auto start = Clock::now();
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(606 + static_cast<std::uint64_t>(trial));
    SimulationConfig config;
    config.n_subjects = 25;
    ParameterSet truth = draw_true_parameters(config, rng);
    Dataset ds = simulate_dataset(truth, config, 6000 + static_cast<std::uint64_t>(trial));
    JointModelSpec spec = JointModelSpec::simulation_default();
    JointDesign design = build_joint_design(ds, spec);
    JointModelParameters params = JointModelParameters::from_truth(truth);
    params.alpha = 0.0;
    double joint = joint_loglik(params, design);
    double lmm_part =
        lmm_marginal_loglik(design.lng, params.beta, std::sqrt(params.sigma2), params.D);
    double surv_part = 0.0;
    for (int i = 0; i < design.n(); ++i) {
      Eigen::VectorXd K = design.surv.K.row(i).transpose();
      double link = params.gamma.dot(K);
      double T = design.surv.time(i);
      surv_part -= std::exp(link) * baseline_cumulative(params.baseline, T);
      if (design.surv.event[static_cast<std::size_t>(i)])
        surv_part += std::log(baseline_hazard(params.baseline, T)) + link;
    }
    double rel = std::abs(joint - (lmm_part + surv_part)) / std::abs(lmm_part + surv_part);
    worst = std::max(worst, rel);
  }
  bool pass = worst <= 1e-8;
  std::ostringstream msg;
  msg << "alpha=0 factorization on 20 datasets: worst rel err " << worst << " (cap 1e-8)";
  report(6, pass, msg.str(), elapsed(start));
}

void criterion_7() {
  auto start = Clock::now();
  double worst_decrease = 0.0;
  int converged = 0;
  for (int trial = 0; trial < 50; ++trial) {
    Rng rng(707 + static_cast<std::uint64_t>(trial));
    SimulationConfig config;
    config.n_subjects = 60 + static_cast<int>(rng.index(60));
    ParameterSet truth = draw_true_parameters(config, rng);
    Dataset ds = simulate_dataset(truth, config, 7000 + static_cast<std::uint64_t>(trial));
    JointModelSpec spec = JointModelSpec::simulation_default();
    JointMlOptions options;
    options.compute_se = false;
    JointMlFit fit = fit_joint_ml(ds, spec, options);
    worst_decrease = std::max(worst_decrease, fit.max_loglik_decrease);
    if (fit.converged) ++converged;
  }
  bool pass = worst_decrease <= 1e-10;
  std::ostringstream msg;
  msg << "EM monotone over 50 random fits: worst loglik decrease " << worst_decrease
      << " (cap 1e-10), " << converged << "/50 converged";
  report(7, pass, msg.str(), elapsed(start));
}

void criterion_8() {
  auto start = Clock::now();
  bool pass = true;
  std::string detail;
  {
    ModelFitSummary fit;
    fit.names = {"x"};
    fit.estimates = Eigen::VectorXd::Constant(1, 2.0);
    fit.ses = Eigen::VectorXd::Constant(1, 0.5);
    std::vector<ModelFitSummary> fits(9, fit);
    PooledFit pooled = pool(fits);
    if (pooled.between(0) != 0.0 || pooled.se(0) != 0.5 || pooled.estimate(0) != 2.0) {
      pass = false;
      detail += " identical-fit identity failed;";
    }
  }
  {
    ModelFitSummary a, b;
    a.names = b.names = {"x"};
    a.estimates = Eigen::VectorXd::Constant(1, 1.0);
    b.estimates = Eigen::VectorXd::Constant(1, 3.0);
    a.ses = b.ses = Eigen::VectorXd::Constant(1, 0.0);
    PooledFit pooled = pool({a, b});
    if (pooled.estimate(0) != 2.0 || pooled.within(0) != 0.0 || pooled.between(0) != 2.0 ||
        pooled.total(0) != 3.0) {
      pass = false;
      detail += " hand-arithmetic case failed;";
    }
  }
  report(8, pass, "Rubin pooling identities hold exactly" + detail, elapsed(start));
}

void criterion_9() {
  auto start = Clock::now();
  // conjugate sigma^2 mechanism
  Rng rng(909);
  Priors priors;
  const double ss = 41.0;
  const long n_rows = 80;
  double shape = priors.sigma2_shape + 0.5 * n_rows;
  double rate = priors.sigma2_rate + 0.5 * ss;
  double expected = rate / (shape - 1.0);
  double sum = 0.0;
  const int draws = 50000;
  for (int d = 0; d < draws; ++d) sum += conjugate_sigma2_draw(rng, priors, ss, n_rows);
  double sigma2_mean = sum / draws;
  bool sigma_ok = std::abs(sigma2_mean - expected) / expected <= 0.02;

  // prior-only sampling of beta
  JointModelSpec spec = JointModelSpec::simulation_default();
  McmcConfig config;
  config.iterations = 30000;
  config.burn_in = 2000;
  config.thin = 2;
  config.scale_beta = 8.0;
  config.scale_gamma_alpha = 8.0;
  config.scale_spline = 8.0;
  config.prior_only = true;
  config.seed = 910;
  Dataset empty;
  BayesFit fit = run_mcmc(empty, spec, priors, config);
  int idx = fit.index_of("beta:(Intercept)");
  double mean_err = std::abs(fit.posterior_mean(idx));
  double sd_err = std::abs(fit.posterior_sd(idx) - 10.0) / 10.0;
  double mc_allowance = 4.0 * 10.0 / std::sqrt(std::max(fit.ess(idx), 10.0));
  bool prior_ok = mean_err < std::max(mc_allowance, 0.5) && sd_err <= 0.05;

  bool pass = sigma_ok && prior_ok;
  std::ostringstream msg;
  msg << "conjugate sigma^2 mean rel err " << std::abs(sigma2_mean - expected) / expected
      << " (cap 0.02); prior-only beta mean " << fit.posterior_mean(idx) << ", sd "
      << fit.posterior_sd(idx) << " vs 10 (cap 5%)";
  report(9, pass, msg.str(), elapsed(start));
}

void criterion_10() {
  auto start = Clock::now();
  ParameterSet truth = mid_params();
  SimulationConfig config;
  config.n_subjects = 500;
  Dataset ds = simulate_dataset(truth, config, 1001);
  JointModelSpec spec = JointModelSpec::simulation_default();
  JointMlFit ml = fit_joint_ml(ds, spec);

  McmcConfig mcmc;
  mcmc.iterations = 20000;
  mcmc.burn_in = 5000;
  mcmc.thin = 5;
  mcmc.seed = 1010;
  BayesFit bayes = run_mcmc(ds, spec, Priors{}, mcmc);

  struct Pair {
    std::string name;
    double ml_value;
  };
  std::vector<Pair> pairs;
  for (int j = 0; j < ml.beta.size(); ++j)
    pairs.push_back({"beta:" + ml.beta_names[static_cast<std::size_t>(j)], ml.beta(j)});
  for (int j = 0; j < ml.gamma.size(); ++j)
    pairs.push_back({"gamma:" + ml.gamma_names[static_cast<std::size_t>(j)], ml.gamma(j)});
  pairs.push_back({"alpha", ml.alpha});
  pairs.push_back({"sigma", ml.sigma});
  pairs.push_back({"D", ml.D});

  bool pass = true;
  std::string offenders;
  double worst_z = 0.0;
  for (const auto& pair : pairs) {
    int idx = bayes.index_of(pair.name);
    if (idx < 0) {
      pass = false;
      offenders += " " + pair.name + "(missing)";
      continue;
    }
    double z = std::abs(pair.ml_value - bayes.posterior_mean(idx)) /
               std::max(bayes.posterior_sd(idx), 1e-12);
    worst_z = std::max(worst_z, z);
    if (z > 2.0) {
      pass = false;
      offenders += " " + pair.name + "(z=" + std::to_string(z) + ")";
    }
  }
  double secs = elapsed(start);
  if (secs > 900.0) pass = false;
  std::ostringstream msg;
  msg << "ML within 2 posterior SDs of Bayes on n=500: worst |z| " << worst_z;
  if (!offenders.empty()) msg << "; offenders:" << offenders;
  report(10, pass, msg.str(), secs);
}

void criterion_11() {
  auto start = Clock::now();
  StudyConfig config;
  config.replicates = 3;
  config.sim.n_subjects = 60;
  config.imputation.m = 3;
  config.imputation.chained_iterations = 4;
  config.methods = {ImputationMethod::PMM, ImputationMethod::EMB};
  config.estimators = {Estimator::ML};

  namespace fs = std::filesystem;
  fs::path dir_a = fs::temp_directory_path() / "jointmi_accept_a";
  fs::path dir_b = fs::temp_directory_path() / "jointmi_accept_b";
  fs::create_directories(dir_a);
  fs::create_directories(dir_b);
  PerformanceReport rep_a = run_study(config, 4242);
  PerformanceReport rep_b = run_study(config, 4242);
  emit_report(rep_a, dir_a.string());
  emit_report(rep_b, dir_b.string());
  bool pass = true;
  for (const char* name : {"coverage_rmse.csv", "fits.json", "density_compare.csv"}) {
    if (slurp((dir_a / name).string()) != slurp((dir_b / name).string())) pass = false;
  }
  report(11, pass, "study outputs are byte-identical for a repeated seed", elapsed(start));
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) {
      std::istringstream in(argv[++i]);
      std::string tok;
      while (std::getline(in, tok, ',')) only.push_back(std::stoi(tok));
    }
  }
  auto want = [&](int id) {
    if (only.empty()) return true;
    for (int x : only)
      if (x == id) return true;
    return false;
  };

  if (want(4)) criterion_4();
  if (want(5)) criterion_5();
  if (want(6)) criterion_6();
  if (want(7)) criterion_7();
  if (want(8)) criterion_8();
  if (want(9)) criterion_9();
  if (want(11)) criterion_11();
  if (want(10)) criterion_10();
  if (want(1)) criterion_1();
  if (want(2)) criterion_2();
  if (want(3)) criterion_3();

  int failures = 0;
  for (const auto& outcome : outcomes)
    if (!outcome.pass) ++failures;
  std::printf("\n%zu criteria run, %d failed\n", outcomes.size(), failures);
  return failures;
}
