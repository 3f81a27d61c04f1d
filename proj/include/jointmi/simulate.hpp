#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "jointmi/baseline.hpp"
#include "jointmi/config.hpp"
#include "jointmi/numeric.hpp"
#include "jointmi/rng.hpp"
#include "jointmi/types.hpp"

namespace jointmi {

// Generating parameters. beta follows the longitudinal design
// [intercept, time, t_stage dummies 1..3, n_stage dummy]; gamma follows the
// survival design [t_stage dummies 1..3].
struct ParameterSet {
  Eigen::VectorXd beta;
  Eigen::VectorXd gamma;
  double alpha = 0.0;
  double D = 1.0;
  double sigma = 1.0;
  double weibull_shape = 5.0;
  double weibull_scale = 1.0;
};

struct UniformRange {
  double lo = 0.0;
  double hi = 1.0;
};

struct SimulationConfig {
  int n_subjects = 250;

  // visit times in days: baseline Poisson, then follow-ups Normal(mean, sd)
  double visit_poisson_mean = 0.7;
  std::vector<double> visit_normal_means = {30.0, 60.0, 90.0};
  double visit_normal_sd = 5.0;
  double time_scale = 365.0;  // days per model-time unit

  double censoring_mean = 2.0;  // exponential censoring, model-time units
  double horizon = 50.0;        // event-time search cap, model-time units

  std::vector<UniformRange> beta_ranges = {{0.0, 10.0}, {0.5, 1.0}, {0.5, 1.0},
                                           {0.7, 1.2},  {0.8, 1.5}, {0.5, 1.2}};
  std::vector<UniformRange> gamma_ranges = {{-0.5, 0.5}, {-1.0, 1.0}, {-1.0, 1.0}};
  UniformRange alpha_range = {0.5, 1.5};
  UniformRange sigma_range = {0.5, 2.0};
  UniformRange D_range = {0.5, 2.0};
  double weibull_shape = 5.0;
  double weibull_scale = 1.0;

  // missingness mechanism
  double covariate_missing_fraction = 0.20;
  double response_missing_target = 0.22;
  double mar_slope_t_stage = 0.4;
  double mar_slope_n_stage = 0.4;

  static SimulationConfig from_config(const KeyValueConfig& cfg) {
    SimulationConfig c;
    c.n_subjects = static_cast<int>(cfg.get_int("n_subjects", c.n_subjects));
    c.visit_poisson_mean = cfg.get_double("visit_poisson_mean", c.visit_poisson_mean);
    c.visit_normal_sd = cfg.get_double("visit_normal_sd", c.visit_normal_sd);
    c.time_scale = cfg.get_double("time_scale", c.time_scale);
    c.censoring_mean = cfg.get_double("censoring_mean", c.censoring_mean);
    c.horizon = cfg.get_double("horizon", c.horizon);
    c.weibull_shape = cfg.get_double("weibull_shape", c.weibull_shape);
    c.weibull_scale = cfg.get_double("weibull_scale", c.weibull_scale);
    c.covariate_missing_fraction =
        cfg.get_double("covariate_missing_fraction", c.covariate_missing_fraction);
    c.response_missing_target = cfg.get_double("response_missing_target", c.response_missing_target);
    c.mar_slope_t_stage = cfg.get_double("mar_slope_t_stage", c.mar_slope_t_stage);
    c.mar_slope_n_stage = cfg.get_double("mar_slope_n_stage", c.mar_slope_n_stage);
    const char* beta_keys[] = {"beta1", "beta2", "beta3", "beta4", "beta5", "beta6"};
    for (std::size_t i = 0; i < 6; ++i) {
      c.beta_ranges[i].lo = cfg.get_double(std::string(beta_keys[i]) + "_min", c.beta_ranges[i].lo);
      c.beta_ranges[i].hi = cfg.get_double(std::string(beta_keys[i]) + "_max", c.beta_ranges[i].hi);
    }
    const char* gamma_keys[] = {"gamma1", "gamma2", "gamma3"};
    for (std::size_t i = 0; i < 3; ++i) {
      c.gamma_ranges[i].lo = cfg.get_double(std::string(gamma_keys[i]) + "_min", c.gamma_ranges[i].lo);
      c.gamma_ranges[i].hi = cfg.get_double(std::string(gamma_keys[i]) + "_max", c.gamma_ranges[i].hi);
    }
    c.alpha_range = {cfg.get_double("alpha_min", c.alpha_range.lo),
                     cfg.get_double("alpha_max", c.alpha_range.hi)};
    c.sigma_range = {cfg.get_double("sigma_min", c.sigma_range.lo),
                     cfg.get_double("sigma_max", c.sigma_range.hi)};
    c.D_range = {cfg.get_double("D_min", c.D_range.lo), cfg.get_double("D_max", c.D_range.hi)};
    return c;
  }
};

inline ParameterSet draw_true_parameters(const SimulationConfig& config, Rng& rng) {
  ParameterSet p;
  p.beta.resize(static_cast<Eigen::Index>(config.beta_ranges.size()));
  for (std::size_t i = 0; i < config.beta_ranges.size(); ++i)
    p.beta(static_cast<Eigen::Index>(i)) = rng.uniform(config.beta_ranges[i].lo, config.beta_ranges[i].hi);
  p.gamma.resize(static_cast<Eigen::Index>(config.gamma_ranges.size()));
  for (std::size_t i = 0; i < config.gamma_ranges.size(); ++i)
    p.gamma(static_cast<Eigen::Index>(i)) =
        rng.uniform(config.gamma_ranges[i].lo, config.gamma_ranges[i].hi);
  p.sigma = rng.uniform(config.sigma_range.lo, config.sigma_range.hi);
  p.D = rng.uniform(config.D_range.lo, config.D_range.hi);
  p.alpha = rng.uniform(config.alpha_range.lo, config.alpha_range.hi);
  p.weibull_shape = config.weibull_shape;
  p.weibull_scale = config.weibull_scale;
  return p;
}

// Fixed-effect trajectory value at model time 0 for the simulation design.
inline double simulation_fixed_at_zero(const ParameterSet& params, int t_stage, int n_stage) {
  double value = params.beta(0);
  if (t_stage >= 1 && t_stage <= 3) value += params.beta(1 + t_stage);
  if (n_stage == 1) value += params.beta(5);
  return value;
}

inline double simulation_survival_linpred(const ParameterSet& params, int t_stage) {
  if (t_stage >= 1 && t_stage <= 3) return params.gamma(t_stage - 1);
  return 0.0;
}

struct EventTimeResult {
  double time = 0.0;
  bool hit_horizon = false;  // treated as censored at the horizon
};

// Inverse-transform draw: solve H(T) = target where H is the cumulative
// hazard with Weibull baseline and the error-free trajectory in the link.
inline EventTimeResult solve_event_time(const ParameterSet& params, double survival_linpred,
                                        const AffineTrajectory& trajectory, double target,
                                        double horizon, double rel_tol = 1e-8) {
  if (target <= 0.0) return {0.0, false};
  const double shape = params.weibull_shape, scale = params.weibull_scale;
  auto integrand = [&](double s) {
    double h0 = (shape / scale) * std::pow(s / scale, shape - 1.0);
    return h0 * std::exp(survival_linpred + params.alpha * trajectory(s));
  };
  // expand the bracket, keeping the cumulative integral so far
  double lo = 0.0, H_lo = 0.0;
  double hi = std::min(0.125, horizon);
  double H_hi = H_lo + adaptive_simpson(integrand, lo, hi, 1e-10);
  while (H_hi < target) {
    if (hi >= horizon) return {horizon, true};
    lo = hi;
    H_lo = H_hi;
    hi = std::min(2.0 * hi, horizon);
    H_hi = H_lo + adaptive_simpson(integrand, lo, hi, 1e-10);
  }
  // bisect on [lo, hi], accumulating the integral from the left edge
  for (int iter = 0; iter < 200; ++iter) {
    double mid = 0.5 * (lo + hi);
    if (hi - lo <= rel_tol * std::max(mid, 1e-12)) return {mid, false};
    double H_mid = H_lo + adaptive_simpson(integrand, lo, mid, 1e-10);
    if (H_mid < target) {
      lo = mid;
      H_lo = H_mid;
    } else {
      hi = mid;
    }
  }
  return {0.5 * (lo + hi), false};
}

inline EventTimeResult simulate_event_time(const ParameterSet& params, int t_stage, int n_stage,
                                           double b, const SimulationConfig& config, Rng& rng) {
  AffineTrajectory trajectory{simulation_fixed_at_zero(params, t_stage, n_stage) + b,
                              params.beta(1)};
  double u = rng.uniform();
  double target = u > 0.0 ? -std::log(u) : std::numeric_limits<double>::infinity();
  return solve_event_time(params, simulation_survival_linpred(params, t_stage), trajectory, target,
                          config.horizon);
}

// One complete subject: covariates, survival record, and longitudinal
// responses at the drawn visit days (visits after the survival time dropped).
inline Subject simulate_subject(const ParameterSet& params, const SimulationConfig& config,
                                Rng& rng) {
  Subject s;
  s.covariates.cells.resize(2);
  int t_stage = static_cast<int>(rng.index(4));
  int n_stage = static_cast<int>(rng.index(2));
  s.covariates.cells[0] = {t_stage, false};
  s.covariates.cells[1] = {n_stage, false};

  double b = rng.normal(0.0, std::sqrt(params.D));
  AffineTrajectory trajectory{simulation_fixed_at_zero(params, t_stage, n_stage) + b,
                              params.beta(1)};

  EventTimeResult ev = solve_event_time(
      params, simulation_survival_linpred(params, t_stage), trajectory,
      [&]() {
        double u = rng.uniform();
        return u > 0.0 ? -std::log(u) : std::numeric_limits<double>::infinity();
      }(),
      config.horizon);
  double censor = rng.exponential(config.censoring_mean);
  double observed = std::min(ev.time, censor);
  bool event = !ev.hit_horizon && ev.time <= censor;
  if (!(observed > 0.0)) observed = 1e-6;  // guard against a zero event time
  s.survival.observed_time_days = observed * config.time_scale;
  s.survival.event = event;

  std::vector<double> visit_days;
  visit_days.push_back(static_cast<double>(rng.poisson(config.visit_poisson_mean)));
  for (double mean : config.visit_normal_means)
    visit_days.push_back(std::max(0.0, rng.normal(mean, config.visit_normal_sd)));
  std::sort(visit_days.begin(), visit_days.end());
  for (std::size_t j = 1; j < visit_days.size(); ++j)
    if (visit_days[j] <= visit_days[j - 1]) visit_days[j] = visit_days[j - 1] + 0.5;

  for (double day : visit_days) {
    double u = day / config.time_scale;
    if (u > observed) continue;
    LongitudinalObservation obs;
    obs.time_days = day;
    obs.response = trajectory(u) + (params.sigma > 0.0 ? rng.normal(0.0, params.sigma) : 0.0);
    s.observations.push_back(obs);
  }
  return s;
}

// Per-subject RNG streams keyed (seed, subject index); identical seeds give
// bit-identical datasets.
inline Dataset simulate_dataset(const ParameterSet& params, const SimulationConfig& config,
                                std::uint64_t seed) {
  if (config.n_subjects < 2) throw std::invalid_argument("simulate_dataset: n_subjects must be >= 2");
  Dataset ds;
  ds.schema = SchemaConfig::simulation_default();
  ds.subjects.reserve(static_cast<std::size_t>(config.n_subjects));
  for (int i = 0; i < config.n_subjects; ++i) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(i));
    Subject s = simulate_subject(params, config, rng);
    char buf[24];
    std::snprintf(buf, sizeof(buf), "S%05d", i + 1);
    s.id = buf;
    ds.subjects.push_back(std::move(s));
  }
  return ds;
}

// Calibrated intercept of the response-missingness logit: expected number of
// missing responses over all rows matches target_fraction * n_rows, with
// first visits never removed.
inline double calibrate_mar_intercept(const Dataset& ds, const SimulationConfig& config) {
  double target_count = config.response_missing_target * static_cast<double>(ds.n_observations());
  auto expected_missing = [&](double a0) {
    double total = 0.0;
    for (const auto& s : ds.subjects) {
      int t_stage = s.covariates.cells[0].level;
      int n_stage = s.covariates.cells[1].level;
      double logit = a0 + config.mar_slope_t_stage * t_stage + config.mar_slope_n_stage * n_stage;
      double p = 1.0 / (1.0 + std::exp(-logit));
      total += p * static_cast<double>(s.observations.size() > 0 ? s.observations.size() - 1 : 0);
    }
    return total;
  };
  if (expected_missing(30.0) <= target_count) return 30.0;
  if (expected_missing(-30.0) >= target_count) return -30.0;
  return bisect_root([&](double a0) { return expected_missing(a0) - target_count; }, -30.0, 30.0,
                     1e-10);
}

// MAR response missingness driven by the observed covariates, plus
// completely-at-random covariate cells.
inline Dataset apply_missingness(const Dataset& ds, const SimulationConfig& config, Rng& rng) {
  Dataset out = ds;
  if (config.response_missing_target > 0.0) {
    double a0 = calibrate_mar_intercept(ds, config);
    for (auto& s : out.subjects) {
      int t_stage = s.covariates.cells[0].level;
      int n_stage = s.covariates.cells[1].level;
      double logit =
          a0 + config.mar_slope_t_stage * t_stage + config.mar_slope_n_stage * n_stage;
      double p = 1.0 / (1.0 + std::exp(-logit));
      for (std::size_t j = 1; j < s.observations.size(); ++j) {
        if (rng.uniform() < p) {
          s.observations[j].response_missing = true;
          s.observations[j].response = 0.0;
        }
      }
    }
  }
  if (config.covariate_missing_fraction > 0.0) {
    for (auto& s : out.subjects) {
      for (auto& cell : s.covariates.cells) {
        if (rng.uniform() < config.covariate_missing_fraction) cell = {0, true};
      }
    }
  }
  return out;
}

}  // namespace jointmi
