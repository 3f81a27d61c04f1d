#pragma once

#include <Eigen/Dense>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "jointmi/config.hpp"
#include "jointmi/impute.hpp"
#include "jointmi/joint_bayes.hpp"
#include "jointmi/joint_ml.hpp"
#include "jointmi/pool.hpp"
#include "jointmi/simulate.hpp"

namespace jointmi {

enum class Estimator { ML, Bayes };

inline std::string to_string(Estimator e) { return e == Estimator::ML ? "ml" : "bayes"; }

inline Estimator estimator_from_string(const std::string& s) {
  if (s == "ml" || s == "ML") return Estimator::ML;
  if (s == "bayes" || s == "Bayes") return Estimator::Bayes;
  throw std::runtime_error("unknown estimator '" + s + "'");
}

struct StudyConfig {
  int replicates = 200;
  SimulationConfig sim;
  ImputationConfig imputation;  // m, chained iterations, engine settings
  std::vector<ImputationMethod> methods = {ImputationMethod::PMM, ImputationMethod::CART,
                                           ImputationMethod::NORM, ImputationMethod::EMB};
  std::vector<Estimator> estimators = {Estimator::ML};
  bool full_data_arm = true;
  // the simulated-data analysis assumes a Weibull baseline for the ML fits;
  // the piecewise ("unspecified") baseline stays available for real-data runs
  MlBaselineKind ml_baseline = MlBaselineKind::Weibull;
  McmcConfig mcmc;
  double max_skip_fraction = 0.05;

  StudyConfig() {
    imputation.m = 20;
    mcmc.iterations = 4000;
    mcmc.burn_in = 1500;
    mcmc.thin = 2;
  }

  static StudyConfig from_config(const KeyValueConfig& cfg) {
    StudyConfig c;
    c.replicates = static_cast<int>(cfg.get_int("replicates", c.replicates));
    c.sim = SimulationConfig::from_config(cfg);
    c.imputation = ImputationConfig::from_config(cfg);
    if (cfg.has("methods")) {
      c.methods.clear();
      for (const auto& name : cfg.get_list("methods"))
        c.methods.push_back(imputation_method_from_string(name));
    }
    if (cfg.has("estimators")) {
      c.estimators.clear();
      for (const auto& name : cfg.get_list("estimators"))
        c.estimators.push_back(estimator_from_string(name));
    }
    c.full_data_arm = cfg.get_bool("full_data_arm", c.full_data_arm);
    c.mcmc.iterations = static_cast<int>(cfg.get_int("iterations", c.mcmc.iterations));
    c.mcmc.burn_in = static_cast<int>(cfg.get_int("burn_in", c.mcmc.burn_in));
    c.mcmc.thin = static_cast<int>(cfg.get_int("thin", c.mcmc.thin));
    c.max_skip_fraction = cfg.get_double("max_skip_fraction", c.max_skip_fraction);
    return c;
  }
};

// canonical study parameter order: beta1..beta6, gamma1..gamma3, alpha, D, sigma
inline std::vector<std::string> study_parameter_names() {
  return {"beta1", "beta2", "beta3", "beta4", "beta5", "beta6", "gamma1", "gamma2", "gamma3",
          "alpha", "D", "sigma"};
}

inline Eigen::VectorXd truth_vector(const ParameterSet& truth) {
  Eigen::VectorXd v(12);
  v.head(6) = truth.beta;
  v.segment(6, 3) = truth.gamma;
  v(9) = truth.alpha;
  v(10) = truth.D;
  v(11) = truth.sigma;
  return v;
}

inline ModelFitSummary summarize_ml(const JointMlFit& fit) {
  ModelFitSummary s;
  s.names = study_parameter_names();
  s.estimates.resize(12);
  s.ses.resize(12);
  s.estimates.head(6) = fit.beta;
  s.ses.head(6) = fit.beta_se;
  s.estimates.segment(6, 3) = fit.gamma;
  s.ses.segment(6, 3) = fit.gamma_se;
  s.estimates(9) = fit.alpha;
  s.ses(9) = fit.alpha_se;
  s.estimates(10) = fit.D;
  s.ses(10) = fit.D_se;
  s.estimates(11) = fit.sigma;
  s.ses(11) = fit.sigma_se;
  s.criterion = fit.aic;
  s.converged = fit.converged && fit.se_valid;
  return s;
}

inline ModelFitSummary summarize_bayes(const BayesFit& fit) {
  ModelFitSummary s;
  s.names = study_parameter_names();
  s.estimates.resize(12);
  s.ses.resize(12);
  for (int j = 0; j < 6; ++j) {
    s.estimates(j) = fit.posterior_mean(j);
    s.ses(j) = fit.posterior_sd(j);
  }
  for (int j = 0; j < 3; ++j) {
    s.estimates(6 + j) = fit.posterior_mean(fit.n_beta + j);
    s.ses(6 + j) = fit.posterior_sd(fit.n_beta + j);
  }
  int alpha_idx = fit.n_beta + fit.n_gamma;
  s.estimates(9) = fit.posterior_mean(alpha_idx);
  s.ses(9) = fit.posterior_sd(alpha_idx);
  int d_idx = fit.index_of("D");
  int sigma_idx = fit.index_of("sigma");
  s.estimates(10) = fit.posterior_mean(d_idx);
  s.ses(10) = fit.posterior_sd(d_idx);
  s.estimates(11) = fit.posterior_mean(sigma_idx);
  s.ses(11) = fit.posterior_sd(sigma_idx);
  s.criterion = fit.dic;
  s.converged = true;
  return s;
}

struct ArmRecord {
  std::string method;     // "full" or an imputation method
  std::string estimator;  // "ml" or "bayes"
  Eigen::VectorXd estimate;
  Eigen::VectorXd se;  // pooled sqrt(T)
  double criterion = 0.0;
};

struct ReplicateRecord {
  int id = 0;
  Eigen::VectorXd truth;
  std::vector<ArmRecord> arms;
};

struct ArmPerformance {
  std::string method;
  std::string estimator;
  Eigen::VectorXd coverage;
  Eigen::VectorXd rmse;
  Eigen::VectorXd mean_ci_width;
  int replicates_used = 0;
};

struct DensityRow {
  std::string method;
  int imputation = 0;
  std::string kind;  // observed | imputed
  double value = 0.0;
};

struct PerformanceReport {
  std::vector<std::string> parameter_names = study_parameter_names();
  std::vector<ArmPerformance> arms;
  std::vector<ReplicateRecord> replicates;
  std::vector<DensityRow> density;
  std::vector<std::string> skip_log;
  int replicates_requested = 0;
  int replicates_completed = 0;
  std::uint64_t seed = 0;
};

namespace study_detail {

inline void aggregate(PerformanceReport& report) {
  const double z = normal_quantile(0.975);
  std::vector<std::pair<std::string, std::string>> keys;
  for (const auto& rep : report.replicates)
    for (const auto& arm : rep.arms) {
      std::pair<std::string, std::string> key{arm.method, arm.estimator};
      bool seen = false;
      for (const auto& k : keys) seen |= k == key;
      if (!seen) keys.push_back(key);
    }
  report.arms.clear();
  for (const auto& key : keys) {
    ArmPerformance perf;
    perf.method = key.first;
    perf.estimator = key.second;
    const int P = static_cast<int>(report.parameter_names.size());
    Eigen::VectorXd cover = Eigen::VectorXd::Zero(P);
    Eigen::VectorXd sq_err = Eigen::VectorXd::Zero(P);
    Eigen::VectorXd width = Eigen::VectorXd::Zero(P);
    int used = 0;
    for (const auto& rep : report.replicates) {
      for (const auto& arm : rep.arms) {
        if (arm.method != key.first || arm.estimator != key.second) continue;
        ++used;
        for (int j = 0; j < P; ++j) {
          double lo = arm.estimate(j) - z * arm.se(j);
          double hi = arm.estimate(j) + z * arm.se(j);
          if (rep.truth(j) >= lo && rep.truth(j) <= hi) cover(j) += 1.0;
          double err = arm.estimate(j) - rep.truth(j);
          sq_err(j) += err * err;
          width(j) += hi - lo;
        }
      }
    }
    if (used > 0) {
      perf.coverage = cover / used;
      perf.rmse = (sq_err / used).cwiseSqrt();
      perf.mean_ci_width = width / used;
      perf.replicates_used = used;
    }
    report.arms.push_back(std::move(perf));
  }
}

}  // namespace study_detail

// Full replication loop: draw the truth, simulate, mask, impute, fit, pool.
// Replicates run sequentially with streams keyed (seed, replicate), so the
// report is reproducible bit for bit.
inline PerformanceReport run_study(const StudyConfig& config, std::uint64_t seed) {
  PerformanceReport report;
  report.replicates_requested = config.replicates;
  report.seed = seed;

  JointModelSpec spec = JointModelSpec::simulation_default();
  spec.longitudinal.time_scale = config.sim.time_scale;

  for (int rep = 0; rep < config.replicates; ++rep) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(rep));
    try {
      ParameterSet truth = draw_true_parameters(config.sim, rng);
      Dataset complete = simulate_dataset(truth, config.sim, rng.engine()());
      Dataset masked = apply_missingness(complete, config.sim, rng);

      ReplicateRecord record;
      record.id = rep;
      record.truth = truth_vector(truth);

      auto fit_arm = [&](const Dataset& ds, Estimator estimator) -> ModelFitSummary {
        if (estimator == Estimator::ML) {
          return summarize_ml(fit_joint_ml(ds, spec));
        }
        McmcConfig mcmc = config.mcmc;
        mcmc.seed = rng.engine()();
        return summarize_bayes(run_mcmc(ds, spec, Priors{}, mcmc));
      };

      for (Estimator estimator : config.estimators) {
        if (config.full_data_arm) {
          ModelFitSummary fit = fit_arm(complete, estimator);
          ArmRecord arm;
          arm.method = "full";
          arm.estimator = to_string(estimator);
          arm.estimate = fit.estimates;
          arm.se = fit.ses;
          arm.criterion = fit.criterion;
          record.arms.push_back(std::move(arm));
        }
        for (ImputationMethod method : config.methods) {
          ImputationConfig imp = config.imputation;
          imp.method = method;
          imp.time_scale = config.sim.time_scale;
          Rng imp_rng(rng.engine()());
          std::vector<Dataset> completed = chained_impute(masked, imp, imp_rng);
          std::vector<ModelFitSummary> fits;
          fits.reserve(completed.size());
          for (const auto& ds : completed) fits.push_back(fit_arm(ds, estimator));
          PooledFit pooled = pool(fits);
          ArmRecord arm;
          arm.method = to_string(method);
          arm.estimator = to_string(estimator);
          arm.estimate = pooled.estimate;
          arm.se = pooled.se;
          arm.criterion = pooled.mean_criterion;
          record.arms.push_back(std::move(arm));

          if (rep == 0 && estimator == config.estimators.front()) {
            // density-comparison sample: observed vs imputed responses
            for (std::size_t i = 0; i < masked.subjects.size(); ++i)
              for (std::size_t j = 0; j < masked.subjects[i].observations.size(); ++j) {
                const auto& obs = masked.subjects[i].observations[j];
                if (!obs.response_missing) {
                  report.density.push_back({to_string(method), 0, "observed", obs.response});
                } else {
                  for (std::size_t d = 0; d < completed.size(); ++d)
                    report.density.push_back({to_string(method), static_cast<int>(d + 1), "imputed",
                                              completed[d].subjects[i].observations[j].response});
                }
              }
          }
        }
      }
      report.replicates.push_back(std::move(record));
      ++report.replicates_completed;
    } catch (const std::exception& err) {
      report.skip_log.push_back("replicate " + std::to_string(rep) + ": " + err.what());
    }
  }

  double skip_fraction =
      config.replicates > 0
          ? static_cast<double>(config.replicates - report.replicates_completed) / config.replicates
          : 0.0;
  if (skip_fraction > config.max_skip_fraction) {
    std::string detail;
    for (const auto& line : report.skip_log) detail += "\n  " + line;
    throw std::runtime_error("run_study: " + std::to_string(skip_fraction * 100.0) +
                             "% of replicates failed" + detail);
  }
  study_detail::aggregate(report);
  return report;
}

}  // namespace jointmi
