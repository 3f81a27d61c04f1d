// Command-line front end: simulate, impute, fit-ml, fit-bayes, study, report,
// validate. File formats are the two-CSV dataset layout plus key=value
// configuration files.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "jointmi/csv.hpp"
#include "jointmi/impute.hpp"
#include "jointmi/joint_bayes.hpp"
#include "jointmi/joint_ml.hpp"
#include "jointmi/report.hpp"
#include "jointmi/study.hpp"
#include "jointmi/validate.hpp"

namespace {

using namespace jointmi;

std::string longitudinal_path(const std::string& prefix) { return prefix + "_longitudinal.csv"; }
std::string survival_path(const std::string& prefix) { return prefix + "_survival.csv"; }

SchemaConfig load_schema(const std::string& path) {
  if (path.empty()) return SchemaConfig::simulation_default();
  return SchemaConfig::from_config(KeyValueConfig::load(path));
}

KeyValueConfig load_optional_config(const std::string& path) {
  if (path.empty()) return KeyValueConfig();
  return KeyValueConfig::load(path);
}

nlohmann::json truth_json(const ParameterSet& p) {
  nlohmann::json j;
  j["beta"] = std::vector<double>(p.beta.data(), p.beta.data() + p.beta.size());
  j["gamma"] = std::vector<double>(p.gamma.data(), p.gamma.data() + p.gamma.size());
  j["alpha"] = p.alpha;
  j["D"] = p.D;
  j["sigma"] = p.sigma;
  j["weibull_shape"] = p.weibull_shape;
  j["weibull_scale"] = p.weibull_scale;
  return j;
}

int cmd_simulate(const std::string& config_path, std::uint64_t seed, const std::string& prefix) {
  SimulationConfig config = SimulationConfig::from_config(load_optional_config(config_path));
  Rng rng(seed);
  ParameterSet truth = draw_true_parameters(config, rng);
  Dataset complete = simulate_dataset(truth, config, rng.engine()());
  Dataset masked = apply_missingness(complete, config, rng);
  save_dataset(masked, longitudinal_path(prefix), survival_path(prefix));
  std::ofstream out(prefix + "_truth.json");
  out << truth_json(truth).dump(2) << '\n';
  auto summary = missingness_summary(masked);
  std::cout << "wrote " << masked.subjects.size() << " subjects, " << summary.n_rows
            << " longitudinal rows (" << summary.n_missing_responses << " responses missing, "
            << summary.n_missing_covariate_cells << " covariate cells missing)\n";
  return 0;
}

int cmd_impute(const std::string& method, int m, std::uint64_t seed, const std::string& prefix,
               const std::string& out_dir, const std::string& schema_path,
               const std::string& config_path) {
  ImputationConfig config = ImputationConfig::from_config(load_optional_config(config_path));
  config.method = imputation_method_from_string(method);
  config.m = m;
  Dataset ds = load_dataset(longitudinal_path(prefix), survival_path(prefix),
                            load_schema(schema_path));
  Rng rng(seed);
  std::vector<Dataset> completed = chained_impute(ds, config, rng);
  std::filesystem::create_directories(out_dir);
  for (std::size_t k = 0; k < completed.size(); ++k) {
    std::string imp_prefix = out_dir + "/imp" + std::to_string(k + 1);
    save_dataset(completed[k], longitudinal_path(imp_prefix), survival_path(imp_prefix));
  }

  auto summary = missingness_summary(ds);
  nlohmann::json meta;
  meta["method"] = to_string(config.method);
  meta["m"] = config.m;
  meta["seed"] = seed;
  meta["chained_iterations"] = config.chained_iterations;
  meta["pmm_donors"] = config.pmm_donors;
  meta["cart_min_leaf"] = config.cart_min_leaf;
  meta["norm_ridge"] = config.norm_ridge;
  meta["include_survival_predictors"] = config.include_survival_predictors;
  meta["input_missing_responses"] = summary.n_missing_responses;
  meta["input_missing_covariate_cells"] = summary.n_missing_covariate_cells;
  std::ofstream mj(out_dir + "/imputation_meta.json");
  mj << meta.dump(2) << '\n';

  std::ofstream dens(out_dir + "/density_compare.csv");
  dens << "method,imputation,kind,value\n";
  char buf[64];
  for (std::size_t i = 0; i < ds.subjects.size(); ++i)
    for (std::size_t j = 0; j < ds.subjects[i].observations.size(); ++j) {
      const auto& obs = ds.subjects[i].observations[j];
      if (!obs.response_missing) {
        std::snprintf(buf, sizeof(buf), "%.17g", obs.response);
        dens << to_string(config.method) << ",0,observed," << buf << '\n';
      } else {
        for (std::size_t k = 0; k < completed.size(); ++k) {
          std::snprintf(buf, sizeof(buf), "%.17g",
                        completed[k].subjects[i].observations[j].response);
          dens << to_string(config.method) << ',' << (k + 1) << ",imputed," << buf << '\n';
        }
      }
    }
  std::cout << "wrote " << completed.size() << " completed dataset pairs to " << out_dir << '\n';
  return 0;
}

nlohmann::json ml_fit_json(const JointMlFit& fit) {
  nlohmann::json j;
  nlohmann::json coefs = nlohmann::json::array();
  for (int k = 0; k < fit.beta.size(); ++k) {
    coefs.push_back({{"name", fit.beta_names[static_cast<std::size_t>(k)]},
                     {"estimate", fit.beta(k)},
                     {"se", fit.beta_se.size() > k ? fit.beta_se(k) : 0.0}});
  }
  j["longitudinal_coefficients"] = coefs;
  nlohmann::json surv = nlohmann::json::array();
  for (int k = 0; k < fit.gamma.size(); ++k) {
    surv.push_back({{"name", fit.gamma_names[static_cast<std::size_t>(k)]},
                    {"estimate", fit.gamma(k)},
                    {"se", fit.gamma_se.size() > k ? fit.gamma_se(k) : 0.0}});
  }
  j["survival_coefficients"] = surv;
  j["association"] = {{"estimate", fit.alpha}, {"se", fit.alpha_se}};
  j["random_intercept_variance"] = {{"estimate", fit.D}, {"se", fit.D_se}};
  j["sigma"] = {{"estimate", fit.sigma}, {"se", fit.sigma_se}};
  j["loglik"] = fit.loglik;
  j["aic"] = fit.aic;
  j["n_parameters"] = fit.n_parameters;
  j["iterations"] = fit.iterations;
  j["converged"] = fit.converged;
  nlohmann::json baseline;
  baseline["cutpoints"] = fit.baseline.cutpoints;
  baseline["rates"] = fit.baseline.rates;
  j["baseline"] = baseline;
  return j;
}

int cmd_fit_ml(const std::string& prefix, const std::string& spec_path, const std::string& out,
               const std::string& schema_path) {
  JointModelSpec spec = JointModelSpec::from_config(load_optional_config(spec_path));
  Dataset ds = load_dataset(longitudinal_path(prefix), survival_path(prefix),
                            load_schema(schema_path));
  JointMlFit fit = fit_joint_ml(ds, spec);
  std::ofstream js(out);
  if (!js) throw std::runtime_error("cannot write " + out);
  js << ml_fit_json(fit).dump(2) << '\n';
  std::cout << "AIC " << fit.aic << ", association " << fit.alpha
            << (fit.converged ? "" : " (not converged)") << '\n';
  return 0;
}

int cmd_fit_bayes(const std::string& prefix, const std::string& spec_path,
                  const std::string& mcmc_path, const std::string& out,
                  const std::string& draws_path, const std::string& schema_path,
                  std::uint64_t seed) {
  JointModelSpec spec = JointModelSpec::from_config(load_optional_config(spec_path));
  McmcConfig mcmc = McmcConfig::from_config(load_optional_config(mcmc_path));
  mcmc.seed = seed;
  Dataset ds = load_dataset(longitudinal_path(prefix), survival_path(prefix),
                            load_schema(schema_path));
  BayesFit fit = run_mcmc(ds, spec, Priors{}, mcmc);

  nlohmann::json j;
  nlohmann::json params = nlohmann::json::array();
  for (std::size_t k = 0; k < fit.parameter_names.size(); ++k) {
    params.push_back({{"name", fit.parameter_names[k]},
                      {"posterior_mean", fit.posterior_mean(static_cast<Eigen::Index>(k))},
                      {"posterior_sd", fit.posterior_sd(static_cast<Eigen::Index>(k))},
                      {"ess", fit.ess(static_cast<Eigen::Index>(k))}});
  }
  j["parameters"] = params;
  j["dic"] = fit.dic;
  j["pd"] = fit.pd;
  j["acceptance"] = fit.acceptance;
  j["retained_draws"] = fit.draws.rows();
  std::ofstream js(out);
  if (!js) throw std::runtime_error("cannot write " + out);
  js << j.dump(2) << '\n';

  if (!draws_path.empty()) {
    std::ofstream csv(draws_path);
    for (std::size_t k = 0; k < fit.parameter_names.size(); ++k)
      csv << (k ? "," : "") << fit.parameter_names[k];
    csv << '\n';
    char buf[64];
    for (int r = 0; r < fit.draws.rows(); ++r) {
      for (int c = 0; c < fit.draws.cols(); ++c) {
        std::snprintf(buf, sizeof(buf), "%.17g", fit.draws(r, c));
        csv << (c ? "," : "") << buf;
      }
      csv << '\n';
    }
  }
  std::cout << "DIC " << fit.dic << ", association posterior mean " << fit.mean_of("alpha")
            << '\n';
  return 0;
}

int cmd_study(const std::string& config_path, std::uint64_t seed, const std::string& out_dir) {
  StudyConfig config = StudyConfig::from_config(load_optional_config(config_path));
  PerformanceReport report = run_study(config, seed);
  std::filesystem::create_directories(out_dir);
  emit_report(report, out_dir);
  std::cout << "completed " << report.replicates_completed << "/" << report.replicates_requested
            << " replicates";
  if (!report.skip_log.empty()) std::cout << " (" << report.skip_log.size() << " skipped)";
  std::cout << "; report in " << out_dir << '\n';
  return 0;
}

int cmd_report(const std::string& fits_path, const std::string& out_dir) {
  std::ifstream in(fits_path);
  if (!in) throw std::runtime_error("cannot open " + fits_path);
  nlohmann::json j;
  in >> j;
  PerformanceReport report = report_from_json(j);
  std::filesystem::create_directories(out_dir);
  emit_report(report, out_dir);
  std::cout << "re-rendered " << report.arms.size() << " arms to " << out_dir << '\n';
  return 0;
}

int cmd_validate(const std::string& prefix, const std::string& schema_path) {
  Dataset ds = load_dataset(longitudinal_path(prefix), survival_path(prefix),
                            load_schema(schema_path));
  auto violations = validate(ds);
  auto summary = missingness_summary(ds);
  std::cout << ds.subjects.size() << " subjects, " << summary.n_rows << " rows, "
            << summary.n_missing_responses << " missing responses ("
            << summary.response_proportion * 100.0 << "%), "
            << summary.n_missing_covariate_cells << " missing covariate cells\n";
  for (const auto& v : violations)
    std::cout << "violation [" << v.subject_id << "] " << v.rule << ": " << v.detail << '\n';
  return violations.empty() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"joint longitudinal-survival modeling with multiple imputation"};
  app.require_subcommand(1);

  std::string config_path, prefix, out_dir, out_file, schema_path, spec_path, mcmc_path,
      draws_path, fits_path, method;
  std::uint64_t seed = 1;
  int m = 5;

  auto* sim = app.add_subcommand("simulate", "generate a dataset with missingness");
  sim->add_option("--config", config_path, "simulation config (key=value)");
  sim->add_option("--seed", seed, "RNG seed")->required();
  sim->add_option("--out-prefix", prefix, "output path prefix")->required();

  auto* imp = app.add_subcommand("impute", "multiple imputation of an incomplete dataset");
  imp->add_option("--method", method, "pmm | cart | norm | emb")->required();
  imp->add_option("--m", m, "number of imputations")->required();
  imp->add_option("--seed", seed, "RNG seed")->required();
  imp->add_option("--in-prefix", prefix, "input path prefix")->required();
  imp->add_option("--out-dir", out_dir, "output directory")->required();
  imp->add_option("--schema", schema_path, "schema config");
  imp->add_option("--config", config_path, "imputation config overrides");

  auto* fml = app.add_subcommand("fit-ml", "maximum-likelihood joint fit");
  fml->add_option("--in-prefix", prefix, "input path prefix")->required();
  fml->add_option("--spec", spec_path, "model spec config");
  fml->add_option("--out", out_file, "output JSON")->required();
  fml->add_option("--schema", schema_path, "schema config");

  auto* fb = app.add_subcommand("fit-bayes", "Bayesian joint fit");
  fb->add_option("--in-prefix", prefix, "input path prefix")->required();
  fb->add_option("--spec", spec_path, "model spec config");
  fb->add_option("--mcmc", mcmc_path, "MCMC config");
  fb->add_option("--out", out_file, "output JSON")->required();
  fb->add_option("--draws", draws_path, "optional draw dump CSV");
  fb->add_option("--schema", schema_path, "schema config");
  fb->add_option("--seed", seed, "RNG seed");

  auto* st = app.add_subcommand("study", "replicated simulation study");
  st->add_option("--config", config_path, "study config (key=value)");
  st->add_option("--seed", seed, "RNG seed")->required();
  st->add_option("--out", out_dir, "output directory")->required();

  auto* rep = app.add_subcommand("report", "re-render a saved fits.json");
  rep->add_option("--fits", fits_path, "fits.json path")->required();
  rep->add_option("--out", out_dir, "output directory")->required();

  auto* val = app.add_subcommand("validate", "check dataset invariants");
  val->add_option("--in-prefix", prefix, "input path prefix")->required();
  val->add_option("--schema", schema_path, "schema config");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmd_simulate(config_path, seed, prefix);
    if (imp->parsed()) return cmd_impute(method, m, seed, prefix, out_dir, schema_path, config_path);
    if (fml->parsed()) return cmd_fit_ml(prefix, spec_path, out_file, schema_path);
    if (fb->parsed())
      return cmd_fit_bayes(prefix, spec_path, mcmc_path, out_file, draws_path, schema_path, seed);
    if (st->parsed()) return cmd_study(config_path, seed, out_dir);
    if (rep->parsed()) return cmd_report(fits_path, out_dir);
    if (val->parsed()) return cmd_validate(prefix, schema_path);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  }
  return 0;
}
