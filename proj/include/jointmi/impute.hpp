#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "jointmi/config.hpp"
#include "jointmi/impute_emb.hpp"
#include "jointmi/impute_engines.hpp"
#include "jointmi/rng.hpp"
#include "jointmi/types.hpp"

namespace jointmi {

enum class ImputationMethod { PMM, CART, NORM, EMB };

inline ImputationMethod imputation_method_from_string(const std::string& s) {
  if (s == "pmm" || s == "PMM") return ImputationMethod::PMM;
  if (s == "cart" || s == "CART") return ImputationMethod::CART;
  if (s == "norm" || s == "NORM") return ImputationMethod::NORM;
  if (s == "emb" || s == "EMB") return ImputationMethod::EMB;
  throw std::runtime_error("unknown imputation method '" + s + "'");
}

inline std::string to_string(ImputationMethod m) {
  switch (m) {
    case ImputationMethod::PMM: return "pmm";
    case ImputationMethod::CART: return "cart";
    case ImputationMethod::NORM: return "norm";
    case ImputationMethod::EMB: return "emb";
  }
  return "?";
}

struct ImputationConfig {
  ImputationMethod method = ImputationMethod::PMM;
  int m = 5;
  int chained_iterations = 10;
  int pmm_donors = 5;
  int cart_min_leaf = 5;
  double norm_ridge = 1e-5;
  bool include_survival_predictors = true;
  double time_scale = 365.0;

  static ImputationConfig from_config(const KeyValueConfig& cfg) {
    ImputationConfig c;
    if (cfg.has("method")) c.method = imputation_method_from_string(cfg.get_string("method", "pmm"));
    c.m = static_cast<int>(cfg.get_int("m", c.m));
    c.chained_iterations = static_cast<int>(cfg.get_int("chained_iterations", c.chained_iterations));
    c.pmm_donors = static_cast<int>(cfg.get_int("pmm_donors", c.pmm_donors));
    c.cart_min_leaf = static_cast<int>(cfg.get_int("cart_min_leaf", c.cart_min_leaf));
    c.norm_ridge = cfg.get_double("norm_ridge", c.norm_ridge);
    c.include_survival_predictors =
        cfg.get_bool("include_survival_predictors", c.include_survival_predictors);
    c.time_scale = cfg.get_double("time_scale", c.time_scale);
    if (c.m < 1) throw std::runtime_error("imputation config: m must be >= 1");
    if (c.pmm_donors < 1) throw std::runtime_error("imputation config: pmm_donors must be >= 1");
    return c;
  }
};

namespace impute_detail {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

struct CellRef {
  int subject = 0;
  int observation = 0;  // -1 for a covariate cell
  int covariate = -1;
};

// Observation-level block: response, scaled time, covariate levels, and the
// survival summaries used as predictors.
struct Frame {
  std::vector<std::string> columns;
  Eigen::MatrixXd values;        // NaN marks missing
  std::vector<int> row_subject;  // subject index per row
  int response_col = 0;
  int first_covariate_col = 2;
  int n_covariates = 0;
};

inline Frame build_frame(const Dataset& ds, const ImputationConfig& config) {
  Frame frame;
  frame.columns = {"response", "time"};
  for (const auto& cov : ds.schema.covariates) frame.columns.push_back(cov.name);
  frame.n_covariates = static_cast<int>(ds.schema.covariates.size());
  if (config.include_survival_predictors) {
    frame.columns.push_back("log_time");
    frame.columns.push_back("event");
  }
  const int p = static_cast<int>(frame.columns.size());
  const long n_rows = static_cast<long>(ds.n_observations());
  frame.values.resize(n_rows, p);
  frame.row_subject.resize(static_cast<std::size_t>(n_rows));
  long row = 0;
  for (std::size_t i = 0; i < ds.subjects.size(); ++i) {
    const Subject& s = ds.subjects[i];
    for (const auto& obs : s.observations) {
      frame.row_subject[static_cast<std::size_t>(row)] = static_cast<int>(i);
      frame.values(row, 0) = obs.response_missing ? kMissing : obs.response;
      frame.values(row, 1) = obs.time_days / config.time_scale;
      for (int c = 0; c < frame.n_covariates; ++c) {
        const CovariateCell& cell = s.covariates.cells[static_cast<std::size_t>(c)];
        frame.values(row, 2 + c) = cell.missing ? kMissing : static_cast<double>(cell.level);
      }
      if (config.include_survival_predictors) {
        frame.values(row, p - 2) = std::log(s.survival.observed_time_days / config.time_scale);
        frame.values(row, p - 1) = s.survival.event ? 1.0 : 0.0;
      }
      ++row;
    }
  }
  return frame;
}

inline void require_observed_values(const Dataset& ds) {
  long responses = 0, observed_responses = 0;
  for (const auto& s : ds.subjects)
    for (const auto& obs : s.observations) {
      ++responses;
      if (!obs.response_missing) ++observed_responses;
    }
  if (responses > 0 && observed_responses == 0)
    throw std::runtime_error("imputation: no observed values for response");
  for (std::size_t c = 0; c < ds.schema.covariates.size(); ++c) {
    bool any_missing = false, any_observed = false;
    for (const auto& s : ds.subjects) {
      if (s.covariates.cells[c].missing)
        any_missing = true;
      else
        any_observed = true;
    }
    if (any_missing && !any_observed)
      throw std::runtime_error("imputation: no observed values for " + ds.schema.covariates[c].name);
  }
}

inline Dataset clear_missing_flags(Dataset ds) {
  for (auto& s : ds.subjects) {
    for (auto& obs : s.observations) obs.response_missing = false;
    for (auto& cell : s.covariates.cells) cell.missing = false;
  }
  return ds;
}

}  // namespace impute_detail

// Joint-normal imputation: one EM fit per bootstrap resample, then
// conditional-normal draws for the original dataset's missing entries.
// Covariates are drawn once per subject (from the subject's first row) so the
// completed data stay consistent across a subject's records.
inline std::vector<Dataset> emb_impute(const Dataset& ds, int m, Rng& rng,
                                       ImputationConfig config = {}) {
  using namespace impute_detail;
  require_observed_values(ds);
  config.method = ImputationMethod::EMB;
  Frame frame = build_frame(ds, config);
  std::vector<Dataset> out;
  out.reserve(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) {
    Rng stream(rng.engine()());
    Dataset completed = ds;
    bool any_missing = frame.values.hasNaN();
    if (any_missing) {
      EmbModel model = emb_fit(frame.values, stream);
      // subject-level covariate draws from the first row of each subject
      std::vector<long> first_row(ds.subjects.size(), -1);
      for (long r = 0; r < frame.values.rows(); ++r) {
        int i = frame.row_subject[static_cast<std::size_t>(r)];
        if (first_row[static_cast<std::size_t>(i)] < 0) first_row[static_cast<std::size_t>(i)] = r;
      }
      for (std::size_t i = 0; i < completed.subjects.size(); ++i) {
        Subject& s = completed.subjects[i];
        bool has_missing_cov = false;
        for (const auto& cell : s.covariates.cells) has_missing_cov |= cell.missing;
        if (!has_missing_cov || first_row[i] < 0) continue;
        Eigen::VectorXd row = frame.values.row(first_row[i]).transpose();
        emb_conditional_impute_row(model, row, stream);
        for (std::size_t c = 0; c < s.covariates.cells.size(); ++c) {
          if (!s.covariates.cells[c].missing) continue;
          int level = ds.schema.covariates[c].nearest_level(row(2 + static_cast<int>(c)));
          s.covariates.cells[c] = {level, false};
        }
      }
      // response draws conditional on the completed covariates
      long r = 0;
      for (std::size_t i = 0; i < completed.subjects.size(); ++i) {
        Subject& s = completed.subjects[i];
        for (auto& obs : s.observations) {
          if (obs.response_missing) {
            Eigen::VectorXd row = frame.values.row(r).transpose();
            for (std::size_t c = 0; c < s.covariates.cells.size(); ++c)
              row(2 + static_cast<int>(c)) = static_cast<double>(s.covariates.cells[c].level);
            emb_conditional_impute_row(model, row, stream);
            obs.response = row(frame.response_col);
          }
          ++r;
        }
      }
    }
    out.push_back(clear_missing_flags(std::move(completed)));
  }
  return out;
}

namespace impute_detail {

struct ChainState {
  // current completed values
  std::vector<std::vector<double>> response;        // per subject per observation
  std::vector<std::vector<int>> covariate;          // per subject per covariate
  std::vector<std::vector<char>> response_missing;  // original masks
  std::vector<std::vector<char>> covariate_missing;
};

inline ChainState init_state(const Dataset& ds, Rng& rng) {
  ChainState st;
  st.response.resize(ds.subjects.size());
  st.covariate.resize(ds.subjects.size());
  st.response_missing.resize(ds.subjects.size());
  st.covariate_missing.resize(ds.subjects.size());
  std::vector<double> observed_responses;
  std::vector<std::vector<int>> observed_levels(ds.schema.covariates.size());
  for (const auto& s : ds.subjects) {
    for (const auto& obs : s.observations)
      if (!obs.response_missing) observed_responses.push_back(obs.response);
    for (std::size_t c = 0; c < s.covariates.cells.size(); ++c)
      if (!s.covariates.cells[c].missing) observed_levels[c].push_back(s.covariates.cells[c].level);
  }
  for (std::size_t i = 0; i < ds.subjects.size(); ++i) {
    const Subject& s = ds.subjects[i];
    for (const auto& obs : s.observations) {
      st.response_missing[i].push_back(obs.response_missing ? 1 : 0);
      if (obs.response_missing)
        st.response[i].push_back(observed_responses[rng.index(observed_responses.size())]);
      else
        st.response[i].push_back(obs.response);
    }
    for (std::size_t c = 0; c < s.covariates.cells.size(); ++c) {
      st.covariate_missing[i].push_back(s.covariates.cells[c].missing ? 1 : 0);
      if (s.covariates.cells[c].missing)
        st.covariate[i].push_back(observed_levels[c][rng.index(observed_levels[c].size())]);
      else
        st.covariate[i].push_back(s.covariates.cells[c].level);
    }
  }
  return st;
}

inline Eigen::VectorXd dispatch_engine(const ImputationConfig& config, const Eigen::VectorXd& y_obs,
                                       const Eigen::MatrixXd& X_obs, const Eigen::MatrixXd& X_mis,
                                       bool categorical_target, Rng& rng) {
  switch (config.method) {
    case ImputationMethod::PMM:
      return impute_variable_pmm(y_obs, X_obs, X_mis, config.pmm_donors, config.norm_ridge, rng);
    case ImputationMethod::CART: {
      CartOptions opt;
      opt.min_leaf = config.cart_min_leaf;
      opt.categorical_target = categorical_target;
      // trees ignore the intercept column
      return impute_variable_cart(y_obs, X_obs.rightCols(X_obs.cols() - 1),
                                  X_mis.rightCols(X_mis.cols() - 1), opt, rng);
    }
    case ImputationMethod::NORM:
      return impute_variable_norm(y_obs, X_obs, X_mis, config.norm_ridge, rng);
    case ImputationMethod::EMB:
      throw std::logic_error("EMB does not run through the chained driver");
  }
  throw std::logic_error("unreachable");
}

}  // namespace impute_detail

// Chained equations: initialize missing cells from observed marginals, then
// re-impute the response (observation level) and each covariate (subject
// level) in declared order for a fixed number of sweeps.
inline std::vector<Dataset> chained_impute(const Dataset& ds, const ImputationConfig& config,
                                           Rng& rng) {
  using namespace impute_detail;
  if (config.method == ImputationMethod::EMB) return emb_impute(ds, config.m, rng, config);
  require_observed_values(ds);
  const int n_cov = static_cast<int>(ds.schema.covariates.size());

  // original masks and row bookkeeping
  std::vector<Dataset> out;
  out.reserve(static_cast<std::size_t>(config.m));
  for (int imp = 0; imp < config.m; ++imp) {
    Rng stream(rng.engine()());
    ChainState st = init_state(ds, stream);

    long n_rows = static_cast<long>(ds.n_observations());
    long n_missing_resp = 0;
    for (const auto& mask : st.response_missing)
      for (char c : mask) n_missing_resp += c;
    std::vector<int> cov_missing_count(static_cast<std::size_t>(n_cov), 0);
    for (const auto& mask : st.covariate_missing)
      for (int c = 0; c < n_cov; ++c) cov_missing_count[static_cast<std::size_t>(c)] += mask[static_cast<std::size_t>(c)];

    const bool surv_pred = config.include_survival_predictors;
    for (int sweep = 0; sweep < config.chained_iterations; ++sweep) {
      // response at the observation level
      if (n_missing_resp > 0) {
        const int p = 2 + n_cov + (surv_pred ? 2 : 0);
        Eigen::MatrixXd X_obs(n_rows - n_missing_resp, p), X_mis(n_missing_resp, p);
        Eigen::VectorXd y_obs(n_rows - n_missing_resp);
        long ro = 0, rm = 0;
        std::vector<std::pair<int, int>> mis_cells;
        for (std::size_t i = 0; i < ds.subjects.size(); ++i) {
          const Subject& s = ds.subjects[i];
          for (std::size_t j = 0; j < s.observations.size(); ++j) {
            Eigen::RowVectorXd row(p);
            row(0) = 1.0;
            row(1) = s.observations[j].time_days / config.time_scale;
            for (int c = 0; c < n_cov; ++c)
              row(2 + c) = static_cast<double>(st.covariate[i][static_cast<std::size_t>(c)]);
            if (surv_pred) {
              row(p - 2) = std::log(s.survival.observed_time_days / config.time_scale);
              row(p - 1) = s.survival.event ? 1.0 : 0.0;
            }
            if (st.response_missing[i][j]) {
              X_mis.row(rm++) = row;
              mis_cells.emplace_back(static_cast<int>(i), static_cast<int>(j));
            } else {
              y_obs(ro) = st.response[i][j];
              X_obs.row(ro++) = row;
            }
          }
        }
        Eigen::VectorXd imputed = dispatch_engine(config, y_obs, X_obs, X_mis, false, stream);
        for (long k = 0; k < imputed.size(); ++k)
          st.response[static_cast<std::size_t>(mis_cells[static_cast<std::size_t>(k)].first)]
                     [static_cast<std::size_t>(mis_cells[static_cast<std::size_t>(k)].second)] =
              imputed(k);
      }

      // covariates at the subject level
      for (int c = 0; c < n_cov; ++c) {
        if (cov_missing_count[static_cast<std::size_t>(c)] == 0) continue;
        const int n_sub = static_cast<int>(ds.subjects.size());
        const int p = 2 + (n_cov - 1) + (surv_pred ? 2 : 0);
        const int n_mis = cov_missing_count[static_cast<std::size_t>(c)];
        Eigen::MatrixXd X_obs(n_sub - n_mis, p), X_mis(n_mis, p);
        Eigen::VectorXd y_obs(n_sub - n_mis);
        std::vector<int> mis_subjects;
        long ro = 0, rm = 0;
        for (std::size_t i = 0; i < ds.subjects.size(); ++i) {
          const Subject& s = ds.subjects[i];
          Eigen::RowVectorXd row(p);
          row(0) = 1.0;
          double mean_resp = 0.0;
          if (!st.response[i].empty()) {
            for (double v : st.response[i]) mean_resp += v;
            mean_resp /= static_cast<double>(st.response[i].size());
          }
          row(1) = mean_resp;
          int col = 2;
          for (int c2 = 0; c2 < n_cov; ++c2) {
            if (c2 == c) continue;
            row(col++) = static_cast<double>(st.covariate[i][static_cast<std::size_t>(c2)]);
          }
          if (surv_pred) {
            row(p - 2) = std::log(s.survival.observed_time_days / config.time_scale);
            row(p - 1) = s.survival.event ? 1.0 : 0.0;
          }
          if (st.covariate_missing[i][static_cast<std::size_t>(c)]) {
            X_mis.row(rm++) = row;
            mis_subjects.push_back(static_cast<int>(i));
          } else {
            y_obs(ro) = static_cast<double>(st.covariate[i][static_cast<std::size_t>(c)]);
            X_obs.row(ro++) = row;
          }
        }
        Eigen::VectorXd imputed = dispatch_engine(config, y_obs, X_obs, X_mis, true, stream);
        for (long k = 0; k < imputed.size(); ++k) {
          int level = ds.schema.covariates[static_cast<std::size_t>(c)].nearest_level(imputed(k));
          st.covariate[static_cast<std::size_t>(mis_subjects[static_cast<std::size_t>(k)])]
                      [static_cast<std::size_t>(c)] = level;
        }
      }
    }

    Dataset completed = ds;
    for (std::size_t i = 0; i < completed.subjects.size(); ++i) {
      Subject& s = completed.subjects[i];
      for (std::size_t j = 0; j < s.observations.size(); ++j)
        if (st.response_missing[i][j]) s.observations[j].response = st.response[i][j];
      for (std::size_t c = 0; c < s.covariates.cells.size(); ++c)
        if (st.covariate_missing[i][c]) s.covariates.cells[c].level = st.covariate[i][c];
    }
    out.push_back(clear_missing_flags(std::move(completed)));
  }
  return out;
}

}  // namespace jointmi
