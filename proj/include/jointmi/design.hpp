#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "jointmi/config.hpp"
#include "jointmi/types.hpp"

namespace jointmi {

enum class CovariateCoding { Dummy, Linear };

struct CovariateTerm {
  std::string name;
  CovariateCoding coding = CovariateCoding::Dummy;
};

struct LongitudinalModelSpec {
  bool log_response = false;
  double time_scale = 365.0;  // model time = time_days / time_scale
  std::vector<CovariateTerm> covariates;
};

struct SurvivalModelSpec {
  std::vector<CovariateTerm> covariates;
};

enum class MlBaselineKind { Piecewise, Weibull };

struct JointModelSpec {
  LongitudinalModelSpec longitudinal;
  SurvivalModelSpec survival;
  int gh_nodes = 15;
  int baseline_intervals = 7;       // piecewise-constant ("unspecified") ML baseline
  int bspline_interior_knots = 5;   // B-spline log-baseline for Bayes
  MlBaselineKind ml_baseline = MlBaselineKind::Piecewise;
  bool fix_alpha_zero = false;

  static JointModelSpec simulation_default() {
    JointModelSpec spec;
    spec.longitudinal.covariates = {{"t_stage", CovariateCoding::Dummy},
                                    {"n_stage", CovariateCoding::Dummy}};
    spec.survival.covariates = {{"t_stage", CovariateCoding::Dummy}};
    return spec;
  }

  static JointModelSpec from_config(const KeyValueConfig& cfg);
};

namespace detail {

inline std::vector<CovariateTerm> parse_covariate_terms(const std::vector<std::string>& items) {
  std::vector<CovariateTerm> terms;
  for (const auto& item : items) {
    CovariateTerm term;
    auto colon = item.find(':');
    if (colon == std::string::npos) {
      term.name = item;
    } else {
      term.name = item.substr(0, colon);
      std::string coding = item.substr(colon + 1);
      if (coding == "dummy")
        term.coding = CovariateCoding::Dummy;
      else if (coding == "linear")
        term.coding = CovariateCoding::Linear;
      else
        throw std::runtime_error("unknown covariate coding '" + coding + "'");
    }
    terms.push_back(term);
  }
  return terms;
}

}  // namespace detail

inline JointModelSpec JointModelSpec::from_config(const KeyValueConfig& cfg) {
  JointModelSpec spec = simulation_default();
  if (cfg.has("longitudinal_covariates"))
    spec.longitudinal.covariates = detail::parse_covariate_terms(cfg.get_list("longitudinal_covariates"));
  if (cfg.has("survival_covariates"))
    spec.survival.covariates = detail::parse_covariate_terms(cfg.get_list("survival_covariates"));
  spec.longitudinal.log_response = cfg.get_bool("log_response", false);
  spec.longitudinal.time_scale = cfg.get_double("time_scale", 365.0);
  spec.gh_nodes = static_cast<int>(cfg.get_int("gh_nodes", 15));
  spec.baseline_intervals = static_cast<int>(cfg.get_int("baseline_intervals", 7));
  spec.bspline_interior_knots = static_cast<int>(cfg.get_int("bspline_knots", 5));
  std::string baseline = cfg.get_string("ml_baseline", "piecewise");
  if (baseline == "weibull")
    spec.ml_baseline = MlBaselineKind::Weibull;
  else if (baseline != "piecewise")
    throw std::runtime_error("unknown ml_baseline '" + baseline + "'");
  return spec;
}

// Longitudinal design for one dataset: per-subject response vector and design
// matrix [1, scaled time, covariate codings...]. The trajectory is affine in
// time, so x_i(u) = static_row_i + u * e_time.
struct LongitudinalDesign {
  std::vector<std::string> column_names;
  int time_column = 1;
  std::vector<Eigen::MatrixXd> X;   // n_i x p
  std::vector<Eigen::VectorXd> y;   // n_i
  std::vector<Eigen::VectorXd> x0;  // design row at time 0, per subject

  int n_subjects() const { return static_cast<int>(X.size()); }
  int n_columns() const { return static_cast<int>(column_names.size()); }
  long n_rows() const {
    long n = 0;
    for (const auto& yi : y) n += yi.size();
    return n;
  }
};

struct SurvivalDesign {
  std::vector<std::string> column_names;
  Eigen::MatrixXd K;      // n x q
  Eigen::VectorXd time;   // observed time on the model scale (days / time_scale)
  std::vector<char> event;
};

namespace detail {

inline void append_covariate_columns(const Dataset& ds, const Subject& s, const CovariateTerm& term,
                                     std::vector<double>& row) {
  int ci = ds.schema.index_of(term.name);
  if (ci < 0) throw std::runtime_error("covariate '" + term.name + "' not in dataset schema");
  const CovariateCell& cell = s.covariates.cells[static_cast<std::size_t>(ci)];
  if (cell.missing)
    throw std::runtime_error("subject '" + s.id + "': covariate '" + term.name +
                             "' is missing; complete data required");
  const auto& levels = ds.schema.covariates[static_cast<std::size_t>(ci)].levels;
  if (term.coding == CovariateCoding::Linear) {
    row.push_back(static_cast<double>(cell.level));
  } else {
    for (std::size_t l = 1; l < levels.size(); ++l)
      row.push_back(cell.level == levels[l] ? 1.0 : 0.0);
  }
}

inline void append_covariate_names(const Dataset& ds, const CovariateTerm& term,
                                   std::vector<std::string>& names) {
  int ci = ds.schema.index_of(term.name);
  if (ci < 0) throw std::runtime_error("covariate '" + term.name + "' not in dataset schema");
  const auto& levels = ds.schema.covariates[static_cast<std::size_t>(ci)].levels;
  if (term.coding == CovariateCoding::Linear) {
    names.push_back(term.name);
  } else {
    for (std::size_t l = 1; l < levels.size(); ++l)
      names.push_back(term.name + "_" + std::to_string(levels[l]));
  }
}

}  // namespace detail

inline LongitudinalDesign build_longitudinal_design(const Dataset& ds,
                                                    const LongitudinalModelSpec& spec) {
  LongitudinalDesign design;
  design.column_names.push_back("(Intercept)");
  design.column_names.push_back(spec.time_scale == 365.0 ? "days/365" : "time_scaled");
  design.time_column = 1;
  for (const auto& term : spec.covariates) detail::append_covariate_names(ds, term, design.column_names);
  const int p = design.n_columns();

  for (const auto& s : ds.subjects) {
    std::vector<double> static_row;
    static_row.push_back(1.0);
    static_row.push_back(0.0);
    for (const auto& term : spec.covariates) detail::append_covariate_columns(ds, s, term, static_row);
    Eigen::VectorXd x0 = Eigen::Map<Eigen::VectorXd>(static_row.data(), p);

    const int ni = static_cast<int>(s.observations.size());
    Eigen::MatrixXd X(ni, p);
    Eigen::VectorXd y(ni);
    for (int j = 0; j < ni; ++j) {
      const auto& obs = s.observations[static_cast<std::size_t>(j)];
      if (obs.response_missing)
        throw std::runtime_error("subject '" + s.id + "': missing response; complete data required");
      X.row(j) = x0.transpose();
      X(j, design.time_column) = obs.time_days / spec.time_scale;
      double value = obs.response;
      if (spec.log_response) {
        if (!(value > 0.0))
          throw std::runtime_error("subject '" + s.id + "': non-positive response under log transform");
        value = std::log(value);
      }
      y(j) = value;
    }
    design.X.push_back(std::move(X));
    design.y.push_back(std::move(y));
    design.x0.push_back(std::move(x0));
  }
  return design;
}

inline SurvivalDesign build_survival_design(const Dataset& ds, const SurvivalModelSpec& spec,
                                            double time_scale) {
  SurvivalDesign design;
  for (const auto& term : spec.covariates) detail::append_covariate_names(ds, term, design.column_names);
  const int q = static_cast<int>(design.column_names.size());
  const int n = static_cast<int>(ds.subjects.size());
  design.K.resize(n, q);
  design.time.resize(n);
  design.event.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Subject& s = ds.subjects[static_cast<std::size_t>(i)];
    std::vector<double> row;
    for (const auto& term : spec.covariates) detail::append_covariate_columns(ds, s, term, row);
    for (int j = 0; j < q; ++j) design.K(i, j) = row[static_cast<std::size_t>(j)];
    design.time(i) = s.survival.observed_time_days / time_scale;
    design.event[static_cast<std::size_t>(i)] = s.survival.event ? 1 : 0;
  }
  return design;
}

// Names of collinear columns, empty when X has full column rank.
inline std::vector<std::string> collinear_columns(const Eigen::MatrixXd& X,
                                                  const std::vector<std::string>& names,
                                                  double tol = 1e-9) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(tol);
  std::vector<std::string> out;
  if (qr.rank() == X.cols()) return out;
  auto perm = qr.colsPermutation().indices();
  for (int i = qr.rank(); i < X.cols(); ++i)
    out.push_back(names[static_cast<std::size_t>(perm(i))]);
  return out;
}

}  // namespace jointmi
