#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace jointmi {

// One longitudinal record. time_days >= 0; response holds a value iff
// response_missing is false.
struct LongitudinalObservation {
  double time_days = 0.0;
  double response = 0.0;
  bool response_missing = false;
};

// Ordinal covariate cell: integer level code, or missing.
struct CovariateCell {
  int level = 0;
  bool missing = false;
};

struct CovariateSchema {
  std::string name;
  std::vector<int> levels;  // declared level set, first entry is the reference
  bool optional = false;    // column may be absent from the CSV

  bool has_level(int level) const {
    return std::find(levels.begin(), levels.end(), level) != levels.end();
  }
  int nearest_level(double x) const {
    int best = levels.front();
    double best_d = std::abs(x - best);
    for (int l : levels) {
      double d = std::abs(x - l);
      if (d < best_d) {
        best_d = d;
        best = l;
      }
    }
    return best;
  }
};

struct SchemaConfig {
  std::vector<CovariateSchema> covariates;

  int index_of(const std::string& name) const {
    for (std::size_t i = 0; i < covariates.size(); ++i)
      if (covariates[i].name == name) return static_cast<int>(i);
    return -1;
  }

  // simulation-study schema: t_stage {0,1,2,3}, n_stage {0,1}
  static SchemaConfig simulation_default() {
    SchemaConfig s;
    s.covariates.push_back({"t_stage", {0, 1, 2, 3}, false});
    s.covariates.push_back({"n_stage", {0, 1}, false});
    return s;
  }

  static SchemaConfig from_config(const class KeyValueConfig& cfg);
};

// Aligned with SchemaConfig::covariates.
struct CovariateVector {
  std::vector<CovariateCell> cells;
};

struct SurvivalRecord {
  double observed_time_days = 0.0;  // min(event time, censoring time), > 0
  bool event = false;               // true = event observed, false = censored
};

struct Subject {
  std::string id;
  CovariateVector covariates;
  SurvivalRecord survival;
  std::vector<LongitudinalObservation> observations;  // strictly increasing in time
};

// Immutable after construction by convention; all operations treat it as
// read-only and return new datasets.
struct Dataset {
  SchemaConfig schema;
  std::vector<Subject> subjects;

  std::size_t n_subjects() const { return subjects.size(); }
  std::size_t n_observations() const {
    std::size_t n = 0;
    for (const auto& s : subjects) n += s.observations.size();
    return n;
  }
  std::size_t n_events() const {
    std::size_t n = 0;
    for (const auto& s : subjects) n += s.survival.event ? 1 : 0;
    return n;
  }
};

inline bool datasets_equal(const Dataset& a, const Dataset& b) {
  if (a.subjects.size() != b.subjects.size()) return false;
  if (a.schema.covariates.size() != b.schema.covariates.size()) return false;
  for (std::size_t i = 0; i < a.schema.covariates.size(); ++i) {
    if (a.schema.covariates[i].name != b.schema.covariates[i].name) return false;
    if (a.schema.covariates[i].levels != b.schema.covariates[i].levels) return false;
  }
  for (std::size_t i = 0; i < a.subjects.size(); ++i) {
    const Subject& x = a.subjects[i];
    const Subject& y = b.subjects[i];
    if (x.id != y.id) return false;
    if (x.survival.observed_time_days != y.survival.observed_time_days) return false;
    if (x.survival.event != y.survival.event) return false;
    if (x.covariates.cells.size() != y.covariates.cells.size()) return false;
    for (std::size_t c = 0; c < x.covariates.cells.size(); ++c) {
      if (x.covariates.cells[c].missing != y.covariates.cells[c].missing) return false;
      if (!x.covariates.cells[c].missing && x.covariates.cells[c].level != y.covariates.cells[c].level)
        return false;
    }
    if (x.observations.size() != y.observations.size()) return false;
    for (std::size_t j = 0; j < x.observations.size(); ++j) {
      if (x.observations[j].time_days != y.observations[j].time_days) return false;
      if (x.observations[j].response_missing != y.observations[j].response_missing) return false;
      if (!x.observations[j].response_missing &&
          x.observations[j].response != y.observations[j].response)
        return false;
    }
  }
  return true;
}

}  // namespace jointmi
