#pragma once

#include <map>
#include <string>
#include <vector>

#include "jointmi/types.hpp"

namespace jointmi {

struct Violation {
  std::string subject_id;
  std::string rule;
  std::string detail;
};

// Violations are data, not failures: an empty report means every invariant holds.
inline std::vector<Violation> validate(const Dataset& ds) {
  std::vector<Violation> report;
  std::map<std::string, int> seen;
  for (const auto& s : ds.subjects) {
    if (++seen[s.id] == 2)
      report.push_back({s.id, "duplicate subject", "subject appears more than once"});
    if (!(s.survival.observed_time_days > 0.0))
      report.push_back({s.id, "non-positive observed_time",
                        "observed_time = " + std::to_string(s.survival.observed_time_days)});
    for (std::size_t j = 0; j < s.observations.size(); ++j) {
      const auto& obs = s.observations[j];
      if (obs.time_days < 0.0)
        report.push_back({s.id, "negative observation time", "time = " + std::to_string(obs.time_days)});
      if (j > 0 && !(obs.time_days > s.observations[j - 1].time_days))
        report.push_back({s.id, "non-increasing times",
                          "time " + std::to_string(obs.time_days) + " follows " +
                              std::to_string(s.observations[j - 1].time_days)});
      if (obs.time_days > s.survival.observed_time_days)
        report.push_back({s.id, "observation after event/censoring",
                          "time " + std::to_string(obs.time_days) + " > observed_time " +
                              std::to_string(s.survival.observed_time_days)});
    }
    if (s.covariates.cells.size() != ds.schema.covariates.size())
      report.push_back({s.id, "covariate arity mismatch", "cells do not match schema"});
    else
      for (std::size_t c = 0; c < s.covariates.cells.size(); ++c) {
        const auto& cell = s.covariates.cells[c];
        if (!cell.missing && !ds.schema.covariates[c].has_level(cell.level))
          report.push_back({s.id, "level outside declared set",
                            ds.schema.covariates[c].name + " = " + std::to_string(cell.level)});
      }
  }
  return report;
}

struct LevelMissingness {
  int level = 0;  // -1 bucket collects rows whose subject has the covariate missing
  long rows = 0;
  long missing_responses = 0;
  double proportion = 0.0;
};

struct CovariateMissingness {
  std::string name;
  long missing_cells = 0;        // over subjects
  double proportion = 0.0;       // missing_cells / n_subjects
  std::vector<LevelMissingness> response_by_level;
};

struct MissingnessSummary {
  long n_rows = 0;
  long n_missing_responses = 0;
  double response_proportion = 0.0;
  long n_subjects = 0;
  long n_covariate_cells = 0;
  long n_missing_covariate_cells = 0;
  double covariate_proportion = 0.0;
  std::vector<CovariateMissingness> covariates;
};

inline MissingnessSummary missingness_summary(const Dataset& ds) {
  MissingnessSummary out;
  out.n_subjects = static_cast<long>(ds.subjects.size());
  out.covariates.resize(ds.schema.covariates.size());
  for (std::size_t c = 0; c < ds.schema.covariates.size(); ++c) {
    out.covariates[c].name = ds.schema.covariates[c].name;
    for (int level : ds.schema.covariates[c].levels)
      out.covariates[c].response_by_level.push_back({level, 0, 0, 0.0});
    out.covariates[c].response_by_level.push_back({-1, 0, 0, 0.0});
  }
  for (const auto& s : ds.subjects) {
    for (std::size_t c = 0; c < s.covariates.cells.size() && c < out.covariates.size(); ++c) {
      ++out.n_covariate_cells;
      if (s.covariates.cells[c].missing) {
        ++out.n_missing_covariate_cells;
        ++out.covariates[c].missing_cells;
      }
    }
    for (const auto& obs : s.observations) {
      ++out.n_rows;
      bool miss = obs.response_missing;
      if (miss) ++out.n_missing_responses;
      for (std::size_t c = 0; c < s.covariates.cells.size() && c < out.covariates.size(); ++c) {
        auto& rows = out.covariates[c].response_by_level;
        int level = s.covariates.cells[c].missing ? -1 : s.covariates.cells[c].level;
        for (auto& bucket : rows) {
          if (bucket.level == level) {
            ++bucket.rows;
            if (miss) ++bucket.missing_responses;
            break;
          }
        }
      }
    }
  }
  out.response_proportion = out.n_rows > 0 ? double(out.n_missing_responses) / double(out.n_rows) : 0.0;
  out.covariate_proportion =
      out.n_covariate_cells > 0 ? double(out.n_missing_covariate_cells) / double(out.n_covariate_cells)
                                : 0.0;
  for (auto& cov : out.covariates) {
    cov.proportion = out.n_subjects > 0 ? double(cov.missing_cells) / double(out.n_subjects) : 0.0;
    for (auto& bucket : cov.response_by_level)
      bucket.proportion = bucket.rows > 0 ? double(bucket.missing_responses) / double(bucket.rows) : 0.0;
  }
  return out;
}

}  // namespace jointmi
