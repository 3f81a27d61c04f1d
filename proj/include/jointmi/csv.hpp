#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "jointmi/config.hpp"
#include "jointmi/types.hpp"

namespace jointmi {

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConsistencyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline SchemaConfig SchemaConfig::from_config(const KeyValueConfig& cfg) {
  SchemaConfig schema;
  auto names = cfg.get_list("covariates");
  if (names.empty()) return simulation_default();
  for (const auto& name : names) {
    CovariateSchema cov;
    cov.name = name;
    cov.levels = cfg.get_int_list(name + "_levels");
    if (cov.levels.empty())
      throw SchemaError("schema config: missing '" + name + "_levels'");
    cov.optional = cfg.get_bool(name + "_optional", false);
    schema.covariates.push_back(cov);
  }
  return schema;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  fields.push_back(field);
  return fields;
}

inline double parse_field_double(const std::string& s, const std::string& file, int lineno,
                                 const std::string& what) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw ParseError(file + " line " + std::to_string(lineno) + ": malformed " + what + " '" + s + "'");
  }
  if (pos != s.size())
    throw ParseError(file + " line " + std::to_string(lineno) + ": malformed " + what + " '" + s + "'");
  return v;
}

inline int parse_field_int(const std::string& s, const std::string& file, int lineno,
                           const std::string& what) {
  std::size_t pos = 0;
  long v = 0;
  try {
    v = std::stol(s, &pos);
  } catch (const std::exception&) {
    throw ParseError(file + " line " + std::to_string(lineno) + ": malformed " + what + " '" + s + "'");
  }
  if (pos != s.size())
    throw ParseError(file + " line " + std::to_string(lineno) + ": malformed " + what + " '" + s + "'");
  return static_cast<int>(v);
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// Survival CSV is the authoritative subject list and ordering.
// Longitudinal rows attach observations and baseline covariates; empty cells
// denote missing values.
inline Dataset load_dataset(const std::string& longitudinal_csv_path,
                            const std::string& survival_csv_path,
                            const SchemaConfig& schema) {
  Dataset ds;
  ds.schema = schema;

  std::ifstream surv(survival_csv_path);
  if (!surv) throw ParseError("cannot open " + survival_csv_path);
  std::string line;
  int lineno = 0;
  if (!std::getline(surv, line)) throw ParseError(survival_csv_path + ": empty file");
  ++lineno;
  {
    auto header = detail::split_csv_line(line);
    if (header.size() != 3 || header[0] != "subject_id" || header[1] != "observed_time" ||
        header[2] != "event")
      throw SchemaError(survival_csv_path + ": expected header subject_id,observed_time,event");
  }
  std::map<std::string, std::size_t> index;
  while (std::getline(surv, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != 3)
      throw ParseError(survival_csv_path + " line " + std::to_string(lineno) + ": expected 3 fields");
    Subject subject;
    subject.id = fields[0];
    if (subject.id.empty())
      throw ParseError(survival_csv_path + " line " + std::to_string(lineno) + ": empty subject_id");
    if (index.count(subject.id))
      throw ConsistencyError("duplicate subject '" + subject.id + "' in " + survival_csv_path);
    subject.survival.observed_time_days =
        detail::parse_field_double(fields[1], survival_csv_path, lineno, "observed_time");
    if (!(subject.survival.observed_time_days > 0.0))
      throw ParseError(survival_csv_path + " line " + std::to_string(lineno) +
                       ": observed_time must be > 0");
    int ev = detail::parse_field_int(fields[2], survival_csv_path, lineno, "event");
    if (ev != 0 && ev != 1)
      throw ParseError(survival_csv_path + " line " + std::to_string(lineno) + ": event must be 0 or 1");
    subject.survival.event = ev == 1;
    subject.covariates.cells.assign(schema.covariates.size(), CovariateCell{0, true});
    index[subject.id] = ds.subjects.size();
    ds.subjects.push_back(std::move(subject));
  }

  std::ifstream lng(longitudinal_csv_path);
  if (!lng) throw ParseError("cannot open " + longitudinal_csv_path);
  lineno = 0;
  if (!std::getline(lng, line)) throw ParseError(longitudinal_csv_path + ": empty file");
  ++lineno;
  auto header = detail::split_csv_line(line);
  if (header.size() < 3 || header[0] != "subject_id" || header[1] != "time_days" ||
      header[2] != "response")
    throw SchemaError(longitudinal_csv_path +
                      ": expected header subject_id,time_days,response,<covariates>");
  // Absent optional columns are dropped from the effective schema entirely.
  SchemaConfig effective;
  std::vector<int> cov_column;  // column index per effective covariate
  std::vector<bool> column_used(header.size(), false);
  for (const auto& cov : schema.covariates) {
    int col = -1;
    for (std::size_t h = 3; h < header.size(); ++h) {
      if (header[h] == cov.name) {
        col = static_cast<int>(h);
        column_used[h] = true;
        break;
      }
    }
    if (col < 0) {
      if (!cov.optional)
        throw SchemaError(longitudinal_csv_path + ": missing required column '" + cov.name + "'");
      continue;
    }
    effective.covariates.push_back(cov);
    cov_column.push_back(col);
  }
  for (std::size_t h = 3; h < header.size(); ++h) {
    if (!column_used[h]) throw SchemaError(longitudinal_csv_path + ": unknown column '" + header[h] + "'");
  }
  ds.schema = effective;
  const SchemaConfig& schema_eff = ds.schema;
  for (auto& s : ds.subjects)
    s.covariates.cells.assign(schema_eff.covariates.size(), CovariateCell{0, true});

  std::vector<bool> saw_rows(ds.subjects.size(), false);
  while (std::getline(lng, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size())
      throw ParseError(longitudinal_csv_path + " line " + std::to_string(lineno) + ": expected " +
                       std::to_string(header.size()) + " fields");
    auto it = index.find(fields[0]);
    if (it == index.end())
      throw ConsistencyError("subject '" + fields[0] + "' in " + longitudinal_csv_path +
                             " is absent from " + survival_csv_path);
    Subject& subject = ds.subjects[it->second];

    LongitudinalObservation obs;
    obs.time_days = detail::parse_field_double(fields[1], longitudinal_csv_path, lineno, "time_days");
    if (obs.time_days < 0.0)
      throw ParseError(longitudinal_csv_path + " line " + std::to_string(lineno) +
                       ": time_days must be >= 0");
    if (fields[2].empty()) {
      obs.response_missing = true;
    } else {
      obs.response = detail::parse_field_double(fields[2], longitudinal_csv_path, lineno, "response");
    }

    CovariateVector row_covs;
    row_covs.cells.assign(schema_eff.covariates.size(), CovariateCell{0, true});
    for (std::size_t c = 0; c < schema_eff.covariates.size(); ++c) {
      if (cov_column[c] < 0) continue;
      const std::string& cell = fields[static_cast<std::size_t>(cov_column[c])];
      if (cell.empty()) continue;
      int level = detail::parse_field_int(cell, longitudinal_csv_path, lineno,
                                          schema_eff.covariates[c].name);
      if (!schema_eff.covariates[c].has_level(level))
        throw SchemaError(longitudinal_csv_path + " line " + std::to_string(lineno) + ": " +
                          schema_eff.covariates[c].name + " level " + std::to_string(level) +
                          " not in declared level set");
      row_covs.cells[c] = CovariateCell{level, false};
    }
    if (!saw_rows[it->second]) {
      subject.covariates = row_covs;
      saw_rows[it->second] = true;
    } else {
      for (std::size_t c = 0; c < schema_eff.covariates.size(); ++c) {
        const CovariateCell& a = subject.covariates.cells[c];
        const CovariateCell& b = row_covs.cells[c];
        if (a.missing != b.missing || (!a.missing && a.level != b.level))
          throw ConsistencyError("subject '" + subject.id + "': inconsistent " +
                                 schema_eff.covariates[c].name + " across longitudinal rows (line " +
                                 std::to_string(lineno) + ")");
      }
    }
    subject.observations.push_back(obs);
  }
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& longitudinal_csv_path,
                         const std::string& survival_csv_path) {
  std::ofstream surv(survival_csv_path);
  if (!surv) throw std::runtime_error("cannot write " + survival_csv_path);
  surv << "subject_id,observed_time,event\n";
  for (const auto& s : ds.subjects) {
    surv << s.id << ',' << detail::format_double(s.survival.observed_time_days) << ','
         << (s.survival.event ? 1 : 0) << '\n';
  }

  std::ofstream lng(longitudinal_csv_path);
  if (!lng) throw std::runtime_error("cannot write " + longitudinal_csv_path);
  lng << "subject_id,time_days,response";
  for (const auto& cov : ds.schema.covariates) lng << ',' << cov.name;
  lng << '\n';
  for (const auto& s : ds.subjects) {
    for (const auto& obs : s.observations) {
      lng << s.id << ',' << detail::format_double(obs.time_days) << ',';
      if (!obs.response_missing) lng << detail::format_double(obs.response);
      for (const auto& cell : s.covariates.cells) {
        lng << ',';
        if (!cell.missing) lng << cell.level;
      }
      lng << '\n';
    }
  }
}

}  // namespace jointmi
