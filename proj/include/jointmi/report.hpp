#pragma once

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "jointmi/study.hpp"

namespace jointmi {

namespace report_detail {

inline std::string cell(double coverage, double rmse) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f (%.3f)", coverage, rmse);
  return buf;
}

inline std::vector<double> to_std(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Eigen::VectorXd from_std(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace report_detail

inline nlohmann::json report_to_json(const PerformanceReport& report) {
  nlohmann::json j;
  j["seed"] = report.seed;
  j["parameters"] = report.parameter_names;
  j["replicates_requested"] = report.replicates_requested;
  j["replicates_completed"] = report.replicates_completed;
  j["skip_log"] = report.skip_log;
  nlohmann::json reps = nlohmann::json::array();
  for (const auto& rep : report.replicates) {
    nlohmann::json r;
    r["id"] = rep.id;
    r["truth"] = report_detail::to_std(rep.truth);
    nlohmann::json arms = nlohmann::json::array();
    for (const auto& arm : rep.arms) {
      nlohmann::json a;
      a["method"] = arm.method;
      a["estimator"] = arm.estimator;
      a["estimate"] = report_detail::to_std(arm.estimate);
      a["se"] = report_detail::to_std(arm.se);
      a["criterion"] = arm.criterion;
      arms.push_back(std::move(a));
    }
    r["arms"] = std::move(arms);
    reps.push_back(std::move(r));
  }
  j["replicates"] = std::move(reps);
  nlohmann::json dens = nlohmann::json::array();
  for (const auto& row : report.density) {
    nlohmann::json d;
    d["method"] = row.method;
    d["imputation"] = row.imputation;
    d["kind"] = row.kind;
    d["value"] = row.value;
    dens.push_back(std::move(d));
  }
  j["density"] = std::move(dens);
  return j;
}

inline PerformanceReport report_from_json(const nlohmann::json& j) {
  PerformanceReport report;
  report.seed = j.at("seed").get<std::uint64_t>();
  report.parameter_names = j.at("parameters").get<std::vector<std::string>>();
  report.replicates_requested = j.at("replicates_requested").get<int>();
  report.replicates_completed = j.at("replicates_completed").get<int>();
  report.skip_log = j.at("skip_log").get<std::vector<std::string>>();
  for (const auto& r : j.at("replicates")) {
    ReplicateRecord rep;
    rep.id = r.at("id").get<int>();
    rep.truth = report_detail::from_std(r.at("truth").get<std::vector<double>>());
    for (const auto& a : r.at("arms")) {
      ArmRecord arm;
      arm.method = a.at("method").get<std::string>();
      arm.estimator = a.at("estimator").get<std::string>();
      arm.estimate = report_detail::from_std(a.at("estimate").get<std::vector<double>>());
      arm.se = report_detail::from_std(a.at("se").get<std::vector<double>>());
      arm.criterion = a.at("criterion").get<double>();
      rep.arms.push_back(std::move(arm));
    }
    report.replicates.push_back(std::move(rep));
  }
  for (const auto& d : j.at("density")) {
    DensityRow row;
    row.method = d.at("method").get<std::string>();
    row.imputation = d.at("imputation").get<int>();
    row.kind = d.at("kind").get<std::string>();
    row.value = d.at("value").get<double>();
    report.density.push_back(std::move(row));
  }
  study_detail::aggregate(report);
  return report;
}

// coverage_rmse.csv, fits.json, density_compare.csv
inline void emit_report(const PerformanceReport& report, const std::string& out_dir) {
  {
    std::ofstream csv(out_dir + "/coverage_rmse.csv");
    if (!csv) throw std::runtime_error("emit_report: cannot write to " + out_dir);
    csv << "parameter";
    for (const auto& arm : report.arms) csv << ',' << arm.method << '_' << arm.estimator;
    csv << '\n';
    for (std::size_t p = 0; report.arms.size() > 0 && p < report.parameter_names.size(); ++p) {
      csv << report.parameter_names[p];
      for (const auto& arm : report.arms) {
        csv << ',';
        if (arm.replicates_used > 0)
          csv << report_detail::cell(arm.coverage(static_cast<Eigen::Index>(p)),
                                     arm.rmse(static_cast<Eigen::Index>(p)));
      }
      csv << '\n';
    }
  }
  {
    std::ofstream js(out_dir + "/fits.json");
    if (!js) throw std::runtime_error("emit_report: cannot write to " + out_dir);
    js << report_to_json(report).dump(2) << '\n';
  }
  {
    std::ofstream csv(out_dir + "/density_compare.csv");
    if (!csv) throw std::runtime_error("emit_report: cannot write to " + out_dir);
    csv << "method,imputation,kind,value\n";
    char buf[64];
    for (const auto& row : report.density) {
      std::snprintf(buf, sizeof(buf), "%.17g", row.value);
      csv << row.method << ',' << row.imputation << ',' << row.kind << ',' << buf << '\n';
    }
  }
}

}  // namespace jointmi
