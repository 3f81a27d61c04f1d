#pragma once

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "jointmi/types.hpp"

namespace jointmi {

// Product-limit estimate; right-continuous nonincreasing step function with S(0)=1.
struct KaplanMeierEstimate {
  std::vector<double> event_times;  // distinct event times, ascending
  std::vector<double> survival;     // S(t) just after each event time
  std::vector<long> at_risk;
  std::vector<long> events;

  double at(double t) const {
    double s = 1.0;
    for (std::size_t j = 0; j < event_times.size() && event_times[j] <= t; ++j) s = survival[j];
    return s;
  }
};

inline KaplanMeierEstimate km_estimate(const std::vector<SurvivalRecord>& records) {
  if (records.empty()) throw std::invalid_argument("km_estimate: no records");
  std::vector<std::pair<double, bool>> sorted;
  sorted.reserve(records.size());
  for (const auto& r : records) sorted.emplace_back(r.observed_time_days, r.event);
  std::sort(sorted.begin(), sorted.end());

  KaplanMeierEstimate km;
  double s = 1.0;
  std::size_t i = 0;
  long at_risk = static_cast<long>(sorted.size());
  while (i < sorted.size()) {
    double t = sorted[i].first;
    long d = 0, removed = 0;
    while (i < sorted.size() && sorted[i].first == t) {
      if (sorted[i].second) ++d;
      ++removed;
      ++i;
    }
    if (d > 0) {
      s *= 1.0 - static_cast<double>(d) / static_cast<double>(at_risk);
      km.event_times.push_back(t);
      km.survival.push_back(s);
      km.at_risk.push_back(at_risk);
      km.events.push_back(d);
    }
    at_risk -= removed;
  }
  return km;
}

}  // namespace jointmi
