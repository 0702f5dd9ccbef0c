#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "wardsim/common.hpp"
#include "wardsim/engine.hpp"
#include "wardsim/ingest.hpp"
#include "wardsim/model.hpp"

namespace wardsim {

struct AlignedPoint {
  Date day{};
  double sim = 0.0;
  double field = 0.0;
};

struct AlignedResource {
  Resource resource = Resource::intensiveBed;
  double weight = 1.0;
  std::vector<AlignedPoint> points;
};

struct AlignedSeries {
  std::vector<AlignedResource> resources;
};

inline double field_value(const FieldRecord& f, Resource r) {
  return r == Resource::intensiveBedVentilation ? f.intensive_bed_ventilation : f.intensive_bed;
}

/// Inner join on date for each evaluated resource. `bed` has no field
/// counterpart and is skipped together with its weight.
inline AlignedSeries align_series(const DailyUsageSeries& sim, std::span<const FieldRecord> field,
                                  const SimConfig& conf) {
  conf.validate();
  std::map<Date, const FieldRecord*> by_day;
  for (const auto& f : field) by_day[f.day] = &f;

  AlignedSeries out;
  for (std::size_t k = 0; k < conf.resource_eval.size(); ++k) {
    const Resource r = conf.resource_eval[k];
    if (r == Resource::bed) continue;
    AlignedResource ar{r, conf.w2[k], {}};
    for (std::size_t i = 0; i < sim.size(); ++i) {
      auto it = by_day.find(sim.date_at(i));
      if (it != by_day.end()) ar.points.push_back({it->first, sim.at(i, r), field_value(*it->second, r)});
    }
    out.resources.push_back(std::move(ar));
  }

  const bool empty = out.resources.empty() || out.resources.front().points.empty();
  if (empty) {
    auto range = [](auto first, auto last) { return "[" + format_date(first) + ", " + format_date(last) + "]"; };
    const std::string sim_range = sim.size() ? range(sim.date_at(0), sim.date_at(sim.size() - 1)) : "[]";
    const std::string field_range = field.empty() ? "[]" : range(by_day.begin()->first, by_day.rbegin()->first);
    throw AlignmentError("simulated days " + sim_range + " and field days " + field_range + " do not overlap");
  }
  return out;
}

struct ErrorReport {
  double error = 0.0;
  std::vector<std::pair<Resource, double>> per_resource;
  std::size_t days = 0;
};

/// Weighted mean of per-resource RMSEs.
inline ErrorReport compute_error_report(const AlignedSeries& aligned) {
  ErrorReport report;
  double weighted = 0.0;
  double total_weight = 0.0;
  for (const auto& ar : aligned.resources) {
    double sse = 0.0;
    for (const auto& p : ar.points) sse += (p.sim - p.field) * (p.sim - p.field);
    const double rmse = ar.points.empty() ? 0.0 : std::sqrt(sse / static_cast<double>(ar.points.size()));
    report.per_resource.emplace_back(ar.resource, rmse);
    report.days = std::max(report.days, ar.points.size());
    weighted += ar.weight * rmse;
    total_weight += ar.weight;
  }
  if (!(total_weight > 0.0)) throw ValidationError("evaluated resources carry zero total weight");
  report.error = weighted / total_weight;
  return report;
}

inline double compute_error(const AlignedSeries& aligned) { return compute_error_report(aligned).error; }

/// Same, with weights taken from conf.w2 (matched by resource) instead of the aligned series.
inline double compute_error(AlignedSeries aligned, const SimConfig& conf) {
  conf.validate();
  for (auto& ar : aligned.resources)
    for (std::size_t k = 0; k < conf.resource_eval.size(); ++k)
      if (conf.resource_eval[k] == ar.resource) ar.weight = conf.w2[k];
  return compute_error(aligned);
}

inline void to_json(nlohmann::json& j, const ErrorReport& r) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [res, rmse] : r.per_resource) per[std::string{to_string(res)}] = rmse;
  j = {{"error", r.error}, {"perResource", per}, {"days", r.days}};
}

inline void to_json(nlohmann::json& j, const AlignedSeries& a) {
  j = nlohmann::json::object();
  for (const auto& ar : a.resources) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& p : ar.points) rows.push_back({{"day", format_date(p.day)}, {"sim", p.sim}, {"field", p.field}});
    j[std::string{to_string(ar.resource)}] = std::move(rows);
  }
}

}  // namespace wardsim
