#pragma once

// End-to-end workflows shared by the command line and the HTTP service:
// region/window selection, simulation with optional field comparison,
// scenario extension, calibration and sensitivity analysis.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "wardsim/common.hpp"
#include "wardsim/engine.hpp"
#include "wardsim/evaluate.hpp"
#include "wardsim/ingest.hpp"
#include "wardsim/model.hpp"
#include "wardsim/optimize.hpp"
#include "wardsim/regression_tree.hpp"
#include "wardsim/scenario.hpp"
#include "wardsim/sensitivity.hpp"

namespace wardsim {

struct DataWindow {
  RegionId region{};
  std::optional<Date> start;
  std::optional<Date> end;
};

inline std::vector<ArrivalRecord> select_arrivals(const std::vector<RawCaseRow>& rows, const DataWindow& w,
                                                  std::vector<std::string>* warnings = nullptr) {
  const auto regional = filter_region_cases(rows, w.region);
  if (regional.empty()) throw EmptyDatasetError("no case rows for region " + std::to_string(w.region.code));
  auto pre = preprocess_cases(regional, {w.start, w.end, DaySource::refdatum});
  if (warnings) warnings->insert(warnings->end(), pre.warnings.begin(), pre.warnings.end());
  return std::move(pre.arrivals);
}

inline std::vector<FieldRecord> select_field(const std::vector<RawIcuRow>& rows, const DataWindow& w) {
  const auto regional = filter_region_icu(rows, w.region);
  if (regional.empty()) throw EmptyDatasetError("no ICU rows for region " + std::to_string(w.region.code));
  std::vector<FieldRecord> out;
  for (const auto& f : aggregate_icu_beds(regional))
    if ((!w.start || f.day >= *w.start) && (!w.end || f.day <= *w.end)) out.push_back(f);
  if (out.empty()) throw EmptyDatasetError("no ICU rows inside the date window");
  return out;
}

struct SimulationOutcome {
  DailyUsageSeries usage;
  std::vector<FieldRecord> field;
  std::optional<ErrorReport> error;
};

/// Usage is cropped to the window when one is given; the error is computed on
/// the days shared with the field series.
inline SimulationOutcome simulate_window(const std::vector<ArrivalRecord>& arrivals,
                                         const std::vector<FieldRecord>& field, const ParameterSet& para,
                                         const SimConfig& conf, const DataWindow& w) {
  SimulationOutcome out;
  out.usage = simulate_usage(arrivals, para, conf);
  if (w.start || w.end) {
    const Date from = w.start.value_or(out.usage.size() ? out.usage.date_at(0) : out.usage.origin);
    const Date to = w.end.value_or(out.usage.size() ? out.usage.date_at(out.usage.size() - 1) : out.usage.origin);
    out.usage = crop(out.usage, from, to);
  }
  out.field = field;
  if (!field.empty()) out.error = compute_error_report(align_series(out.usage, field, conf));
  return out;
}

inline nlohmann::json outcome_json(const SimulationOutcome& o) {
  nlohmann::json j = {{"usage", o.usage}};
  if (!o.field.empty()) j["field"] = o.field;
  if (o.error) j["error"] = *o.error;
  return j;
}

struct ScenarioOutcome {
  ScenarioResult scenario;
  DailyUsageSeries usage;  // extension window only
};

inline ScenarioOutcome run_scenario(const std::vector<ArrivalRecord>& history, const ScenarioSpec& spec,
                                    const ParameterSet& para, const SimConfig& conf) {
  ScenarioOutcome out;
  out.scenario = extend_arrivals(history, spec, conf.seed);
  const auto usage = simulate_usage(out.scenario.arrivals, para, conf);
  out.usage = crop(usage, out.scenario.history_end + std::chrono::days{1}, spec.end_date);
  return out;
}

inline nlohmann::json scenario_summary_json(const ScenarioResult& s) {
  nlohmann::json days = nlohmann::json::array();
  for (std::size_t t = 0; t < s.r0.size(); ++t)
    days.push_back(format_date(s.history_end + std::chrono::days{static_cast<int>(t) + 1}));
  return {{"historyEnd", format_date(s.history_end)},
          {"historyArrivals", s.history_size},
          {"syntheticArrivals", s.arrivals.size() - s.history_size},
          {"days", days},
          {"r0", s.r0},
          {"expected", s.expected},
          {"counts", s.counts}};
}

struct CalibrationOutcome {
  OptimizerRun run;
  double default_error = 0.0;
  double best_error = 0.0;
  ParameterSet best;
};

/// Calibration with the default parameter set as the first design point.
inline CalibrationOutcome calibrate(const CalibrationData& data, const SimConfig& conf, const Bounds& bounds,
                                   OptimizerOptions opt, std::vector<EvalRecord> prior = {}) {
  const auto defaults = default_parameters().to_vector();
  if (opt.seeded_points.empty()) opt.seeded_points.push_back(defaults);
  CalibrationOutcome out;
  out.run = run_optimization(data, conf, bounds, opt, std::move(prior));
  out.best = get_best_parameter(out.run);
  out.best_error = out.run.history[out.run.best_index].y;
  // The defaults are the first design point, so their error is already in the history.
  const auto& first = out.run.history.front();
  out.default_error = first.x == repair_parameters(defaults, bounds)
                          ? first.y
                          : evaluate_parameters(data, default_parameters(), conf).error;
  return out;
}

inline nlohmann::json outcome_json(const CalibrationOutcome& o) {
  nlohmann::json ys = nlohmann::json::array();
  for (const auto& r : o.run.history) ys.push_back(std::isfinite(r.y) ? nlohmann::json(r.y) : nlohmann::json(nullptr));
  return {{"best", o.best},           {"bestIndex", o.run.best_index}, {"bestError", o.best_error},
          {"defaultError", o.default_error}, {"history", ys},          {"evaluations", o.run.history.size()}};
}

struct SensitivityOptions {
  std::size_t max_terms = 10;
  std::optional<std::pair<std::size_t, std::size_t>> slice;  // 0-based dims
  std::size_t grid = 20;
  TreeControls tree{};
  std::uint64_t seed = 1;
};

struct SensitivityOutcome {
  RegressionTree tree;
  std::vector<double> importance;
  ScreeningReport screening;
  std::optional<SliceResult> slice;
};

inline Bounds history_bounds(std::span<const EvalRecord> history) {
  const std::size_t dims = history.front().x.size();
  if (dims == kParamCount) return default_bounds();
  Bounds b{std::vector<double>(dims, std::numeric_limits<double>::infinity()),
           std::vector<double>(dims, -std::numeric_limits<double>::infinity())};
  for (const auto& r : history)
    for (std::size_t d = 0; d < dims; ++d) {
      b.lower[d] = std::min(b.lower[d], r.x[d]);
      b.upper[d] = std::max(b.upper[d], r.x[d]);
    }
  for (std::size_t d = 0; d < dims; ++d)
    if (!(b.lower[d] < b.upper[d])) b.upper[d] = b.lower[d] + 1.0;
  return b;
}

/// max_terms is reduced to n - 2 when the history is too short for it.
inline SensitivityOutcome analyze_history(std::span<const EvalRecord> history, const SensitivityOptions& opt) {
  Samples x;
  std::vector<double> y;
  for (const auto& r : history)
    if (std::isfinite(r.y)) {
      x.push_back(r.x);
      y.push_back(r.y);
    }
  if (x.size() < 3) throw ValidationError("sensitivity analysis needs at least 3 finite evaluations");
  const std::size_t dims = x.front().size();
  for (const auto& row : x)
    if (row.size() != dims) throw ValidationError("history records have different dimensions");

  SensitivityOutcome out{RegressionTree::fit(x, y, opt.tree), {}, {}, std::nullopt};
  out.importance = out.tree.variable_importance();

  std::vector<std::string> names;
  if (dims == kParamCount)
    for (auto n : kParamNames) names.emplace_back(n);
  const std::size_t terms = std::min(opt.max_terms, x.size() - 2);
  out.screening = fit_linear_screen(x, y, terms, names);
  if (terms < opt.max_terms)
    out.screening.warnings.push_back("maxTerms reduced to " + std::to_string(terms) + " for " +
                                     std::to_string(x.size()) + " observations");

  if (opt.slice) {
    EnsembleOptions eo;
    eo.seed = opt.seed;
    out.slice = surrogate_slice(history, opt.slice->first, opt.slice->second, opt.grid, history_bounds(history),
                                std::nullopt, eo);
  }
  return out;
}

inline nlohmann::json outcome_json(const SensitivityOutcome& o) {
  nlohmann::json j = {{"importance", importance_json(o.importance)},
                      {"screening", o.screening},
                      {"leaves", o.tree.leaf_count()}};
  if (o.slice) j["slice"] = *o.slice;
  return j;
}

}  // namespace wardsim
