#pragma once

// What-if extension of an arrival history under a linearly interpolated R0
// schedule. Daily expected cases follow n_t = n_{t-1} * R0_t^(1/g), seeded by
// the trailing 7-day mean; realized counts are Poisson draws and each new
// arrival copies the demographics of a random recent case.

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

#include "wardsim/common.hpp"
#include "wardsim/ingest.hpp"

namespace wardsim {

inline constexpr int kSeedWindowDays = 7;
inline constexpr int kDemographicWindowDays = 28;

struct ScenarioSpec {
  Date end_date{};
  double r0_start = 1.0;
  double r0_end = 1.0;
  double generation_interval = 4.0;

  void validate() const {
    if (!(std::isfinite(r0_start) && r0_start >= 0.0) || !(std::isfinite(r0_end) && r0_end >= 0.0))
      throw ScenarioError("R0 values must be finite and >= 0");
    if (!(generation_interval > 0.0)) throw ScenarioError("generationInterval must be > 0");
  }
};

inline void to_json(nlohmann::json& j, const ScenarioSpec& s) {
  j = {{"endDate", format_date(s.end_date)},
       {"r0Start", s.r0_start},
       {"r0End", s.r0_end},
       {"generationInterval", s.generation_interval}};
}

inline void from_json(const nlohmann::json& j, ScenarioSpec& s) {
  s.end_date = parse_date(j.at("endDate").get<std::string>());
  s.r0_start = j.at("r0Start").get<double>();
  s.r0_end = j.at("r0End").get<double>();
  s.generation_interval = j.value("generationInterval", 4.0);
}

/// n values from start to end inclusive; n == 1 yields {start}.
inline std::vector<double> interpolate_r0(double start, double end, std::size_t n) {
  if (n == 0) throw ScenarioError("R0 schedule needs at least one day");
  if (n == 1) return {start};
  std::vector<double> out(n);
  const double steps = static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = (start * static_cast<double>(n - 1 - i) + end * static_cast<double>(i)) / steps;
  return out;
}

inline std::vector<double> expected_counts(double seed_level, std::span<const double> r0, double generation_interval) {
  std::vector<double> n(r0.size());
  double level = seed_level;
  for (std::size_t t = 0; t < r0.size(); ++t) {
    level *= std::pow(r0[t], 1.0 / generation_interval);
    n[t] = level;
  }
  return n;
}

/// Mean daily case count over the last 7 history days (or the whole history if shorter).
inline double trailing_mean(std::span<const ArrivalRecord> history) {
  if (history.empty()) throw ScenarioError("history is empty");
  Date first = history.front().day, last = history.front().day;
  for (const auto& a : history) {
    first = std::min(first, a.day);
    last = std::max(last, a.day);
  }
  const Date window_start = std::max(first, last - std::chrono::days{kSeedWindowDays - 1});
  std::size_t count = 0;
  for (const auto& a : history)
    if (a.day >= window_start) ++count;
  return static_cast<double>(count) / static_cast<double>(days_between(window_start, last) + 1);
}

struct ScenarioResult {
  std::vector<ArrivalRecord> arrivals;  // history followed by the extension
  std::size_t history_size = 0;
  Date history_end{};
  std::vector<double> r0;        // per future day
  std::vector<double> expected;  // n_t per future day
  std::vector<long> counts;      // realized per future day
};

inline ScenarioResult extend_arrivals(std::span<const ArrivalRecord> history, const ScenarioSpec& spec,
                                      std::uint64_t seed) {
  if (history.empty()) throw ScenarioError("history is empty");
  spec.validate();
  Date last = history.front().day;
  for (const auto& a : history) last = std::max(last, a.day);
  if (spec.end_date <= last)
    throw ScenarioError("endDate " + format_date(spec.end_date) + " must be after history end " + format_date(last));

  ScenarioResult result;
  result.history_end = last;
  result.history_size = history.size();
  result.arrivals.assign(history.begin(), history.end());

  const Date origin = history.front().day - std::chrono::days{history.front().time};
  const auto horizon = static_cast<std::size_t>(days_between(last, spec.end_date));
  result.r0 = interpolate_r0(spec.r0_start, spec.r0_end, horizon);
  result.expected = expected_counts(trailing_mean(history), result.r0, spec.generation_interval);

  std::vector<const ArrivalRecord*> recent;
  const Date demo_start = last - std::chrono::days{kDemographicWindowDays - 1};
  for (const auto& a : history)
    if (a.day >= demo_start) recent.push_back(&a);

  std::mt19937_64 rng{hash64(seed, 0)};
  std::uniform_int_distribution<std::size_t> pick(0, recent.size() - 1);
  for (std::size_t t = 0; t < horizon; ++t) {
    long count = 0;
    if (result.expected[t] > 0.0) count = std::poisson_distribution<long>(result.expected[t])(rng);
    result.counts.push_back(count);
    const Date day = last + std::chrono::days{static_cast<int>(t) + 1};
    for (long k = 0; k < count; ++k) {
      ArrivalRecord rec = *recent[pick(rng)];
      rec.day = day;
      rec.time = days_between(origin, day);
      result.arrivals.push_back(std::move(rec));
    }
  }
  return result;
}

}  // namespace wardsim
