#pragma once

// Patient-flow simulator. Each infected arrival is routed through the care
// graph with sampled stays; occupancy is tracked as stay intervals per
// resource and reduced to per-day maxima, averaged over replications.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <iostream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <thread>
#include <vector>

#include <json.hpp>

#include "wardsim/common.hpp"
#include "wardsim/ingest.hpp"
#include "wardsim/model.hpp"

namespace wardsim {

struct RiskArrival {
  double time = 0.0;
  double risk = 0.0;
};

struct StayInterval {
  Resource resource = Resource::bed;
  double start = 0.0;
  double end = 0.0;
  std::int64_t patient_id = 0;

  friend bool operator==(const StayInterval&, const StayInterval&) = default;
};

struct GammaDurationSampler {
  template <class URBG>
  double operator()(double mean, double shape, URBG& rng) const {
    return sample_duration(mean, shape, rng);
  }
};

/// Every stay lasts exactly its mean; draws nothing from the stream.
struct ConstantDurationSampler {
  template <class URBG>
  double operator()(double mean, double, URBG&) const {
    return std::max(mean, 0.0);
  }
};

struct RunSummary {
  std::size_t arrivals = 0;
  std::size_t hospitalized = 0;
  std::size_t deaths = 0;
  std::size_t recovered = 0;
};

inline std::vector<RiskArrival> attach_risk(std::span<const ArrivalRecord> arrivals, const ParameterSet& para) {
  std::vector<RiskArrival> out;
  out.reserve(arrivals.size());
  for (const auto& a : arrivals)
    out.push_back({static_cast<double>(a.time), compute_risk(a.age, a.geschlecht, para)});
  return out;
}

namespace detail {

inline State sample_destination(const TransitionMatrix& p, State from, double u) {
  const auto& row = p.p[index(from)];
  double cumulative = 0.0;
  std::size_t last = index(from);
  for (std::size_t j = 0; j < kStateCount; ++j) {
    if (row[j] <= 0.0) continue;
    last = j;
    cumulative += row[j];
    if (u < cumulative) return static_cast<State>(j);
  }
  return static_cast<State>(last);
}

/// Patient ids are positions in the caller's (unsorted) sequence; each patient
/// draws from its own stream hash64(seed, id).
template <class Sampler>
std::vector<StayInterval> simulate_trajectories(std::span<const RiskArrival> arrivals, const ParameterSet& para,
                                                std::uint64_t seed, Sampler sampler, RunSummary& summary) {
  para.validate();
  const TransitionMatrix p = build_transition_matrix(para);
  const DurationMatrix dur = build_duration_matrix(para);
  const double shape = para[Param::GammaShapeParameter];
  const double to_hospital = para[Param::AmntDaysInfectedToHospital];

  std::vector<std::size_t> order(arrivals.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return arrivals[a].time < arrivals[b].time; });

  summary = RunSummary{arrivals.size(), 0, 0, 0};
  std::vector<StayInterval> intervals;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t id : order) {
    const RiskArrival& a = arrivals[id];
    std::mt19937_64 rng{hash64(seed, id)};
    if (!(unit(rng) < a.risk)) continue;
    ++summary.hospitalized;

    double t = a.time + sampler(to_hospital, shape, rng);
    State state = State::hosp;
    while (!is_absorbing(state)) {
      const State next = sample_destination(p, state, unit(rng));
      const double stay = sampler(dur(state, next), shape, rng);
      if (auto r = resource_of(state)) intervals.push_back({*r, t, t + stay, static_cast<std::int64_t>(id)});
      t += stay;
      state = next;
    }
    if (state == State::death) ++summary.deaths;
    if (state == State::healthy) ++summary.recovered;
  }
  return intervals;
}

inline void log_summary(const RunSummary& s, std::uint64_t seed) {
  std::clog << "wardsim: seed " << seed << ": arrivals " << s.arrivals << ", hospitalized " << s.hospitalized
            << ", deaths " << s.deaths << '\n';
}

}  // namespace detail

/// One stochastic run. Deterministic in (arrivals, para, seed).
template <class Sampler = GammaDurationSampler>
std::vector<StayInterval> simulate_once(std::span<const RiskArrival> arrivals, const ParameterSet& para,
                                        const SimConfig& conf, std::uint64_t seed, Sampler sampler = {}) {
  RunSummary summary;
  auto intervals = detail::simulate_trajectories(arrivals, para, seed, sampler, summary);
  if (conf.log_level >= 1) detail::log_summary(summary, seed);
  return intervals;
}

/// Day indices [first, first + count), relative to the data origin (time 0).
struct DayRange {
  int first = 0;
  int count = 0;
};

struct DailyUsageSeries {
  Date origin{};
  int first_day = 0;
  int replicates = 1;
  std::vector<Resource> resources{Resource::bed, Resource::intensiveBed, Resource::intensiveBedVentilation};
  std::vector<std::array<double, kResourceCount>> values;

  std::size_t size() const noexcept { return values.size(); }
  int day_index(std::size_t i) const noexcept { return first_day + static_cast<int>(i); }
  Date date_at(std::size_t i) const noexcept { return origin + std::chrono::days{day_index(i)}; }
  double at(std::size_t i, Resource r) const noexcept { return values[i][index(r)]; }

  friend bool operator==(const DailyUsageSeries&, const DailyUsageSeries&) = default;
};

/// Per day D and resource, the maximum number of half-open stays [start, end)
/// open at any instant of [D, D+1).
inline DailyUsageSeries daily_max(std::span<const StayInterval> intervals, DayRange range) {
  DailyUsageSeries series;
  series.first_day = range.first;
  series.values.assign(static_cast<std::size_t>(std::max(range.count, 0)), {});

  for (std::size_t r = 0; r < kResourceCount; ++r) {
    std::vector<std::pair<double, int>> events;
    for (const auto& iv : intervals) {
      if (index(iv.resource) != r || !(iv.start < iv.end)) continue;
      events.emplace_back(iv.start, +1);
      events.emplace_back(iv.end, -1);
    }
    // Ends sort before starts at equal times.
    std::sort(events.begin(), events.end());
    std::size_t next = 0;
    long open = 0;
    for (std::size_t i = 0; i < series.values.size(); ++i) {
      const double day_start = range.first + static_cast<double>(i);
      while (next < events.size() && events[next].first <= day_start) open += events[next++].second;
      long peak = open;
      while (next < events.size() && events[next].first < day_start + 1.0) {
        open += events[next++].second;
        peak = std::max(peak, open);
      }
      series.values[i][r] = static_cast<double>(peak);
    }
  }
  return series;
}

namespace detail {
inline int first_day_of(std::span<const RiskArrival> arrivals) {
  if (arrivals.empty()) return 0;
  double lo = arrivals.front().time;
  for (const auto& a : arrivals) lo = std::min(lo, a.time);
  return static_cast<int>(std::floor(lo));
}

/// Exclusive end of the day grid: ceil(latest stay end), at least one day past the last arrival.
inline int end_day_of(std::span<const RiskArrival> arrivals, std::span<const StayInterval> intervals) {
  double hi = arrivals.empty() ? 0.0 : std::floor(arrivals.front().time) + 1.0;
  for (const auto& a : arrivals) hi = std::max(hi, std::floor(a.time) + 1.0);
  for (const auto& iv : intervals) hi = std::max(hi, std::ceil(iv.end));
  return static_cast<int>(hi);
}
}  // namespace detail

inline std::size_t worker_count(const SimConfig& conf, std::size_t tasks) {
  if (!conf.parallel || tasks <= 1) return 1;
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const auto cap = static_cast<std::size_t>(std::ceil(conf.perc_cores * hw));
  return std::clamp<std::size_t>(cap, 1, tasks);
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock{failure_mutex};
            if (!failure) failure = std::current_exception();
          }
        }
      });
  }
  if (failure) std::rethrow_exception(failure);
}

/// conf.simRepeats replications with seeds hash64(conf.seed, i); returns the
/// per-day mean of replicate daily maxima.
template <class Sampler = GammaDurationSampler>
DailyUsageSeries run_simulation(std::span<const RiskArrival> arrivals, const ParameterSet& para,
                                const SimConfig& conf, Date origin = {}, Sampler sampler = {}) {
  conf.validate();
  const auto reps = static_cast<std::size_t>(conf.sim_repeats);
  const int first = detail::first_day_of(arrivals);
  std::vector<DailyUsageSeries> per_rep(reps);
  std::vector<RunSummary> summaries(reps);

  parallel_for(reps, worker_count(conf, reps), [&](std::size_t i) {
    const auto intervals = detail::simulate_trajectories(arrivals, para, hash64(conf.seed, i), sampler, summaries[i]);
    const int end = detail::end_day_of(arrivals, intervals);
    per_rep[i] = daily_max(intervals, {first, end - first});
  });

  if (conf.log_level >= 1)
    for (std::size_t i = 0; i < reps; ++i) detail::log_summary(summaries[i], hash64(conf.seed, i));

  DailyUsageSeries mean;
  mean.origin = origin;
  mean.first_day = first;
  mean.replicates = conf.sim_repeats;
  mean.resources = conf.resource_names;
  std::size_t days = 0;
  for (const auto& s : per_rep) days = std::max(days, s.size());
  mean.values.assign(days, {});
  for (const auto& s : per_rep)
    for (std::size_t d = 0; d < s.size(); ++d)
      for (std::size_t r = 0; r < kResourceCount; ++r) mean.values[d][r] += s.values[d][r];
  for (auto& row : mean.values)
    for (double& v : row) v /= static_cast<double>(reps);
  return mean;
}

/// Date of time 0 for a preprocessed arrival sequence.
inline Date arrival_origin(std::span<const ArrivalRecord> arrivals) {
  if (arrivals.empty()) return Date{};
  return arrivals.front().day - std::chrono::days{arrivals.front().time};
}

inline DailyUsageSeries simulate_usage(std::span<const ArrivalRecord> arrivals, const ParameterSet& para,
                                       const SimConfig& conf) {
  const auto risk = attach_risk(arrivals, para);
  return run_simulation(risk, para, conf, arrival_origin(arrivals));
}

inline void write_usage_csv(std::ostream& out, const DailyUsageSeries& s) {
  out << "day,resource,value\n";
  for (std::size_t i = 0; i < s.size(); ++i)
    for (Resource r : s.resources)
      out << format_date(s.date_at(i)) << ',' << to_string(r) << ',' << format_number(s.at(i, r)) << '\n';
}

inline void to_json(nlohmann::json& j, const DailyUsageSeries& s) {
  nlohmann::json days = nlohmann::json::array();
  for (std::size_t i = 0; i < s.size(); ++i) days.push_back(format_date(s.date_at(i)));
  nlohmann::json series = nlohmann::json::object();
  for (Resource r : s.resources) {
    nlohmann::json values = nlohmann::json::array();
    for (std::size_t i = 0; i < s.size(); ++i) values.push_back(s.at(i, r));
    series[std::string{to_string(r)}] = std::move(values);
  }
  j = {{"origin", format_date(s.origin)},
       {"firstDay", s.first_day},
       {"replicates", s.replicates},
       {"days", std::move(days)},
       {"series", std::move(series)}};
}

/// Keeps only days whose date lies in [from, to].
inline DailyUsageSeries crop(const DailyUsageSeries& s, Date from, Date to) {
  DailyUsageSeries out = s;
  out.values.clear();
  bool started = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const Date d = s.date_at(i);
    if (d < from || d > to) continue;
    if (!started) {
      out.first_day = s.day_index(i);
      started = true;
    }
    out.values.push_back(s.values[i]);
  }
  if (!started) out.first_day = days_between(s.origin, from);
  return out;
}

}  // namespace wardsim
