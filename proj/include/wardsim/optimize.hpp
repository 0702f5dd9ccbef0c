#pragma once

// Surrogate-assisted calibration: a Latin hypercube initial design followed
// by sequential proposals chosen by a bagged regression-tree surrogate.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <functional>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "wardsim/common.hpp"
#include "wardsim/engine.hpp"
#include "wardsim/evaluate.hpp"
#include "wardsim/ingest.hpp"
#include "wardsim/model.hpp"
#include "wardsim/regression_tree.hpp"

namespace wardsim {

class OptimizeError : public Error {
public:
  using Error::Error;
};

struct Bounds {
  std::vector<double> lower;
  std::vector<double> upper;

  std::size_t dims() const noexcept { return lower.size(); }

  void validate() const {
    if (lower.size() != upper.size() || lower.empty()) throw ValidationError("bounds need matching, non-empty sides");
    for (std::size_t i = 0; i < lower.size(); ++i)
      if (!(lower[i] < upper[i]))
        throw ValidationError("bound " + std::to_string(i + 1) + ": lower must be < upper");
  }
};

/// Search box around the defaults: factors [0, min(1, 3x)], durations
/// [x/4, 4x], shape [0.5, 5], risk coefficients fixed ranges.
inline Bounds default_bounds(const ParameterSet& defaults = default_parameters()) {
  Bounds b{std::vector<double>(kParamCount), std::vector<double>(kParamCount)};
  for (std::size_t i = 0; i < kParamCount; ++i) {
    const auto p = static_cast<Param>(i);
    const double v = defaults[p];
    if (is_factor(p)) {
      b.lower[i] = 0.0;
      b.upper[i] = std::min(1.0, 3.0 * v);
    } else if (is_duration(p)) {
      b.lower[i] = 0.25 * v;
      b.upper[i] = 4.0 * v;
    }
  }
  auto set = [&](Param p, double lo, double hi) {
    b.lower[index(p)] = lo;
    b.upper[index(p)] = hi;
  };
  set(Param::GammaShapeParameter, 0.5, 5.0);
  set(Param::RiskFactorA, 0.001, 0.1);
  set(Param::RiskFactorB, 0.001, 0.05);
  set(Param::RiskMale, 1.0, 3.0);
  return b;
}

/// Overrides of the form {"Name": [lower, upper], ...} applied to default_bounds().
inline Bounds bounds_from_json(const nlohmann::json& j) {
  Bounds b = default_bounds();
  for (const auto& [key, value] : j.items()) {
    auto p = param_from_name(key);
    if (!p) throw ValidationError("unknown parameter '" + key + "' in bounds");
    const auto range = value.get<std::vector<double>>();
    if (range.size() != 2) throw ValidationError("bounds for '" + key + "' need [lower, upper]");
    b.lower[index(*p)] = range[0];
    b.upper[index(*p)] = range[1];
  }
  b.validate();
  return b;
}

/// n points with exactly one point per equal-width stratum in every dimension.
inline std::vector<std::vector<double>> latin_hypercube(std::size_t n, const Bounds& bounds, std::uint64_t seed) {
  if (n < 2) throw OptimizeError("Latin hypercube needs n >= 2");
  bounds.validate();
  std::mt19937_64 rng{hash64(seed, 0x1A7)};
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::vector<double>> points(n, std::vector<double>(bounds.dims()));
  std::vector<std::size_t> strata(n);
  for (std::size_t d = 0; d < bounds.dims(); ++d) {
    std::iota(strata.begin(), strata.end(), std::size_t{0});
    std::shuffle(strata.begin(), strata.end(), rng);
    const double width = (bounds.upper[d] - bounds.lower[d]) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double lo = bounds.lower[d] + width * static_cast<double>(strata[i]);
      points[i][d] = std::min(lo + width * unit(rng), bounds.upper[d]);
    }
  }
  return points;
}

inline constexpr double kRepairEpsilon = 1e-6;

inline std::vector<double> clamp_to_bounds(std::vector<double> x, const Bounds& bounds) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], bounds.lower[i], bounds.upper[i]);
  return x;
}

/// Clamps to bounds, then rescales any source state's routing factors whose
/// sum exceeds 1 so that they sum to 1 - 1e-6.
inline std::vector<double> repair_parameters(std::vector<double> x, const Bounds& bounds) {
  if (x.size() != kParamCount || bounds.dims() != kParamCount)
    throw ValidationError("parameter repair needs 29-dimensional vectors");
  x = clamp_to_bounds(std::move(x), bounds);
  for (const auto& g : kFactorGroups) {
    double sum = 0.0;
    for (std::size_t k = 0; k < g.count; ++k) sum += x[index(g.factors[k])];
    if (sum <= 1.0) continue;
    const double scale = (1.0 - kRepairEpsilon) / sum;
    for (std::size_t k = 0; k < g.count; ++k) x[index(g.factors[k])] *= scale;
  }
  return x;
}

struct EvalRecord {
  std::vector<double> x;
  double y = 0.0;
  std::uint64_t replication_seed = 0;
  std::string timestamp;
};

struct OptimizerRun {
  std::vector<EvalRecord> history;
  std::size_t budget = 0;
  std::size_t initial_design_size = 0;
  std::uint64_t seed = 0;
  std::size_t best_index = 0;
};

/// argmin over y; ties resolve to the lowest index.
inline std::size_t best_index(std::span<const EvalRecord> history) {
  if (history.empty()) throw OptimizeError("empty optimization history");
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i)
    if (history[i].y < history[best].y) best = i;
  return best;
}

inline ParameterSet get_best_parameter(const OptimizerRun& run) {
  if (run.history.empty()) throw OptimizeError("empty optimization history");
  return ParameterSet::from_vector(run.history[best_index(run.history)].x);
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

using Objective = std::function<double(const std::vector<double>&)>;
using Repair = std::function<std::vector<double>(std::vector<double>)>;

struct OptimizerOptions {
  std::size_t budget = 60;
  std::size_t initial_design_size = 10;
  std::uint64_t seed = 1;
  std::size_t candidates = 1000;
  /// Evaluated first, ahead of the Latin hypercube, and counted in the design.
  std::vector<std::vector<double>> seeded_points;
  EnsembleOptions surrogate{};
  /// Recorded with each evaluation.
  std::uint64_t replication_seed = 0;
  /// Threads for the initial design; the sequential phase is single-threaded.
  std::size_t design_workers = 1;
  Repair repair;
  std::function<void(const EvalRecord&)> on_evaluation;
};

namespace detail {

inline double safe_evaluate(const Objective& f, const std::vector<double>& x) {
  try {
    const double y = f(x);
    return std::isnan(y) ? std::numeric_limits<double>::infinity() : y;
  } catch (const std::exception&) {
    return std::numeric_limits<double>::infinity();
  }
}

inline std::vector<std::vector<double>> initial_design(const Bounds& bounds, const OptimizerOptions& opt,
                                                       const Repair& repair) {
  std::vector<std::vector<double>> design;
  for (const auto& p : opt.seeded_points) {
    if (design.size() == opt.initial_design_size) break;
    design.push_back(repair(p));
  }
  const std::size_t remaining = opt.initial_design_size - design.size();
  if (remaining > 0) {
    auto lhs = latin_hypercube(std::max<std::size_t>(remaining, 2), bounds, opt.seed);
    for (std::size_t i = 0; i < remaining; ++i) design.push_back(repair(std::move(lhs[i])));
  }
  return design;
}

}  // namespace detail

/// Minimizes `objective` within `bounds`. `prior` lets an interrupted run
/// resume: its records are kept and only the missing evaluations are run.
inline OptimizerRun surrogate_search(const Objective& objective, const Bounds& bounds, const OptimizerOptions& opt,
                                     std::vector<EvalRecord> prior = {}) {
  bounds.validate();
  if (opt.initial_design_size < 2) throw OptimizeError("initial design needs at least 2 points");
  if (opt.budget < opt.initial_design_size)
    throw OptimizeError("budget " + std::to_string(opt.budget) + " is smaller than the initial design size " +
                        std::to_string(opt.initial_design_size));
  const Repair repair = opt.repair ? opt.repair : Repair{[&](std::vector<double> x) {
    return clamp_to_bounds(std::move(x), bounds);
  }};

  OptimizerRun run;
  run.budget = opt.budget;
  run.initial_design_size = opt.initial_design_size;
  run.seed = opt.seed;
  run.history = std::move(prior);
  if (run.history.size() > opt.budget) run.history.resize(opt.budget);

  auto record = [&](std::vector<double> x, double y) {
    EvalRecord rec{std::move(x), y, opt.replication_seed, utc_timestamp()};
    if (opt.on_evaluation) opt.on_evaluation(rec);
    run.history.push_back(std::move(rec));
  };

  const auto design = detail::initial_design(bounds, opt, repair);
  if (run.history.size() < design.size()) {
    const std::size_t start = run.history.size();
    std::vector<double> ys(design.size() - start);
    parallel_for(ys.size(), std::max<std::size_t>(1, opt.design_workers),
                 [&](std::size_t i) { ys[i] = detail::safe_evaluate(objective, design[start + i]); });
    for (std::size_t i = 0; i < ys.size(); ++i) record(design[start + i], ys[i]);
  }

  for (std::size_t k = run.history.size(); k < opt.budget; ++k) {
    Samples x;
    std::vector<double> y;
    for (const auto& rec : run.history)
      if (std::isfinite(rec.y)) {
        x.push_back(rec.x);
        y.push_back(rec.y);
      }

    std::mt19937_64 rng{hash64(opt.seed, 0x5EED0000ULL + k)};
    std::vector<std::uniform_real_distribution<double>> axes;
    for (std::size_t d = 0; d < bounds.dims(); ++d) axes.emplace_back(bounds.lower[d], bounds.upper[d]);

    std::optional<BaggedTrees> surrogate;
    if (!x.empty()) {
      EnsembleOptions eo = opt.surrogate;
      eo.seed = hash64(opt.seed, 0x7EE50000ULL + k);
      surrogate = BaggedTrees::fit(x, y, eo);
    }

    std::vector<double> best_candidate;
    double best_prediction = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < std::max<std::size_t>(opt.candidates, 1); ++c) {
      std::vector<double> cand(bounds.dims());
      for (std::size_t d = 0; d < cand.size(); ++d) cand[d] = axes[d](rng);
      cand = repair(std::move(cand));
      const double pred = surrogate ? surrogate->predict(cand) : 0.0;
      if (best_candidate.empty() || pred < best_prediction) {
        best_prediction = pred;
        best_candidate = std::move(cand);
      }
    }
    const double y_new = detail::safe_evaluate(objective, best_candidate);
    record(std::move(best_candidate), y_new);
  }

  run.best_index = best_index(run.history);
  return run;
}

struct CalibrationData {
  std::vector<ArrivalRecord> arrivals;
  std::vector<FieldRecord> field;
};

/// Simulation error of one parameter set against the field data.
inline ErrorReport evaluate_parameters(const CalibrationData& data, const ParameterSet& para, const SimConfig& conf) {
  const auto usage = simulate_usage(data.arrivals, para, conf);
  return compute_error_report(align_series(usage, data.field, conf));
}

/// Calibrates all 29 parameters. Every evaluation uses conf.seed, so the
/// objective is a deterministic function of the parameter vector.
inline OptimizerRun run_optimization(const CalibrationData& data, const SimConfig& conf, const Bounds& bounds,
                                     OptimizerOptions opt, std::vector<EvalRecord> prior = {}) {
  if (bounds.dims() != kParamCount) throw ValidationError("calibration bounds must be 29-dimensional");
  if (opt.initial_design_size < 10) throw OptimizeError("initial design size must be at least 10");
  conf.validate();
  opt.repair = [&bounds](std::vector<double> x) { return repair_parameters(std::move(x), bounds); };
  opt.replication_seed = conf.seed;
  SimConfig inner = conf;
  if (conf.parallel && opt.design_workers <= 1) {
    // Parallelism moves to the design level; each simulation runs its replicates sequentially.
    opt.design_workers = worker_count(conf, opt.initial_design_size);
    inner.parallel = false;
  }
  Objective objective = [&data, inner](const std::vector<double>& x) {
    return evaluate_parameters(data, ParameterSet::from_vector(x), inner).error;
  };
  return surrogate_search(objective, bounds, opt, std::move(prior));
}

inline void to_json(nlohmann::json& j, const EvalRecord& r) {
  j = {{"x", r.x},
       {"y", std::isfinite(r.y) ? nlohmann::json(r.y) : nlohmann::json(nullptr)},
       {"replicationSeed", r.replication_seed},
       {"timestamp", r.timestamp}};
}

/// A null y denotes a failed evaluation (+inf).
inline void from_json(const nlohmann::json& j, EvalRecord& r) {
  r.x = j.at("x").get<std::vector<double>>();
  r.y = j.at("y").is_null() ? std::numeric_limits<double>::infinity() : j.at("y").get<double>();
  r.replication_seed = j.value("replicationSeed", std::uint64_t{0});
  r.timestamp = j.value("timestamp", std::string{});
}

inline void write_history_jsonl(std::ostream& out, std::span<const EvalRecord> history) {
  for (const auto& rec : history) out << nlohmann::json(rec).dump() << '\n';
}

inline std::vector<EvalRecord> read_history_jsonl(std::istream& in) {
  std::vector<EvalRecord> history;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      history.push_back(nlohmann::json::parse(line).get<EvalRecord>());
    } catch (const nlohmann::json::exception& e) {
      throw RowError(n, std::string{"invalid history record: "} + e.what());
    }
  }
  return history;
}

}  // namespace wardsim
