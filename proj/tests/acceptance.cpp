// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "wardsim/cli.hpp"
#include "wardsim/engine.hpp"
#include "wardsim/evaluate.hpp"
#include "wardsim/model.hpp"
#include "wardsim/optimize.hpp"
#include "wardsim/regression_tree.hpp"
#include "wardsim/scenario.hpp"
#include "wardsim/sensitivity.hpp"
#include "wardsim/workflow.hpp"

using namespace wardsim;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail = what;
    pass = pass && ok;
  }
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

int report(int n, const std::string& title, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = std::string{"exception: "} + e.what();
  }
  std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << n << ": " << title << " (" << num(seconds_since(t0))
            << " s)";
  if (!o.detail.empty()) std::cout << " - " << o.detail;
  std::cout << std::endl;
  return o.pass ? 0 : 1;
}

constexpr double kPrintedP[10][10] = {
    {0, 0.9, 0.1, 0.0, 0.00, 0.000, 0.0, 0.00000, 0e+00, 0.000},
    {0, 1.0, 0.0, 0.0, 0.00, 0.000, 0.0, 0.00000, 0e+00, 0.000},
    {0, 0.0, 0.0, 0.9, 0.09, 0.010, 0.0, 0.00000, 0e+00, 0.000},
    {0, 0.0, 0.0, 0.0, 0.10, 0.001, 0.0, 0.00000, 1e-01, 0.799},
    {0, 0.0, 0.0, 0.0, 0.00, 0.300, 0.0, 0.60000, 1e-01, 0.000},
    {0, 0.0, 0.0, 0.0, 0.00, 0.000, 0.7, 0.00000, 3e-01, 0.000},
    {0, 0.0, 0.0, 0.0, 0.00, 0.000, 0.0, 0.32999, 1e-05, 0.670},
    {0, 0.0, 0.0, 0.0, 0.00, 0.000, 0.0, 0.00000, 0e+00, 1.000},
    {0, 0.0, 0.0, 0.0, 0.00, 0.000, 0.0, 0.00000, 1e+00, 0.000},
    {0, 0.0, 0.0, 0.0, 0.00, 0.000, 0.0, 0.00000, 0e+00, 1.000},
};

Outcome transition_matrix() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto m = build_transition_matrix(default_parameters());
  double worst = 0.0;
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 10; ++j) worst = std::max(worst, std::abs(m.p[i][j] - kPrintedP[i][j]));
  o.require(worst <= 1e-9, "max deviation " + num(worst));
  o.require(seconds_since(t0) < 1.0, "slower than 1 s");
  return o;
}

Outcome risk_values() {
  Outcome o;
  const auto p = default_parameters();
  const struct {
    int age;
    Gender g;
    double expected;
  } cases[] = {{25, Gender::male, 0.03946352}, {47, Gender::male, 0.04917457}, {47, Gender::female, 0.03278305}};
  for (const auto& c : cases) {
    const double r = compute_risk(c.age, c.g, p);
    o.require(std::abs(r - c.expected) <= 1e-6, "age " + std::to_string(c.age) + " gave " + num(r));
  }
  return o;
}

Outcome parameter_names_roundtrip() {
  Outcome o;
  const int idx[] = {24, 25, 3, 10};
  const auto names = parameter_names(idx);
  const char* expected[] = {"AmntDaysAftercareToHealthy", "RiskFactorA", "AmntDaysNormalToIntensive",
                            "AmntDaysVentilationToDeath"};
  for (int k = 0; k < 4; ++k) o.require(names[static_cast<std::size_t>(k)] == expected[k], "index " + std::to_string(idx[k]));
  const auto p = default_parameters();
  const auto v = p.to_vector();
  o.require(v.size() == kParamCount, "vector length");
  o.require(ParameterSet::from_vector(v).to_vector() == v, "vector round trip");
  for (std::size_t i = 0; i < kParamCount; ++i) {
    const auto back = param_from_name(kParamNames[i]);
    o.require(back && index(*back) == i, "name round trip at " + std::to_string(i + 1));
  }
  return o;
}

// Independent oracle: for each day and resource, count open intervals at every candidate instant.
std::vector<std::array<double, kResourceCount>> brute_daily_max(std::span<const StayInterval> iv, DayRange range) {
  std::vector<std::array<double, kResourceCount>> out(static_cast<std::size_t>(range.count));
  for (int d = 0; d < range.count; ++d) {
    const double lo = range.first + d, hi = lo + 1.0;
    for (std::size_t r = 0; r < kResourceCount; ++r) {
      std::vector<const StayInterval*> near;
      for (const auto& s : iv)
        if (static_cast<std::size_t>(s.resource) == r && s.start < hi && s.end >= lo) near.push_back(&s);
      std::vector<double> instants{lo};
      for (const auto* s : near)
        for (double t : {s->start, s->end})
          if (t >= lo && t < hi) instants.push_back(t);
      long best = 0;
      for (double t : instants) {
        long open = 0;
        for (const auto* s : near)
          if (s->start <= t && t < s->end) ++open;
        best = std::max(best, open);
      }
      out[static_cast<std::size_t>(d)][r] = static_cast<double>(best);
    }
  }
  return out;
}

Outcome daily_max_oracle() {
  Outcome o;
  std::mt19937_64 rng{4242};
  std::uniform_real_distribution<double> start(0.0, 60.0), length(0.0, 8.0);
  std::uniform_int_distribution<int> res(0, 2), coin(0, 3);
  std::uniform_int_distribution<std::size_t> size(1, 1000);
  double engine_seconds = 0.0;
  for (int trial = 0; trial < 500 && o.pass; ++trial) {
    std::vector<StayInterval> iv(size(rng));
    for (std::size_t i = 0; i < iv.size(); ++i) {
      double s = start(rng), l = length(rng);
      if (coin(rng) == 0) s = std::floor(s);
      if (coin(rng) == 0) l = std::floor(l);
      iv[i] = {static_cast<Resource>(res(rng)), s, s + l, static_cast<std::int64_t>(i)};
    }
    const DayRange range{0, 69};
    const auto t0 = Clock::now();
    const auto got = daily_max(iv, range);
    engine_seconds += seconds_since(t0);
    o.require(got.values == brute_daily_max(iv, range), "mismatch in fixture " + std::to_string(trial));
  }
  o.require(engine_seconds < 10.0, "dailyMax took " + num(engine_seconds) + " s");
  return o;
}

Outcome duration_sampler() {
  Outcome o;
  std::mt19937_64 rng{20201};
  const int n = 100000;
  double sum = 0.0;
  int outside = 0;
  for (int i = 0; i < n; ++i) {
    const double v = sample_duration(10.0, 1.0, rng);
    if (v < 0.0 || v > 30.0) ++outside;
    sum += v;
  }
  // Exponential(mean 10) truncated to [0, 30].
  const double analytic = 10.0 * (1.0 - 4.0 * std::exp(-3.0)) / (1.0 - std::exp(-3.0));
  const double rel = std::abs(sum / n - analytic) / analytic;
  o.require(outside == 0, std::to_string(outside) + " draws outside [0, 30]");
  o.require(rel < 0.02, "relative mean error " + num(rel));
  return o;
}

Outcome chain_consistency() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto para = default_parameters();
  const auto m = build_transition_matrix(para);
  std::array<double, kStateCount> pi{};
  pi[index(State::hosp)] = 1.0;
  for (int step = 0; step < 200; ++step) {
    std::array<double, kStateCount> next{};
    for (std::size_t i = 0; i < kStateCount; ++i)
      for (std::size_t j = 0; j < kStateCount; ++j) next[j] += pi[i] * m.p[i][j];
    pi = next;
  }
  const std::size_t n = 10000;
  const std::vector<RiskArrival> arrivals(n, RiskArrival{0.0, 1.0});
  RunSummary summary;
  detail::simulate_trajectories(std::span<const RiskArrival>{arrivals}, para, 97, ConstantDurationSampler{}, summary);
  o.require(summary.hospitalized == n, "not every patient entered");
  for (auto [state, count] : {std::pair{State::death, summary.deaths}, std::pair{State::healthy, summary.recovered}}) {
    const double p = pi[index(state)];
    const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(n));
    const double got = static_cast<double>(count) / static_cast<double>(n);
    o.require(std::abs(got - p) <= 3 * sigma, std::string{to_string(state)} + " fraction " + num(got) + " vs " + num(p));
  }
  o.require(seconds_since(t0) < 30.0, "slower than 30 s");
  return o;
}

Outcome rmse_contract() {
  Outcome o;
  const Date day0 = make_date(2020, 10, 1);
  auto aligned = [&](std::vector<std::vector<std::pair<double, double>>> per_resource) {
    AlignedSeries a;
    const Resource res[] = {Resource::intensiveBed, Resource::intensiveBedVentilation};
    for (std::size_t k = 0; k < per_resource.size(); ++k) {
      AlignedResource ar{res[k], 1.0, {}};
      for (std::size_t i = 0; i < per_resource[k].size(); ++i)
        ar.points.push_back({day0 + std::chrono::days{static_cast<int>(i)}, per_resource[k][i].first,
                             per_resource[k][i].second});
      a.resources.push_back(ar);
    }
    return a;
  };
  o.require(compute_error(aligned({{{3, 3}, {7, 7}}, {{1, 1}, {0, 0}}})) == 0.0, "identical series not 0");
  const double gap = 2.75;
  const double e = compute_error(aligned({{{5 + gap, 5}, {gap, 0}, {9 + gap, 9}}}));
  o.require(std::abs(e - gap) < 1e-12, "constant gap gave " + num(e));
  SimConfig conf;
  conf.w2 = {1.0, 1.0};
  const double two = compute_error(aligned({{{3, 0}, {13, 10}}, {{4, 0}, {0, 4}}}), conf);
  o.require(std::abs(two - 3.5) < 1e-12, "(3,4) gap fixture gave " + num(two));
  return o;
}

Outcome r0_interpolation() {
  Outcome o;
  const std::vector<double> expected{1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6, 1.7, 1.8, 1.9, 2.0};
  o.require(interpolate_r0(1, 2, 11) == expected, "(1, 2, 11) schedule");

  // 28 recent days with a mixed demographic, preceded by older A00-A04 cases that must not be copied.
  const Date start = make_date(2020, 9, 1);
  const std::pair<const char*, int> groups[] = {{"A15-A34", 25}, {"A35-A59", 47}, {"A60-A79", 70}, {"A80+", 90}};
  std::vector<ArrivalRecord> h;
  for (int d = 0; d < 10; ++d)
    for (int i = 0; i < 5; ++i) h.push_back({"A00-A04", Gender::female, start + std::chrono::days{d}, 5, 5374, d, 2});
  int k = 0;
  for (int d = 10; d < 38; ++d)
    for (int i = 0; i < 400; ++i, ++k) {
      const auto& [g, age] = groups[k % 4];
      h.push_back({g, k % 3 == 0 ? Gender::male : Gender::female, start + std::chrono::days{d}, 5, 5374, d, age});
    }
  const Date last = start + std::chrono::days{37};
  ScenarioSpec spec;
  spec.end_date = last + std::chrono::days{30};
  const auto res = extend_arrivals(h, spec, 5);
  o.require(res.history_end == last, "history end");
  std::map<std::pair<std::string, Gender>, double> window, synthetic;
  double window_n = 0.0, ext = 0.0;
  for (const auto& a : h)
    if (a.day >= last - std::chrono::days{27}) window[{a.altersgruppe, a.geschlecht}] += 1, window_n += 1;
  std::map<Date, long> per_day;
  for (std::size_t i = res.history_size; i < res.arrivals.size(); ++i) {
    const auto& a = res.arrivals[i];
    o.require(a.day > last && a.day <= spec.end_date, "synthetic arrival outside the extension window");
    o.require(a.time == days_between(start, a.day), "time not continuous with history");
    o.require(a.altersgruppe != "A00-A04", "demographic copied from outside the window");
    ++per_day[a.day];
    synthetic[{a.altersgruppe, a.geschlecht}] += 1;
    ext += 1;
  }
  for (std::size_t t = 0; t < res.counts.size(); ++t)
    o.require(per_day[last + std::chrono::days{static_cast<int>(t) + 1}] == res.counts[t], "per-day count");
  std::set<std::pair<std::string, Gender>> keys;
  for (const auto& [key, v] : window) keys.insert(key);
  for (const auto& [key, v] : synthetic) keys.insert(key);
  double tv = 0.0;
  for (const auto& key : keys) tv += std::abs(window[key] / window_n - synthetic[key] / ext);
  o.require(tv / 2.0 < 0.05, "demographic total variation " + num(tv / 2.0));
  return o;
}

// Arrivals with a rising daily count and mixed demographics; field series simulated from `truth`.
CalibrationData synthetic_calibration(const ParameterSet& truth) {
  const Date start = make_date(2020, 9, 1);
  const std::pair<const char*, int> groups[] = {{"A15-A34", 25}, {"A35-A59", 47}, {"A60-A79", 70}, {"A80+", 90}};
  CalibrationData data;
  int k = 0;
  for (int d = 0; d < 90; ++d) {
    const int per_day = 40 + d * 3;
    for (int i = 0; i < per_day; ++i, ++k) {
      const auto& [g, age] = groups[k % 4];
      data.arrivals.push_back(
          {g, k % 2 == 0 ? Gender::male : Gender::female, start + std::chrono::days{d}, 5, 5374, d, age});
    }
  }
  SimConfig conf;
  conf.seed = 1001;
  conf.sim_repeats = 4;
  const auto usage = simulate_usage(data.arrivals, truth, conf);
  for (std::size_t i = 0; i < usage.size(); ++i)
    data.field.push_back(
        {usage.at(i, Resource::intensiveBed), usage.at(i, Resource::intensiveBedVentilation), usage.date_at(i)});
  return data;
}

Outcome optimization_improvement() {
  Outcome o;
  const auto t0 = Clock::now();
  auto truth = default_parameters();
  truth[Param::RiskFactorA] = 0.045;
  truth[Param::AmntDaysIntensiveToAftercare] = 14.0;
  truth[Param::FactorPatientsHospitalToIntensive] = 0.15;
  truth.validate();
  const auto data = synthetic_calibration(truth);

  int strictly_lower = 0, not_worse = 0;
  std::string ys;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SimConfig conf;
    conf.seed = seed;
    OptimizerOptions opt;
    opt.budget = 60;
    opt.initial_design_size = 10;
    opt.seed = seed;
    const auto r = calibrate(data, conf, default_bounds(), opt);
    if (r.best_error <= r.default_error) ++not_worse;
    if (r.best_error < r.default_error) ++strictly_lower;
    ys += " " + num(r.default_error) + "->" + num(r.best_error);
  }
  std::cout << "  criterion 9 errors (default->best):" << ys << '\n';
  o.require(not_worse == 10, std::to_string(not_worse) + "/10 runs not worse than default");
  o.require(strictly_lower >= 8, std::to_string(strictly_lower) + "/10 runs strictly lower");
  o.require(seconds_since(t0) < 600.0, "slower than 10 min");
  o.detail = o.pass ? std::to_string(strictly_lower) + "/10 strictly lower" : o.detail;
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in{p, std::ios::binary};
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  Outcome o;
  const fs::path dir = fs::temp_directory_path() / "wardsim-acceptance-determinism";
  fs::remove_all(dir);
  const std::string cases = std::string{WARDSIM_FIXTURE_DIR} + "/cases_sample.csv";
  for (const char* sub : {"a", "b"}) {
    const std::string out = (dir / sub).string();
    const char* argv[] = {"wardsim", "simulate", "--cases", cases.c_str(), "--seed", "2024", "--repeats", "3",
                          "--out", out.c_str()};
    std::ostringstream sink;
    const int code = cli::run(10, argv, sink, sink);
    o.require(code == 0, "simulate exited " + std::to_string(code));
  }
  const auto a = slurp(dir / "a" / "usage.csv");
  o.require(!a.empty() && a == slurp(dir / "b" / "usage.csv"), "simulate output differs between runs");
  fs::remove_all(dir);

  std::vector<RiskArrival> arrivals;
  for (int i = 0; i < 2000; ++i) arrivals.push_back({static_cast<double>(i % 40), 0.1});
  SimConfig seq;
  seq.sim_repeats = 8;
  seq.seed = 77;
  SimConfig par = seq;
  par.parallel = true;
  par.perc_cores = 1.0;
  const auto p = default_parameters();
  o.require(run_simulation(arrivals, p, seq) == run_simulation(arrivals, p, par), "parallel differs from sequential");
  std::vector<std::vector<StayInterval>> one(8), four(8);
  parallel_for(8, 1, [&](std::size_t i) { one[i] = simulate_once(arrivals, p, seq, hash64(seq.seed, i)); });
  parallel_for(8, 4, [&](std::size_t i) { four[i] = simulate_once(arrivals, p, seq, hash64(seq.seed, i)); });
  o.require(one == four, "replicates differ between 1 and 4 workers");
  return o;
}

Outcome sensitivity_recovery() {
  Outcome o;
  const std::size_t dims = 6;
  const Bounds unit{std::vector<double>(dims, 0.0), std::vector<double>(dims, 1.0)};
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto x = latin_hypercube(200, unit, seed);
    std::mt19937_64 rng{seed + 100};
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<double> y;
    for (const auto& row : x) y.push_back((row[2] > 0.5 ? 1.0 : 0.0) + 0.1 * noise(rng));
    const auto imp = RegressionTree::fit(x, y).variable_importance();
    if (std::max_element(imp.begin(), imp.end()) - imp.begin() == 2) ++hits;
  }
  o.require(hits >= 19, "x3 ranked first in " + std::to_string(hits) + "/20 seeds");

  std::mt19937_64 rng{31};
  const auto x = latin_hypercube(100, Bounds{{0.0, 0.0}, {1.0, 1.0}}, 31);
  std::normal_distribution<double> eps(0.0, 1e-3);
  std::vector<double> y;
  for (const auto& row : x) y.push_back(2.0 * row[0] + eps(rng));
  const auto screen = fit_linear_screen(x, y, 1);
  const auto term = std::find_if(screen.terms.begin(), screen.terms.end(),
                                 [](const ScreeningTerm& t) { return t.variable == 0; });
  o.require(term != screen.terms.end(), "x1 not selected");
  if (term != screen.terms.end()) o.require(std::abs(term->coefficient - 2.0) <= 1e-2, "slope " + num(term->coefficient));
  return o;
}

}  // namespace

int main() {
  int failures = 0;
  failures += report(1, "transition matrix equals printed matrix", transition_matrix);
  failures += report(2, "risk fixture", risk_values);
  failures += report(3, "parameter names and vector round trip", parameter_names_roundtrip);
  failures += report(4, "daily max equals brute-force oracle on 500 fixtures", daily_max_oracle);
  failures += report(5, "truncated duration sampler", duration_sampler);
  failures += report(6, "absorption fractions match matrix-power oracle", chain_consistency);
  failures += report(7, "RMSE contract", rmse_contract);
  failures += report(8, "R0 interpolation and scenario extension", r0_interpolation);
  failures += report(9, "optimization improves on defaults", optimization_improvement);
  failures += report(10, "determinism", determinism);
  failures += report(11, "sensitivity recovery", sensitivity_recovery);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
