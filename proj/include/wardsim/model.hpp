#pragma once

// Care-graph model: the 29 simulation parameters, the ten patient states,
// routing/duration matrices, individual hospitalization risk and the
// truncated Gamma length-of-stay sampler.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "wardsim/common.hpp"

namespace wardsim {

enum class State : std::size_t { infec, out, hosp, normal, intens, vent, intafter, aftercare, death, healthy };

inline constexpr std::size_t kStateCount = 10;

inline constexpr std::array<std::string_view, kStateCount> kStateNames{
    "infec", "out", "hosp", "normal", "intens", "vent", "intafter", "aftercare", "death", "healthy"};

constexpr std::size_t index(State s) noexcept { return static_cast<std::size_t>(s); }
constexpr std::string_view to_string(State s) noexcept { return kStateNames[index(s)]; }
constexpr bool is_absorbing(State s) noexcept {
  return s == State::out || s == State::death || s == State::healthy;
}

enum class Param : std::size_t {
  AmntDaysInfectedToHospital,
  AmntDaysNormalToHealthy,
  AmntDaysNormalToIntensive,
  AmntDaysNormalToVentilation,
  AmntDaysNormalToDeath,
  AmntDaysIntensiveToAftercare,
  AmntDaysIntensiveToVentilation,
  AmntDaysIntensiveToDeath,
  AmntDaysVentilationToIntensiveAfter,
  AmntDaysVentilationToDeath,
  AmntDaysIntensiveAfterToAftercare,
  AmntDaysIntensiveAfterToDeath,
  GammaShapeParameter,
  FactorPatientsInfectedToHospital,
  FactorPatientsHospitalToIntensive,
  FactorPatientsHospitalToVentilation,
  FactorPatientsNormalToIntensive,
  FactorPatientsNormalToVentilation,
  FactorPatientsNormalToDeath,
  FactorPatientsIntensiveToVentilation,
  FactorPatientsIntensiveToDeath,
  FactorPatientsVentilationToIntensiveAfter,
  FactorPatientsIntensiveAfterToDeath,
  AmntDaysAftercareToHealthy,
  RiskFactorA,
  RiskFactorB,
  RiskMale,
  AmntDaysIntensiveAfterToHealthy,
  FactorPatientsIntensiveAfterToHealthy,
};

inline constexpr std::size_t kParamCount = 29;

inline constexpr std::array<std::string_view, kParamCount> kParamNames{
    "AmntDaysInfectedToHospital",
    "AmntDaysNormalToHealthy",
    "AmntDaysNormalToIntensive",
    "AmntDaysNormalToVentilation",
    "AmntDaysNormalToDeath",
    "AmntDaysIntensiveToAftercare",
    "AmntDaysIntensiveToVentilation",
    "AmntDaysIntensiveToDeath",
    "AmntDaysVentilationToIntensiveAfter",
    "AmntDaysVentilationToDeath",
    "AmntDaysIntensiveAfterToAftercare",
    "AmntDaysIntensiveAfterToDeath",
    "GammaShapeParameter",
    "FactorPatientsInfectedToHospital",
    "FactorPatientsHospitalToIntensive",
    "FactorPatientsHospitalToVentilation",
    "FactorPatientsNormalToIntensive",
    "FactorPatientsNormalToVentilation",
    "FactorPatientsNormalToDeath",
    "FactorPatientsIntensiveToVentilation",
    "FactorPatientsIntensiveToDeath",
    "FactorPatientsVentilationToIntensiveAfter",
    "FactorPatientsIntensiveAfterToDeath",
    "AmntDaysAftercareToHealthy",
    "RiskFactorA",
    "RiskFactorB",
    "RiskMale",
    "AmntDaysIntensiveAfterToHealthy",
    "FactorPatientsIntensiveAfterToHealthy",
};

constexpr std::size_t index(Param p) noexcept { return static_cast<std::size_t>(p); }
constexpr std::string_view to_string(Param p) noexcept { return kParamNames[index(p)]; }

inline std::optional<Param> param_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kParamCount; ++i)
    if (kParamNames[i] == name) return static_cast<Param>(i);
  return std::nullopt;
}

constexpr bool is_duration(Param p) noexcept { return to_string(p).starts_with("AmntDays"); }
constexpr bool is_factor(Param p) noexcept { return to_string(p).starts_with("FactorPatients"); }

/// Explicit routing factors per source state; their sum may not exceed 1.
struct FactorGroup {
  State source;
  std::array<Param, 3> factors;
  std::size_t count;
};

inline constexpr std::array<FactorGroup, 4> kFactorGroups{{
    {State::hosp, {Param::FactorPatientsHospitalToIntensive, Param::FactorPatientsHospitalToVentilation}, 2},
    {State::normal,
     {Param::FactorPatientsNormalToIntensive, Param::FactorPatientsNormalToVentilation,
      Param::FactorPatientsNormalToDeath},
     3},
    {State::intens, {Param::FactorPatientsIntensiveToVentilation, Param::FactorPatientsIntensiveToDeath}, 2},
    {State::intafter, {Param::FactorPatientsIntensiveAfterToDeath, Param::FactorPatientsIntensiveAfterToHealthy}, 2},
}};

inline constexpr double kFactorSumTolerance = 1e-12;

class ParameterSet {
public:
  ParameterSet() = default;

  double operator[](Param p) const noexcept { return values_[index(p)]; }
  double& operator[](Param p) noexcept { return values_[index(p)]; }

  std::span<const double, kParamCount> values() const noexcept { return values_; }

  std::vector<double> to_vector() const { return {values_.begin(), values_.end()}; }

  static ParameterSet from_vector(std::span<const double> x) {
    if (x.size() != kParamCount)
      throw ValidationError("parameter vector needs " + std::to_string(kParamCount) + " values, got " +
                            std::to_string(x.size()));
    ParameterSet p;
    std::copy(x.begin(), x.end(), p.values_.begin());
    return p;
  }

  double factor_sum(const FactorGroup& g) const noexcept {
    double sum = 0.0;
    for (std::size_t k = 0; k < g.count; ++k) sum += (*this)[g.factors[k]];
    return sum;
  }

  /// Throws ValidationError describing the first violated constraint.
  void validate() const {
    for (std::size_t i = 0; i < kParamCount; ++i) {
      const auto p = static_cast<Param>(i);
      const double v = values_[i];
      const std::string name{to_string(p)};
      if (!std::isfinite(v)) throw ValidationError(name + " is not finite");
      if (is_duration(p) && !(v > 0.0)) throw ValidationError(name + " must be > 0");
      if (is_factor(p) && (v < 0.0 || v > 1.0)) throw ValidationError(name + " must lie in [0,1]");
    }
    if (!((*this)[Param::GammaShapeParameter] > 0.0)) throw ValidationError("GammaShapeParameter must be > 0");
    if (!((*this)[Param::RiskFactorA] > 0.0)) throw ValidationError("RiskFactorA must be > 0");
    if (!((*this)[Param::RiskFactorB] > 0.0)) throw ValidationError("RiskFactorB must be > 0");
    if (!((*this)[Param::RiskMale] >= 1.0)) throw ValidationError("RiskMale must be >= 1");
    validate_factor_sums();
  }

  void validate_factor_sums() const {
    for (const auto& g : kFactorGroups)
      if (factor_sum(g) > 1.0 + kFactorSumTolerance)
        throw ValidationError("routing factors out of state '" + std::string{to_string(g.source)} + "' sum to " +
                              format_number(factor_sum(g)) + " > 1");
  }

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

private:
  std::array<double, kParamCount> values_{};
};

/// Expert-elicited default parameter set. RiskFactorA carries full precision
/// (it displays as 0.0205 at three significant digits).
inline ParameterSet default_parameters() {
  static constexpr std::array<double, kParamCount> defaults{
      9.5,  10.0, 5.0, 3.63, 5.0,   7.0,   4.0,        5.0,  30.0, 20.0, 3.0,  4.0, 1.0, 0.1, 0.09,
      0.01, 0.1,  0.001, 0.1, 0.3, 0.1, 0.7, 1e-5, 3.0, 0.02048948, 0.01, 1.5, 3.0, 0.67};
  return ParameterSet::from_vector(defaults);
}

/// 1-based canonical index -> parameter name.
inline std::vector<std::string> parameter_names(std::span<const int> indices) {
  std::vector<std::string> names;
  names.reserve(indices.size());
  for (int i : indices) {
    if (i < 1 || i > static_cast<int>(kParamCount))
      throw std::out_of_range("parameter index " + std::to_string(i) + " outside 1.." + std::to_string(kParamCount));
    names.emplace_back(kParamNames[static_cast<std::size_t>(i - 1)]);
  }
  return names;
}

inline void to_json(nlohmann::json& j, const ParameterSet& p) {
  j = nlohmann::json::object();
  for (std::size_t i = 0; i < kParamCount; ++i) j[std::string{kParamNames[i]}] = p.values()[i];
}

/// Accepts either the flat name->value object (all 29 keys required) or a 29-element array.
inline void from_json(const nlohmann::json& j, ParameterSet& p) {
  if (j.is_array()) {
    p = ParameterSet::from_vector(j.get<std::vector<double>>());
    return;
  }
  if (!j.is_object()) throw ValidationError("parameter document must be an object or array");
  for (std::size_t i = 0; i < kParamCount; ++i) {
    const std::string key{kParamNames[i]};
    auto it = j.find(key);
    if (it == j.end() || !it->is_number()) throw ValidationError("parameter document lacks numeric '" + key + "'");
    p[static_cast<Param>(i)] = it->get<double>();
  }
  for (const auto& [key, value] : j.items())
    if (!param_from_name(key)) throw ValidationError("unknown parameter '" + key + "'");
}

using StateMatrix = std::array<std::array<double, kStateCount>, kStateCount>;

/// Row-stochastic routing probabilities; rows are source states.
struct TransitionMatrix {
  StateMatrix p{};
  double operator()(State from, State to) const noexcept { return p[index(from)][index(to)]; }
  double& operator()(State from, State to) noexcept { return p[index(from)][index(to)]; }
};

/// Mean stay (days) in the row state before moving to the column state.
struct DurationMatrix {
  StateMatrix d{};
  double operator()(State from, State to) const noexcept { return d[index(from)][index(to)]; }
  double& operator()(State from, State to) noexcept { return d[index(from)][index(to)]; }
};

namespace detail {
inline double complement(double explicit_sum) { return std::max(0.0, 1.0 - explicit_sum); }
}  // namespace detail

inline TransitionMatrix build_transition_matrix(const ParameterSet& para) {
  para.validate_factor_sums();
  using enum State;
  TransitionMatrix m;
  const auto f = [&](Param p) { return para[p]; };

  m(infec, hosp) = f(Param::FactorPatientsInfectedToHospital);
  m(infec, out) = detail::complement(m(infec, hosp));

  m(hosp, intens) = f(Param::FactorPatientsHospitalToIntensive);
  m(hosp, vent) = f(Param::FactorPatientsHospitalToVentilation);
  m(hosp, normal) = detail::complement(m(hosp, intens) + m(hosp, vent));

  m(normal, intens) = f(Param::FactorPatientsNormalToIntensive);
  m(normal, vent) = f(Param::FactorPatientsNormalToVentilation);
  m(normal, death) = f(Param::FactorPatientsNormalToDeath);
  m(normal, healthy) = detail::complement(m(normal, intens) + m(normal, vent) + m(normal, death));

  m(intens, vent) = f(Param::FactorPatientsIntensiveToVentilation);
  m(intens, death) = f(Param::FactorPatientsIntensiveToDeath);
  m(intens, aftercare) = detail::complement(m(intens, vent) + m(intens, death));

  m(vent, intafter) = f(Param::FactorPatientsVentilationToIntensiveAfter);
  m(vent, death) = detail::complement(m(vent, intafter));

  m(intafter, death) = f(Param::FactorPatientsIntensiveAfterToDeath);
  m(intafter, healthy) = f(Param::FactorPatientsIntensiveAfterToHealthy);
  m(intafter, aftercare) = detail::complement(m(intafter, death) + m(intafter, healthy));

  m(aftercare, healthy) = 1.0;
  m(out, out) = 1.0;
  m(death, death) = 1.0;
  m(healthy, healthy) = 1.0;
  return m;
}

/// Entries whose routing probability is zero are left at zero; hosp is an
/// instantaneous branch and has no durations.
inline DurationMatrix build_duration_matrix(const ParameterSet& para) {
  const TransitionMatrix p = build_transition_matrix(para);
  using enum State;
  DurationMatrix m;
  const auto set = [&](State from, State to, Param days) {
    if (p(from, to) > 0.0) m(from, to) = para[days];
  };
  set(infec, hosp, Param::AmntDaysInfectedToHospital);
  set(normal, healthy, Param::AmntDaysNormalToHealthy);
  set(normal, intens, Param::AmntDaysNormalToIntensive);
  set(normal, vent, Param::AmntDaysNormalToVentilation);
  set(normal, death, Param::AmntDaysNormalToDeath);
  set(intens, aftercare, Param::AmntDaysIntensiveToAftercare);
  set(intens, vent, Param::AmntDaysIntensiveToVentilation);
  set(intens, death, Param::AmntDaysIntensiveToDeath);
  set(vent, intafter, Param::AmntDaysVentilationToIntensiveAfter);
  set(vent, death, Param::AmntDaysVentilationToDeath);
  set(intafter, aftercare, Param::AmntDaysIntensiveAfterToAftercare);
  set(intafter, death, Param::AmntDaysIntensiveAfterToDeath);
  set(intafter, healthy, Param::AmntDaysIntensiveAfterToHealthy);
  set(aftercare, healthy, Param::AmntDaysAftercareToHealthy);
  return m;
}

enum class Gender { male, female };

/// "M" / "W"; anything else has no gender mapping.
inline std::optional<Gender> parse_gender(std::string_view text) {
  if (text == "M") return Gender::male;
  if (text == "W") return Gender::female;
  return std::nullopt;
}

inline std::string_view to_string(Gender g) noexcept { return g == Gender::male ? "M" : "W"; }

/// Hospitalization probability: A * exp(B * age) * (RiskMale for men), clamped to [0,1].
inline double compute_risk(double age, Gender gender, const ParameterSet& para) {
  double risk = para[Param::RiskFactorA] * std::exp(para[Param::RiskFactorB] * age);
  if (gender == Gender::male) risk *= para[Param::RiskMale];
  return std::clamp(risk, 0.0, 1.0);
}

inline constexpr double kDurationTruncation = 3.0;
inline constexpr int kDurationMaxRedraws = 100;

/// Gamma(shape, mean/shape) truncated above at 3*mean by rejection; after
/// 100 rejected redraws the draw is clamped to the bound.
template <class URBG>
double sample_duration(double mean, double shape, URBG& rng) {
  if (!(mean > 0.0)) return 0.0;
  std::gamma_distribution<double> gamma(shape, mean / shape);
  const double cap = kDurationTruncation * mean;
  double draw = gamma(rng);
  for (int redraw = 0; draw > cap && redraw < kDurationMaxRedraws; ++redraw) draw = gamma(rng);
  return std::clamp(draw, 0.0, cap);
}

enum class Resource : std::size_t { bed, intensiveBed, intensiveBedVentilation };

inline constexpr std::size_t kResourceCount = 3;
inline constexpr std::array<std::string_view, kResourceCount> kResourceNames{"bed", "intensiveBed",
                                                                             "intensiveBedVentilation"};

constexpr std::size_t index(Resource r) noexcept { return static_cast<std::size_t>(r); }
constexpr std::string_view to_string(Resource r) noexcept { return kResourceNames[index(r)]; }

inline Resource resource_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kResourceCount; ++i)
    if (kResourceNames[i] == name) return static_cast<Resource>(i);
  throw ValidationError("unknown resource '" + std::string{name} + "'");
}

/// Resource occupied while in a state, if any.
constexpr std::optional<Resource> resource_of(State s) noexcept {
  switch (s) {
    case State::normal:
    case State::aftercare:
      return Resource::bed;
    case State::intens:
    case State::intafter:
      return Resource::intensiveBed;
    case State::vent:
      return Resource::intensiveBedVentilation;
    default:
      return std::nullopt;
  }
}

struct SimConfig {
  std::uint64_t seed = 123;
  int sim_repeats = 1;
  bool parallel = false;
  double perc_cores = 0.5;
  std::vector<Resource> resource_names{Resource::bed, Resource::intensiveBed, Resource::intensiveBedVentilation};
  std::vector<Resource> resource_eval{Resource::intensiveBed, Resource::intensiveBedVentilation};
  bool icu = true;
  int log_level = 0;
  std::vector<double> w2{1.0, 1.0};

  void validate() const {
    if (sim_repeats < 1) throw ValidationError("simRepeats must be >= 1");
    if (!(perc_cores > 0.0 && perc_cores <= 1.0)) throw ValidationError("percCores must lie in (0,1]");
    for (Resource r : resource_eval)
      if (std::find(resource_names.begin(), resource_names.end(), r) == resource_names.end())
        throw ValidationError("ResourceEval entry '" + std::string{to_string(r)} + "' not in ResourceNames");
    if (w2.size() != resource_eval.size()) throw ValidationError("w2 must have one weight per ResourceEval entry");
    double total = 0.0;
    for (double w : w2) {
      if (!(w >= 0.0)) throw ValidationError("w2 weights must be non-negative");
      total += w;
    }
    if (!(total > 0.0)) throw ValidationError("w2 weights must not all be zero");
  }
};

inline void to_json(nlohmann::json& j, const SimConfig& c) {
  auto names = [](const std::vector<Resource>& rs) {
    std::vector<std::string> out;
    for (Resource r : rs) out.emplace_back(to_string(r));
    return out;
  };
  j = {{"seed", c.seed},          {"simRepeats", c.sim_repeats},
       {"parallel", c.parallel},  {"percCores", c.perc_cores},
       {"ResourceNames", names(c.resource_names)}, {"ResourceEval", names(c.resource_eval)},
       {"ICU", c.icu},            {"logLevel", c.log_level},
       {"w2", c.w2}};
}

/// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, SimConfig& c) {
  auto resources = [](const nlohmann::json& arr) {
    std::vector<Resource> out;
    for (const auto& name : arr) out.push_back(resource_from_name(name.get<std::string>()));
    return out;
  };
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("simRepeats")) c.sim_repeats = j.at("simRepeats").get<int>();
  if (j.contains("parallel")) c.parallel = j.at("parallel").get<bool>();
  if (j.contains("percCores")) c.perc_cores = j.at("percCores").get<double>();
  if (j.contains("ResourceNames")) c.resource_names = resources(j.at("ResourceNames"));
  if (j.contains("ResourceEval")) c.resource_eval = resources(j.at("ResourceEval"));
  if (j.contains("ICU")) c.icu = j.at("ICU").get<bool>();
  if (j.contains("logLevel")) c.log_level = j.at("logLevel").get<int>();
  if (j.contains("w2")) c.w2 = j.at("w2").get<std::vector<double>>();
}

}  // namespace wardsim
