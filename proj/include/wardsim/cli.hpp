#pragma once

// Command-line front end: simulate | evaluate | optimize | scenario |
// sensitivity | serve. A JSON --config file supplies defaults; explicit
// flags win.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "wardsim/common.hpp"
#include "wardsim/engine.hpp"
#include "wardsim/evaluate.hpp"
#include "wardsim/ingest.hpp"
#include "wardsim/model.hpp"
#include "wardsim/optimize.hpp"
#include "wardsim/scenario.hpp"
#include "wardsim/service.hpp"
#include "wardsim/workflow.hpp"

namespace wardsim::cli {

namespace fs = std::filesystem;

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kFormatError = 2,
  kEmptyRegion = 3,
  kBudgetTooSmall = 4,
  kScenarioWindow = 5,
  kUsage = 64,
};

/// Input problems that map to exit code 2.
class InputError : public Error {
public:
  using Error::Error;
};

struct Options {
  std::string cases;
  std::string icu;
  int region = 0;
  std::string start;
  std::string end;
  std::string params;
  std::uint64_t seed = 123;
  int repeats = 1;
  std::size_t budget = 60;
  std::size_t design_size = 10;
  double r0_start = 1.0;
  double r0_end = 1.0;
  double generation_interval = 4.0;
  std::string end_date;
  std::string out = "out";
  std::string format = "csv";
  std::string config;
  std::string run_id;
  bool resume = false;
  bool list_runs = false;
  std::string history;
  std::vector<std::size_t> slice;
  std::size_t grid = 20;
  std::size_t max_terms = 10;
  int port = 8080;
  std::string host = "127.0.0.1";
  std::string data_dir;
  // Only settable from the config file.
  nlohmann::json sim;
  nlohmann::json bounds;
};

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream in{path, std::ios::binary};
  if (!in) throw InputError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline nlohmann::json read_json_file(const std::string& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw InputError("'" + path + "' is not valid JSON: " + e.what());
  }
}

/// Fills every option the user did not pass explicitly from the config object.
inline void merge_config(const CLI::App& app, const nlohmann::json& cfg, Options& o) {
  auto take = [&](const char* flag, const char* key, auto& field) {
    if (!cfg.contains(key)) return;
    const CLI::Option* opt = app.get_option_no_throw(flag);
    if (opt && opt->count() > 0) return;
    cfg.at(key).get_to(field);
  };
  take("--cases", "cases", o.cases);
  take("--icu", "icu", o.icu);
  take("--region", "region", o.region);
  take("--start", "start", o.start);
  take("--end", "end", o.end);
  take("--params", "params", o.params);
  take("--seed", "seed", o.seed);
  take("--repeats", "repeats", o.repeats);
  take("--budget", "budget", o.budget);
  take("--design-size", "designSize", o.design_size);
  take("--r0-start", "r0Start", o.r0_start);
  take("--r0-end", "r0End", o.r0_end);
  take("--generation-interval", "generationInterval", o.generation_interval);
  take("--end-date", "endDate", o.end_date);
  take("--out", "out", o.out);
  take("--format", "format", o.format);
  take("--history", "history", o.history);
  take("--grid", "grid", o.grid);
  take("--max-terms", "maxTerms", o.max_terms);
  if (cfg.contains("sim")) {
    o.sim = cfg.at("sim");
    // Top-level keys and flags take precedence over the nested sim block.
    auto from_sim = [&](const char* flag, const char* top_key, const char* sim_key, auto& field) {
      const CLI::Option* opt = app.get_option_no_throw(flag);
      if (opt && opt->count() > 0) return;
      if (o.sim.contains(sim_key) && !cfg.contains(top_key)) o.sim.at(sim_key).get_to(field);
    };
    from_sim("--seed", "seed", "seed", o.seed);
    from_sim("--repeats", "repeats", "simRepeats", o.repeats);
  }
  if (cfg.contains("bounds")) o.bounds = cfg.at("bounds");
}

inline DataWindow window_of(const Options& o) {
  DataWindow w;
  w.region.code = o.region;
  if (!o.start.empty()) w.start = parse_date(o.start);
  if (!o.end.empty()) w.end = parse_date(o.end);
  return w;
}

inline SimConfig config_of(const Options& o) {
  SimConfig conf;
  if (!o.sim.is_null()) from_json(o.sim, conf);
  conf.seed = o.seed;
  conf.sim_repeats = o.repeats;
  conf.validate();
  return conf;
}

inline ParameterSet params_of(const Options& o) {
  if (o.params.empty()) return default_parameters();
  auto p = read_json_file(o.params).get<ParameterSet>();
  p.validate();
  return p;
}

inline std::vector<ArrivalRecord> load_arrivals(const Options& o, std::ostream& err) {
  if (o.cases.empty()) throw InputError("--cases is required");
  std::ifstream in{o.cases, std::ios::binary};
  if (!in) throw InputError("cannot open '" + o.cases + "'");
  auto parsed = parse_case_csv(in);
  std::vector<std::string> warnings = parsed.warnings;
  auto arrivals = select_arrivals(parsed.rows, window_of(o), &warnings);
  for (const auto& w : warnings) err << "warning: " << w << '\n';
  return arrivals;
}

inline std::vector<FieldRecord> load_field(const Options& o, std::ostream& err) {
  if (o.icu.empty()) return {};
  std::ifstream in{o.icu, std::ios::binary};
  if (!in) throw InputError("cannot open '" + o.icu + "'");
  auto parsed = parse_icu_csv(in);
  for (const auto& w : parsed.warnings) err << "warning: " << w << '\n';
  return select_field(parsed.rows, window_of(o));
}

inline fs::path prepare_out(const Options& o) {
  const fs::path dir{o.out};
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create output directory '" + o.out + "': " + ec.message());
  return dir;
}

inline void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out{file, std::ios::binary};
  out << text;
  if (!out) throw Error("cannot write '" + file.string() + "'");
}

inline void write_usage(const fs::path& dir, const DailyUsageSeries& usage, const std::string& format,
                        const std::string& stem = "usage") {
  if (format == "json") {
    write_text(dir / (stem + ".json"), nlohmann::json(usage).dump(2) + "\n");
  } else {
    std::ostringstream os;
    write_usage_csv(os, usage);
    write_text(dir / (stem + ".csv"), os.str());
  }
}

inline int cmd_simulate(const Options& o, std::ostream& out, std::ostream& err, bool require_field) {
  const auto conf = config_of(o);
  const auto para = params_of(o);
  const auto arrivals = load_arrivals(o, err);
  const auto field = load_field(o, err);
  if (require_field && field.empty()) throw InputError("--icu is required");
  const auto result = simulate_window(arrivals, field, para, conf, window_of(o));
  const auto dir = prepare_out(o);
  write_usage(dir, result.usage, o.format);
  out << "arrivals " << arrivals.size() << ", days " << result.usage.size() << '\n';
  if (result.error) {
    write_text(dir / "error.json", nlohmann::json(*result.error).dump(2) + "\n");
    out << "error " << format_number(result.error->error) << '\n';
  }
  return kOk;
}

inline int list_runs(const Options& o, std::ostream& out) {
  const fs::path runs = fs::path{o.out} / "runs";
  if (!fs::exists(runs)) return kOk;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(runs))
    if (e.path().extension() == ".jsonl") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::ifstream in{f};
    const auto history = read_history_jsonl(in);
    out << f.stem().string() << '\t' << history.size() << " evaluations";
    if (!history.empty()) out << "\tbest " << format_number(history[best_index(history)].y);
    out << '\n';
  }
  return kOk;
}

inline int cmd_optimize(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.list_runs) return list_runs(o, out);
  if (o.budget < o.design_size) {
    err << "error: budget " << o.budget << " is smaller than the initial design size " << o.design_size << '\n';
    return kBudgetTooSmall;
  }
  if (o.design_size < 10) throw InputError("--design-size must be at least 10");
  const auto conf = config_of(o);
  const Bounds bounds = o.bounds.is_null() ? default_bounds() : bounds_from_json(o.bounds);
  CalibrationData data{load_arrivals(o, err), load_field(o, err)};
  if (data.field.empty()) throw InputError("--icu is required");

  const auto runs = prepare_out(o) / "runs";
  fs::create_directories(runs);
  const std::string run_id = o.run_id.empty() ? "run-" + std::to_string(o.seed) : o.run_id;
  const auto history_file = runs / (run_id + ".jsonl");
  std::vector<EvalRecord> prior;
  if (o.resume && fs::exists(history_file)) {
    std::ifstream in{history_file};
    prior = read_history_jsonl(in);
    err << "resuming " << run_id << " after " << prior.size() << " evaluations\n";
  }
  std::ofstream log{history_file, o.resume ? std::ios::app : std::ios::trunc};
  if (!log) throw Error("cannot write '" + history_file.string() + "'");

  OptimizerOptions opt;
  opt.budget = o.budget;
  opt.initial_design_size = o.design_size;
  opt.seed = o.seed;
  opt.on_evaluation = [&](const EvalRecord& rec) { log << nlohmann::json(rec).dump() << '\n' << std::flush; };
  const auto result = calibrate(data, conf, bounds, opt, std::move(prior));

  write_text(runs / (run_id + ".best.json"), nlohmann::json(result.best).dump(2) + "\n");
  out << "run " << run_id << ": " << result.run.history.size() << " evaluations\n";
  out << "default error " << format_number(result.default_error) << '\n';
  out << "best error " << format_number(result.best_error) << " (evaluation " << result.run.best_index + 1 << ")\n";
  return kOk;
}

inline int cmd_scenario(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.end_date.empty()) throw InputError("--end-date is required");
  const auto conf = config_of(o);
  const auto para = params_of(o);
  ScenarioSpec spec;
  spec.end_date = parse_date(o.end_date);
  spec.r0_start = o.r0_start;
  spec.r0_end = o.r0_end;
  spec.generation_interval = o.generation_interval;
  try {
    spec.validate();
  } catch (const ScenarioError& e) {
    throw InputError(e.what());
  }
  const auto history = load_arrivals(o, err);
  Date last = history.front().day;
  for (const auto& a : history) last = std::max(last, a.day);
  if (spec.end_date <= last) {
    err << "error: end date " << format_date(spec.end_date) << " must be after the history end " << format_date(last)
        << '\n';
    return kScenarioWindow;
  }
  const auto result = run_scenario(history, spec, para, conf);
  const auto dir = prepare_out(o);
  std::ostringstream arrivals;
  write_arrivals_csv(arrivals, result.scenario.arrivals);
  write_text(dir / "arrivals.csv", arrivals.str());
  write_text(dir / "scenario.json", scenario_summary_json(result.scenario).dump(2) + "\n");
  write_usage(dir, result.usage, o.format);
  out << "r0";
  for (double r : result.scenario.r0) out << ' ' << format_number(r);
  out << "\nsynthetic arrivals " << result.scenario.arrivals.size() - result.scenario.history_size << '\n';
  return kOk;
}

inline int cmd_sensitivity(const Options& o, std::ostream& out, std::ostream&) {
  if (o.history.empty()) throw InputError("--history is required");
  std::ifstream in{o.history};
  if (!in) throw InputError("cannot open history '" + o.history + "'");
  const auto history = read_history_jsonl(in);
  if (history.empty()) throw InputError("history '" + o.history + "' has no records");

  SensitivityOptions opt;
  opt.max_terms = o.max_terms;
  opt.grid = o.grid;
  opt.seed = o.seed;
  if (!o.slice.empty()) {
    if (o.slice.size() != 2 || o.slice[0] < 1 || o.slice[1] < 1)
      throw InputError("--slice needs two 1-based parameter indices");
    opt.slice = std::pair{o.slice[0] - 1, o.slice[1] - 1};
  }
  const auto result = analyze_history(history, opt);
  const auto dir = prepare_out(o);
  write_text(dir / "importance.json", importance_json(result.importance).dump(2) + "\n");
  write_text(dir / "screening.json", nlohmann::json(result.screening).dump(2) + "\n");
  if (result.slice) {
    std::ostringstream os;
    write_slice_csv(os, *result.slice);
    write_text(dir / "slice.csv", os.str());
  }
  std::size_t top = 0;
  for (std::size_t k = 1; k < result.importance.size(); ++k)
    if (result.importance[k] > result.importance[top]) top = k;
  out << "leaves " << result.tree.leaf_count() << '\n';
  if (result.tree.leaf_count() > 1)
    out << "top variable " << top + 1
        << (result.importance.size() == kParamCount ? " (" + std::string{kParamNames[top]} + ")" : "") << '\n';
  return kOk;
}

inline int cmd_serve(const Options& o, std::ostream&, std::ostream& err) {
  service::ServiceOptions so = service::options_from_env();
  if (!o.data_dir.empty()) so.data_dir = o.data_dir;
  if (!o.sim.is_null()) so.perc_cores = config_of(o).perc_cores;
  return service::serve(so, o.host, service::port_from_env(o.port), err);
}

}  // namespace detail

/// Runs the CLI; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Hospital resource planning simulator", "wardsim"};
  app.require_subcommand(1);
  Options o;

  auto data_flags = [&](CLI::App* sub) {
    sub->add_option("--cases", o.cases, "Case-level CSV");
    sub->add_option("--icu", o.icu, "ICU occupancy CSV");
    sub->add_option("--region", o.region, "0 country, 1-16 state, >=100 county");
    sub->add_option("--start", o.start, "First day (YYYY-MM-DD)");
    sub->add_option("--end", o.end, "Last day (YYYY-MM-DD)");
  };
  auto sim_flags = [&](CLI::App* sub) {
    sub->add_option("--params", o.params, "Parameter set JSON");
    sub->add_option("--repeats", o.repeats, "Replications per simulation");
    sub->add_option("--format", o.format, "Series output format")->check(CLI::IsMember({"csv", "json"}));
  };
  auto common = [&](CLI::App* sub) {
    sub->add_option("--seed", o.seed, "Random seed");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--config", o.config, "JSON config; explicit flags win");
  };

  auto* simulate = app.add_subcommand("simulate", "Simulate daily resource usage");
  data_flags(simulate);
  sim_flags(simulate);
  common(simulate);

  auto* evaluate = app.add_subcommand("evaluate", "Simulate and score against ICU field data");
  data_flags(evaluate);
  sim_flags(evaluate);
  common(evaluate);

  auto* optimize = app.add_subcommand("optimize", "Calibrate parameters against ICU field data");
  data_flags(optimize);
  common(optimize);
  optimize->add_option("--repeats", o.repeats, "Replications per simulation");
  optimize->add_option("--budget", o.budget, "Total evaluations");
  optimize->add_option("--design-size", o.design_size, "Initial design size (>= 10)");
  optimize->add_option("--run-id", o.run_id, "Run name (default run-<seed>)");
  optimize->add_flag("--resume", o.resume, "Continue an existing run");
  optimize->add_flag("--list-runs", o.list_runs, "List runs in the output directory");

  auto* scenario = app.add_subcommand("scenario", "Extend arrivals under an R0 schedule and simulate");
  data_flags(scenario);
  sim_flags(scenario);
  common(scenario);
  scenario->add_option("--r0-start", o.r0_start, "R0 on the first future day");
  scenario->add_option("--r0-end", o.r0_end, "R0 on the end date");
  scenario->add_option("--end-date", o.end_date, "Last future day (YYYY-MM-DD)");
  scenario->add_option("--generation-interval", o.generation_interval, "Days per generation");

  auto* sensitivity = app.add_subcommand("sensitivity", "Analyze an optimization history");
  common(sensitivity);
  sensitivity->add_option("--history", o.history, "Run history (JSON lines)");
  sensitivity->add_option("--slice", o.slice, "Two 1-based parameter indices")->expected(2);
  sensitivity->add_option("--grid", o.grid, "Slice grid points per axis");
  sensitivity->add_option("--max-terms", o.max_terms, "Screening terms");

  auto* serve = app.add_subcommand("serve", "Run the HTTP job service");
  serve->add_option("--port", o.port, "Port (WARDSIM_PORT overrides)");
  serve->add_option("--host", o.host, "Bind address");
  serve->add_option("--data-dir", o.data_dir, "Storage directory (WARDSIM_DATA_DIR overrides)");
  serve->add_option("--config", o.config, "JSON config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    // Help for the subcommand the user attempted, if any.
    return kUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    if (!o.config.empty()) detail::merge_config(*sub, detail::read_json_file(o.config), o);
    if (sub == simulate) return detail::cmd_simulate(o, out, err, false);
    if (sub == evaluate) return detail::cmd_simulate(o, out, err, true);
    if (sub == optimize) return detail::cmd_optimize(o, out, err);
    if (sub == scenario) return detail::cmd_scenario(o, out, err);
    if (sub == sensitivity) return detail::cmd_sensitivity(o, out, err);
    return detail::cmd_serve(o, out, err);
  } catch (const EmptyDatasetError& e) {
    err << "error: " << e.what() << '\n';
    return kEmptyRegion;
  } catch (const OptimizeError& e) {
    err << "error: " << e.what() << '\n';
    return kBudgetTooSmall;
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kFormatError;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kFormatError;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kFormatError;
  } catch (const AlignmentError& e) {
    err << "error: " << e.what() << '\n';
    return kFormatError;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFormatError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace wardsim::cli
