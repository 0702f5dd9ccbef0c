#pragma once

// HTTP job service. Datasets are stored under <data dir>/datasets keyed by a
// content hash; jobs run FIFO on a fixed worker pool and their results are
// written to <data dir>/results/<id>.json.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "wardsim/common.hpp"
#include "wardsim/ingest.hpp"
#include "wardsim/model.hpp"
#include "wardsim/optimize.hpp"
#include "wardsim/workflow.hpp"

// After Eigen: <resolv.h> defines a _res macro that breaks Eigen headers.
#include <httplib.h>

namespace wardsim::service {

namespace fs = std::filesystem;
using nlohmann::json;

/// Carries the HTTP status for a rejected request.
class RequestError : public Error {
public:
  RequestError(int status, const std::string& what) : Error(what), status_(status) {}
  int status() const noexcept { return status_; }

private:
  int status_;
};

enum class DatasetKind { cases, icu };

inline std::string_view to_string(DatasetKind k) noexcept { return k == DatasetKind::cases ? "cases" : "icu"; }

inline std::optional<DatasetKind> dataset_kind_from(std::string_view s) {
  if (s == "cases") return DatasetKind::cases;
  if (s == "icu") return DatasetKind::icu;
  return std::nullopt;
}

struct DatasetHandle {
  std::string id;
  DatasetKind kind = DatasetKind::cases;
  std::size_t rows = 0;
  std::optional<Date> first_day;
  std::optional<Date> last_day;
  std::vector<int> states;
  std::size_t counties = 0;
  std::vector<std::string> warnings;
};

inline void to_json(json& j, const DatasetHandle& h) {
  auto day = [](const std::optional<Date>& d) { return d ? json(format_date(*d)) : json(nullptr); };
  j = {{"id", h.id},
       {"kind", to_string(h.kind)},
       {"rows", h.rows},
       {"firstDay", day(h.first_day)},
       {"lastDay", day(h.last_day)},
       {"regions", {{"states", h.states}, {"counties", h.counties}}},
       {"warnings", h.warnings}};
}

enum class JobState { queued, running, done, failed };

inline std::string_view to_string(JobState s) noexcept {
  switch (s) {
    case JobState::queued: return "queued";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
  }
  return "failed";
}

inline constexpr std::array<std::string_view, 4> kJobKinds{"simulate", "optimize", "scenario", "sensitivity"};

struct Job {
  std::string id;
  std::string kind;
  JobState state = JobState::queued;
  std::string submitted, started, finished;
  json request;
  json result;
  std::string error;
  std::vector<EvalRecord> evaluations;  // optimize jobs only
};

inline void to_json(json& j, const Job& job) {
  j = {{"id", job.id},       {"kind", job.kind},           {"state", to_string(job.state)},
       {"submitted", job.submitted}, {"started", job.started}, {"finished", job.finished},
       {"request", job.request}};
  if (job.state == JobState::done) j["result"] = job.result;
  if (job.state == JobState::failed) j["error"] = job.error;
}

struct ServiceOptions {
  fs::path data_dir = "wardsim-data";
  double perc_cores = 0.5;
  std::size_t workers = 0;  // 0: derived from perc_cores
};

class JobService {
public:
  explicit JobService(ServiceOptions opt) : opt_(std::move(opt)) {
    fs::create_directories(opt_.data_dir / "datasets");
    fs::create_directories(opt_.data_dir / "results");
    load_existing_datasets();
    std::size_t n = opt_.workers;
    if (n == 0) {
      const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
      n = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(opt_.perc_cores * hw)));
    }
    boot_ = static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count());
    for (std::size_t i = 0; i < n; ++i) workers_.emplace_back([this](std::stop_token st) { work(st); });
  }

  ~JobService() {
    {
      std::lock_guard lock{mutex_};
      stopping_ = true;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.request_stop();
    workers_.clear();
  }

  JobService(const JobService&) = delete;
  JobService& operator=(const JobService&) = delete;

  const fs::path& data_dir() const noexcept { return opt_.data_dir; }

  DatasetHandle upload(DatasetKind kind, const std::string& body) {
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a64(body)));
    const std::string id = std::string{to_string(kind)} + "-" + hex;
    {
      std::lock_guard lock{mutex_};
      if (auto it = datasets_.find(id); it != datasets_.end()) return it->second.handle;
    }
    Dataset ds;
    try {
      ds = parse_dataset(id, kind, body);
    } catch (const Error& e) {
      throw RequestError(400, e.what());
    }
    const fs::path file = opt_.data_dir / "datasets" / (id + ".csv");
    {
      std::ofstream out{file, std::ios::binary};
      out << body;
      if (!out) throw Error("cannot write dataset file " + file.string());
    }
    std::lock_guard lock{mutex_};
    auto [it, inserted] = datasets_.emplace(id, std::move(ds));
    return it->second.handle;
  }

  std::vector<DatasetHandle> datasets() const {
    std::lock_guard lock{mutex_};
    std::vector<DatasetHandle> out;
    for (const auto& [id, ds] : datasets_) out.push_back(ds.handle);
    return out;
  }

  /// Validates the request, queues the job and returns its snapshot.
  json submit(const std::string& kind, const json& request) {
    if (std::find(kJobKinds.begin(), kJobKinds.end(), kind) == kJobKinds.end())
      throw RequestError(404, "unknown job kind '" + kind + "'");
    if (!request.is_object()) throw RequestError(422, "request body must be a JSON object");
    Task task;
    try {
      task = prepare(kind, request);
    } catch (const RequestError&) {
      throw;
    } catch (const std::exception& e) {
      throw RequestError(422, e.what());
    }

    auto job = std::make_shared<Job>();
    job->kind = kind;
    job->request = request;
    job->submitted = utc_timestamp();
    json snapshot;
    {
      std::lock_guard lock{mutex_};
      char hex[17];
      std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(hash64(boot_, ++job_counter_)));
      job->id = std::string{"job-"} + hex;
      jobs_.emplace(job->id, job);
      queue_.push_back({job, std::move(task)});
      snapshot = *job;
    }
    cv_.notify_one();
    return snapshot;
  }

  std::optional<json> job(const std::string& id) const {
    std::lock_guard lock{mutex_};
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return json(*it->second);
  }

private:
  struct Dataset {
    DatasetHandle handle;
    std::shared_ptr<const std::vector<RawCaseRow>> cases;
    std::shared_ptr<const std::vector<RawIcuRow>> icu;
  };

  struct TaskOutput {
    json result;
    std::vector<EvalRecord> evaluations;
  };
  using Task = std::function<TaskOutput()>;

  struct Queued {
    std::shared_ptr<Job> job;
    Task task;
  };

  static Dataset parse_dataset(const std::string& id, DatasetKind kind, const std::string& body) {
    Dataset ds;
    ds.handle.id = id;
    ds.handle.kind = kind;
    std::set<int> states, counties;
    auto span_day = [&](Date d) {
      if (!ds.handle.first_day || d < *ds.handle.first_day) ds.handle.first_day = d;
      if (!ds.handle.last_day || d > *ds.handle.last_day) ds.handle.last_day = d;
    };
    if (kind == DatasetKind::cases) {
      auto parsed = parse_case_csv(body);
      for (const auto& r : parsed.rows) {
        states.insert(r.id_bundesland);
        counties.insert(r.id_landkreis);
        span_day(r.refdatum);
      }
      ds.handle.rows = parsed.rows.size();
      ds.handle.warnings = std::move(parsed.warnings);
      ds.cases = std::make_shared<const std::vector<RawCaseRow>>(std::move(parsed.rows));
    } else {
      auto parsed = parse_icu_csv(body);
      for (const auto& r : parsed.rows) {
        states.insert(r.bundesland);
        counties.insert(r.gemeindeschluessel);
        span_day(r.daten_stand);
      }
      ds.handle.rows = parsed.rows.size();
      ds.handle.warnings = std::move(parsed.warnings);
      ds.icu = std::make_shared<const std::vector<RawIcuRow>>(std::move(parsed.rows));
    }
    ds.handle.states.assign(states.begin(), states.end());
    ds.handle.counties = counties.size();
    return ds;
  }

  void load_existing_datasets() {
    for (const auto& entry : fs::directory_iterator(opt_.data_dir / "datasets")) {
      const std::string stem = entry.path().stem().string();
      const auto kind = dataset_kind_from(stem.substr(0, stem.find('-')));
      if (!kind || entry.path().extension() != ".csv") continue;
      std::ifstream in{entry.path(), std::ios::binary};
      std::stringstream body;
      body << in.rdbuf();
      try {
        datasets_.emplace(stem, parse_dataset(stem, *kind, body.str()));
      } catch (const Error&) {
        // Unreadable leftovers are skipped; a fresh upload replaces them.
      }
    }
  }

  Dataset dataset_ref(const json& request, const char* key, DatasetKind kind, bool required) const {
    if (!request.contains(key) || request.at(key).is_null()) {
      if (required) throw RequestError(422, std::string{"missing dataset reference '"} + key + "'");
      return {};
    }
    const auto id = request.at(key).get<std::string>();
    std::lock_guard lock{mutex_};
    auto it = datasets_.find(id);
    if (it == datasets_.end() || it->second.handle.kind != kind)
      throw RequestError(404, "unknown " + std::string{to_string(kind)} + " dataset '" + id + "'");
    return it->second;
  }

  static DataWindow window_of(const json& r) {
    DataWindow w;
    w.region.code = r.value("region", 0);
    if (r.contains("start") && !r.at("start").is_null()) w.start = parse_date(r.at("start").get<std::string>());
    if (r.contains("end") && !r.at("end").is_null()) w.end = parse_date(r.at("end").get<std::string>());
    if (w.start && w.end && *w.start > *w.end) throw ValidationError("start date after end date");
    return w;
  }

  static SimConfig config_of(const json& r) {
    SimConfig conf;
    if (r.contains("conf")) from_json(r.at("conf"), conf);
    if (r.contains("seed")) conf.seed = r.at("seed").get<std::uint64_t>();
    if (r.contains("repeats")) conf.sim_repeats = r.at("repeats").get<int>();
    conf.log_level = 0;
    conf.validate();
    return conf;
  }

  static ParameterSet params_of(const json& r) {
    ParameterSet p = r.contains("params") ? r.at("params").get<ParameterSet>() : default_parameters();
    p.validate();
    return p;
  }

  /// Everything that can be rejected up front is checked here, before queuing.
  Task prepare(const std::string& kind, const json& r) {
    if (kind == "sensitivity") return prepare_sensitivity(r);

    const Dataset cases = dataset_ref(r, "cases", DatasetKind::cases, true);
    const Dataset icu = dataset_ref(r, "icu", DatasetKind::icu, kind == "optimize");
    const DataWindow w = window_of(r);
    const SimConfig conf = config_of(r);
    auto arrivals = std::make_shared<std::vector<ArrivalRecord>>(select_arrivals(*cases.cases, w));
    auto field = std::make_shared<std::vector<FieldRecord>>();
    if (icu.icu) *field = select_field(*icu.icu, w);

    if (kind == "simulate") {
      const ParameterSet para = params_of(r);
      return [=] { return TaskOutput{outcome_json(simulate_window(*arrivals, *field, para, conf, w)), {}}; };
    }
    if (kind == "scenario") {
      const ParameterSet para = params_of(r);
      ScenarioSpec spec;
      spec.end_date = parse_date(r.at("endDate").get<std::string>());
      spec.r0_start = r.at("r0Start").get<double>();
      spec.r0_end = r.at("r0End").get<double>();
      spec.generation_interval = r.value("generationInterval", 4.0);
      spec.validate();
      Date last = arrivals->front().day;
      for (const auto& a : *arrivals) last = std::max(last, a.day);
      if (spec.end_date <= last)
        throw RequestError(422, "endDate " + format_date(spec.end_date) + " must be after history end " +
                                    format_date(last));
      return [=] {
        const auto out = run_scenario(*arrivals, spec, para, conf);
        json j = {{"scenario", scenario_summary_json(out.scenario)}, {"usage", out.usage}};
        if (!field->empty()) j["field"] = *field;
        return TaskOutput{j, {}};
      };
    }
    // optimize
    OptimizerOptions opt;
    opt.budget = r.value("budget", std::size_t{60});
    opt.initial_design_size = r.value("designSize", std::size_t{10});
    opt.seed = conf.seed;
    if (opt.budget < opt.initial_design_size)
      throw RequestError(422, "budget " + std::to_string(opt.budget) + " is smaller than the design size " +
                                  std::to_string(opt.initial_design_size));
    if (opt.initial_design_size < 10) throw RequestError(422, "designSize must be at least 10");
    const Bounds bounds = r.contains("bounds") ? bounds_from_json(r.at("bounds")) : default_bounds();
    return [=] {
      const CalibrationData data{*arrivals, *field};
      const auto out = calibrate(data, conf, bounds, opt);
      return TaskOutput{outcome_json(out), out.run.history};
    };
  }

  Task prepare_sensitivity(const json& r) {
    std::vector<EvalRecord> history;
    if (r.contains("job")) {
      const auto id = r.at("job").get<std::string>();
      std::lock_guard lock{mutex_};
      auto it = jobs_.find(id);
      if (it == jobs_.end()) throw RequestError(404, "unknown job '" + id + "'");
      if (it->second->kind != "optimize" || it->second->state != JobState::done)
        throw RequestError(422, "job '" + id + "' is not a finished optimize job");
      history = it->second->evaluations;
    } else if (r.contains("history")) {
      history = r.at("history").get<std::vector<EvalRecord>>();
    } else {
      throw RequestError(422, "sensitivity needs 'job' or 'history'");
    }
    if (history.empty()) throw RequestError(422, "empty history");
    SensitivityOptions opt;
    opt.max_terms = r.value("maxTerms", std::size_t{10});
    opt.grid = r.value("grid", std::size_t{20});
    opt.seed = r.value("seed", std::uint64_t{1});
    if (r.contains("slice")) {
      const auto dims = r.at("slice").get<std::vector<std::size_t>>();
      if (dims.size() != 2 || dims[0] < 1 || dims[1] < 1) throw RequestError(422, "slice needs two 1-based indices");
      opt.slice = std::pair{dims[0] - 1, dims[1] - 1};
    }
    return [history = std::move(history), opt] { return TaskOutput{outcome_json(analyze_history(history, opt)), {}}; };
  }

  void work(std::stop_token st) {
    while (true) {
      Queued item;
      {
        std::unique_lock lock{mutex_};
        cv_.wait(lock, st, [&] { return stopping_ || !queue_.empty(); });
        if (stopping_ || st.stop_requested()) return;
        item = std::move(queue_.front());
        queue_.pop_front();
        item.job->state = JobState::running;
        item.job->started = utc_timestamp();
      }
      TaskOutput output;
      std::string error;
      bool ok = true;
      try {
        output = item.task();
      } catch (const std::exception& e) {
        ok = false;
        error = e.what();
      }
      if (ok) {
        std::ofstream out{opt_.data_dir / "results" / (item.job->id + ".json")};
        out << output.result.dump(2) << '\n';
      }
      std::lock_guard lock{mutex_};
      item.job->finished = utc_timestamp();
      if (ok) {
        item.job->result = std::move(output.result);
        item.job->evaluations = std::move(output.evaluations);
        item.job->state = JobState::done;
      } else {
        item.job->error = std::move(error);
        item.job->state = JobState::failed;
      }
    }
  }

  ServiceOptions opt_;
  mutable std::mutex mutex_;
  std::condition_variable_any cv_;
  bool stopping_ = false;
  std::map<std::string, Dataset> datasets_;
  std::map<std::string, std::shared_ptr<Job>> jobs_;
  std::deque<Queued> queue_;
  std::uint64_t boot_ = 0;
  std::uint64_t job_counter_ = 0;
  std::vector<std::jthread> workers_;
};

inline void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

/// Registers the JSON API routes on `server`.
inline void mount(httplib::Server& server, JobService& svc) {
  auto guarded = [](auto handler) {
    return [handler](const httplib::Request& req, httplib::Response& res) {
      try {
        handler(req, res);
      } catch (const RequestError& e) {
        reply(res, e.status(), {{"error", e.what()}});
      } catch (const json::exception& e) {
        reply(res, 400, {{"error", e.what()}});
      } catch (const std::exception& e) {
        reply(res, 500, {{"error", e.what()}});
      }
    };
  };

  server.Get("/api/health", guarded([](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, {{"status", "ok"}});
  }));
  server.Get("/api/params/default", guarded([](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, json(default_parameters()));
  }));
  server.Get("/api/datasets", guarded([&svc](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, json(svc.datasets()));
  }));
  server.Post(R"(/api/datasets/([a-z]+))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
    const auto kind = dataset_kind_from(req.matches[1].str());
    if (!kind) throw RequestError(404, "unknown dataset kind '" + req.matches[1].str() + "'");
    reply(res, 201, json(svc.upload(*kind, req.body)));
  }));
  server.Post(R"(/api/jobs/([a-z]+))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = req.body.empty() ? json::object() : json::parse(req.body);
    } catch (const json::exception& e) {
      throw RequestError(400, std::string{"invalid JSON: "} + e.what());
    }
    reply(res, 202, svc.submit(req.matches[1].str(), body));
  }));
  server.Get(R"(/api/jobs/([A-Za-z0-9-]+))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
    auto job = svc.job(req.matches[1].str());
    if (!job) throw RequestError(404, "unknown job '" + req.matches[1].str() + "'");
    reply(res, 200, *job);
  }));
}

/// WARDSIM_DATA_DIR and WARDSIM_PORT override the given defaults.
inline ServiceOptions options_from_env(ServiceOptions base = {}) {
  if (const char* dir = std::getenv("WARDSIM_DATA_DIR"); dir && *dir) base.data_dir = dir;
  return base;
}

inline int port_from_env(int fallback) {
  if (const char* p = std::getenv("WARDSIM_PORT"); p && *p) {
    try {
      return std::stoi(p);
    } catch (const std::exception&) {
      throw ValidationError(std::string{"WARDSIM_PORT is not a number: "} + p);
    }
  }
  return fallback;
}

/// Blocks serving on host:port until the server is stopped.
inline int serve(const ServiceOptions& opt, const std::string& host, int port, std::ostream& log) {
  JobService svc{opt};
  httplib::Server server;
  mount(server, svc);
  log << "wardsim: serving on http://" << host << ':' << port << " (data in " << opt.data_dir.string() << ")\n";
  log.flush();
  return server.listen(host, port) ? 0 : 1;
}

}  // namespace wardsim::service
