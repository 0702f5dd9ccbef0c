#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>

#include "wardsim/service.hpp"

namespace fs = std::filesystem;
using namespace wardsim;
using nlohmann::json;
using service::JobService;
using service::RequestError;

namespace {

std::string fixture(const std::string& name) {
  std::ifstream in{std::string{WARDSIM_FIXTURE_DIR} + "/" + name, std::ios::binary};
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int status_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const RequestError& e) {
    return e.status();
  }
  return 0;
}

json wait_done(const JobService& svc, const std::string& id) {
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::minutes{5};
  while (std::chrono::steady_clock::now() < deadline) {
    auto j = svc.job(id);
    if (j && (j->at("state") == "done" || j->at("state") == "failed")) return *j;
    std::this_thread::sleep_for(std::chrono::milliseconds{10});
  }
  ADD_FAILURE() << "job " << id << " did not finish";
  return {};
}

class ServiceTest : public ::testing::Test {
protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("wardsim-svc-" + std::string{::testing::UnitTest::GetInstance()->current_test_info()->name()});
    fs::remove_all(dir_);
    service::ServiceOptions opt;
    opt.data_dir = dir_;
    opt.workers = 2;
    svc_ = std::make_unique<JobService>(opt);
  }
  void TearDown() override {
    svc_.reset();
    fs::remove_all(dir_);
  }

  std::pair<std::string, std::string> upload_fixtures() {
    const auto c = svc_->upload(service::DatasetKind::cases, fixture("cases_sample.csv"));
    const auto i = svc_->upload(service::DatasetKind::icu, fixture("icu_sample.csv"));
    return {c.id, i.id};
  }

  fs::path dir_;
  std::unique_ptr<JobService> svc_;
};

}  // namespace

TEST_F(ServiceTest, UploadReportsParsedRows) {
  const auto body = fixture("cases_sample.csv");
  const auto parsed = parse_case_csv(body);
  const auto h = svc_->upload(service::DatasetKind::cases, body);
  EXPECT_EQ(h.rows, parsed.rows.size());
  EXPECT_EQ(h.id.rfind("cases-", 0), 0u);
  ASSERT_TRUE(h.first_day && h.last_day);
  EXPECT_LE(*h.first_day, *h.last_day);
  EXPECT_EQ(h.counties, 3u);

  // Same body, same handle; the file is persisted and reloaded by a new service.
  EXPECT_EQ(svc_->upload(service::DatasetKind::cases, body).id, h.id);
  EXPECT_TRUE(fs::exists(dir_ / "datasets" / (h.id + ".csv")));
  svc_.reset();
  service::ServiceOptions opt;
  opt.data_dir = dir_;
  opt.workers = 1;
  svc_ = std::make_unique<JobService>(opt);
  ASSERT_EQ(svc_->datasets().size(), 1u);
  EXPECT_EQ(svc_->datasets().front().rows, h.rows);
}

TEST_F(ServiceTest, MalformedUploadIs400) {
  std::string header;
  for (int k = 0; k < 17; ++k) header += (k ? ",c" : "c") + std::to_string(k);
  EXPECT_EQ(status_of([&] { svc_->upload(service::DatasetKind::cases, header + "\n"); }), 400);
  EXPECT_EQ(status_of([&] { svc_->upload(service::DatasetKind::icu, "bundesland\n1\n"); }), 400);
  EXPECT_TRUE(svc_->datasets().empty());
}

TEST_F(ServiceTest, UnknownReferencesAre404) {
  const auto [cases, icu] = upload_fixtures();
  EXPECT_EQ(status_of([&] { svc_->submit("simulate", {{"cases", "cases-0000"}}); }), 404);
  EXPECT_EQ(status_of([&] { svc_->submit("simulate", {{"cases", icu}}); }), 404);
  EXPECT_EQ(status_of([&] { svc_->submit("teleport", {{"cases", cases}}); }), 404);
  EXPECT_EQ(status_of([&] { svc_->submit("sensitivity", {{"job", "job-missing"}}); }), 404);
  EXPECT_FALSE(svc_->job("job-missing").has_value());
}

TEST_F(ServiceTest, InvalidRequestsAre422) {
  const auto [cases, icu] = upload_fixtures();
  const json base = {{"cases", cases}, {"icu", icu}, {"region", 5374}};
  auto with = [&](json extra) {
    json r = base;
    r.update(extra);
    return r;
  };
  EXPECT_EQ(status_of([&] { svc_->submit("simulate", json::object()); }), 422);
  EXPECT_EQ(status_of([&] { svc_->submit("simulate", json::array()); }), 422);
  EXPECT_EQ(status_of([&] { svc_->submit("simulate", with({{"region", 9999}})); }), 422);
  EXPECT_EQ(status_of([&] { svc_->submit("simulate", with({{"start", "2020-10-10"}, {"end", "2020-10-01"}})); }),
            422);
  EXPECT_EQ(status_of([&] { svc_->submit("simulate", with({{"repeats", 0}})); }), 422);
  EXPECT_EQ(status_of([&] { svc_->submit("optimize", with({{"budget", 5}})); }), 422);
  EXPECT_EQ(status_of([&] { svc_->submit("optimize", with({{"designSize", 4}, {"budget", 8}})); }), 422);
  EXPECT_EQ(status_of([&] { svc_->submit("optimize", {{"cases", cases}, {"region", 5374}}); }), 422);
  EXPECT_EQ(status_of([&] {
              svc_->submit("scenario", with({{"endDate", "2020-10-01"}, {"r0Start", 1.0}, {"r0End", 2.0}}));
            }),
            422);
  EXPECT_EQ(status_of([&] { svc_->submit("scenario", with({{"r0Start", 1.0}})); }), 422);
  EXPECT_EQ(status_of([&] { svc_->submit("sensitivity", json::object()); }), 422);
}

TEST_F(ServiceTest, SimulateJobMatchesDirectRun) {
  const auto [cases, icu] = upload_fixtures();
  const json request = {{"cases", cases}, {"icu", icu}, {"region", 5374}, {"start", "2020-10-01"},
                        {"end", "2020-10-31"}, {"seed", 5}};
  const auto a = svc_->submit("simulate", request);
  const auto b = svc_->submit("simulate", request);
  EXPECT_NE(a.at("id"), b.at("id"));
  EXPECT_EQ(a.at("state"), "queued");
  const auto ja = wait_done(*svc_, a.at("id"));
  const auto jb = wait_done(*svc_, b.at("id"));
  ASSERT_EQ(ja.at("state"), "done") << ja.dump();
  EXPECT_EQ(ja.at("result"), jb.at("result"));

  const auto& days = ja.at("result").at("usage").at("days");
  EXPECT_EQ(days.size(), 31u);
  EXPECT_EQ(days.front(), "2020-10-01");
  EXPECT_EQ(ja.at("result").at("usage").at("series").size(), 3u);
  EXPECT_EQ(ja.at("result").at("error").at("days"), 31);
  EXPECT_TRUE(fs::exists(dir_ / "results" / (ja.at("id").get<std::string>() + ".json")));

  // Same numbers as the library path.
  const auto rows = parse_case_csv(fixture("cases_sample.csv")).rows;
  const DataWindow w{RegionId{5374}, parse_date("2020-10-01"), parse_date("2020-10-31")};
  SimConfig conf;
  conf.seed = 5;
  const auto direct = simulate_window(select_arrivals(rows, w), {}, default_parameters(), conf, w);
  EXPECT_EQ(json(direct.usage), ja.at("result").at("usage"));
}

TEST_F(ServiceTest, ScenarioJobCoversFutureWindow) {
  const auto [cases, icu] = upload_fixtures();
  const auto s = svc_->submit("scenario", {{"cases", cases}, {"region", 5374}, {"endDate", "2020-12-10"},
                                           {"r0Start", 1.0}, {"r0End", 2.0}});
  const auto j = wait_done(*svc_, s.at("id"));
  ASSERT_EQ(j.at("state"), "done") << j.dump();
  const auto r0 = j.at("result").at("scenario").at("r0").get<std::vector<double>>();
  ASSERT_EQ(r0.size(), 10u);
  EXPECT_DOUBLE_EQ(r0.front(), 1.0);
  EXPECT_DOUBLE_EQ(r0.back(), 2.0);
  const auto& days = j.at("result").at("usage").at("days");
  ASSERT_EQ(days.size(), 10u);
  EXPECT_EQ(days.front(), "2020-12-01");
  EXPECT_EQ(days.back(), "2020-12-10");
}

TEST_F(ServiceTest, OptimizeThenSensitivity) {
  const auto [cases, icu] = upload_fixtures();
  const auto o = svc_->submit("optimize", {{"cases", cases}, {"icu", icu}, {"region", 5374}, {"budget", 14}});
  const auto jo = wait_done(*svc_, o.at("id"));
  ASSERT_EQ(jo.at("state"), "done") << jo.dump();
  const auto& res = jo.at("result");
  EXPECT_EQ(res.at("evaluations"), 14);
  EXPECT_LE(res.at("bestError").get<double>(), res.at("defaultError").get<double>());

  const auto s = svc_->submit("sensitivity", {{"job", o.at("id")}, {"slice", {1, 2}}, {"grid", 5}, {"maxTerms", 3}});
  const auto js = wait_done(*svc_, s.at("id"));
  ASSERT_EQ(js.at("state"), "done") << js.dump();
  EXPECT_EQ(js.at("result").at("importance").size(), kParamCount);
  EXPECT_EQ(js.at("result").at("slice").at("values").size(), 5u);

  const auto sim = svc_->submit("simulate", {{"cases", cases}, {"region", 5374}});
  EXPECT_EQ(status_of([&] { svc_->submit("sensitivity", {{"job", sim.at("id")}}); }), 422);
}

TEST_F(ServiceTest, FailedJobCarriesError) {
  json history = json::array();
  for (int k = 0; k < 4; ++k)
    history.push_back(EvalRecord{{double(k), 1.0}, std::numeric_limits<double>::infinity(), 0, ""});
  const auto s = svc_->submit("sensitivity", {{"history", history}});
  const auto j = wait_done(*svc_, s.at("id"));
  EXPECT_EQ(j.at("state"), "failed");
  EXPECT_FALSE(j.at("error").get<std::string>().empty());
  EXPECT_FALSE(j.contains("result"));
}

TEST_F(ServiceTest, EnvironmentOverrides) {
  ::setenv("WARDSIM_DATA_DIR", "/tmp/wardsim-env-check", 1);
  ::setenv("WARDSIM_PORT", "9123", 1);
  EXPECT_EQ(service::options_from_env().data_dir, fs::path{"/tmp/wardsim-env-check"});
  EXPECT_EQ(service::port_from_env(8080), 9123);
  ::setenv("WARDSIM_PORT", "http", 1);
  EXPECT_THROW(service::port_from_env(8080), ValidationError);
  ::unsetenv("WARDSIM_DATA_DIR");
  ::unsetenv("WARDSIM_PORT");
  EXPECT_EQ(service::port_from_env(8080), 8080);
}

TEST_F(ServiceTest, HttpRoutes) {
  httplib::Server server;
  service::mount(server, *svc_);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread t{[&] { server.listen_after_bind(); }};
  server.wait_until_ready();
  httplib::Client client{"127.0.0.1", port};

  auto health = client.Get("/api/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(json::parse(health->body).at("status"), "ok");

  auto params = client.Get("/api/params/default");
  ASSERT_TRUE(params);
  EXPECT_EQ(json::parse(params->body).get<ParameterSet>().to_vector(), default_parameters().to_vector());

  auto up = client.Post("/api/datasets/cases", fixture("cases_sample.csv"), "text/csv");
  ASSERT_TRUE(up);
  EXPECT_EQ(up->status, 201);
  const auto handle = json::parse(up->body);
  EXPECT_EQ(handle.at("rows"), parse_case_csv(fixture("cases_sample.csv")).rows.size());
  EXPECT_EQ(client.Post("/api/datasets/cases", "x,y\n1,2\n", "text/csv")->status, 400);
  EXPECT_EQ(client.Post("/api/datasets/vaccines", "x\n", "text/csv")->status, 404);

  auto listed = client.Get("/api/datasets");
  ASSERT_TRUE(listed);
  EXPECT_EQ(json::parse(listed->body).size(), 1u);

  EXPECT_EQ(client.Post("/api/jobs/simulate", "{not json", "application/json")->status, 400);
  EXPECT_EQ(client.Post("/api/jobs/simulate", R"({"cases":"cases-nope"})", "application/json")->status, 404);
  EXPECT_EQ(client.Post("/api/jobs/simulate", R"({"cases":")" + handle.at("id").get<std::string>() +
                                                  R"(","region":9999})",
                        "application/json")
                ->status,
            422);
  EXPECT_EQ(client.Get("/api/jobs/job-nope")->status, 404);

  auto submitted = client.Post("/api/jobs/simulate",
                               json{{"cases", handle.at("id")}, {"region", 5374}, {"seed", 3}}.dump(),
                               "application/json");
  ASSERT_TRUE(submitted);
  EXPECT_EQ(submitted->status, 202);
  const auto id = json::parse(submitted->body).at("id").get<std::string>();
  json polled;
  for (int k = 0; k < 3000; ++k) {
    polled = json::parse(client.Get("/api/jobs/" + id)->body);
    if (polled.at("state") == "done" || polled.at("state") == "failed") break;
    std::this_thread::sleep_for(std::chrono::milliseconds{10});
  }
  EXPECT_EQ(polled.at("state"), "done");
  EXPECT_TRUE(polled.at("result").contains("usage"));

  server.stop();
  t.join();
}
