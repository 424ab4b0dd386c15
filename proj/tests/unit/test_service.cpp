#include <gtest/gtest.h>

#include <httplib.h>

#include <thread>

#include "forgeval/config.hpp"
#include "forgeval/service.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace forgeval;
using nlohmann::json;
using testing_support::slurp;
using testing_support::spit;
using testing_support::TempDir;

namespace {

// Service bound to a free local port, serving on a background thread.
class Running {
 public:
  explicit Running(ServiceOptions options) : service_(std::move(options)) {
    port_ = service_.bind_any("127.0.0.1");
    thread_ = std::thread([this] { service_.serve(); });
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    client_->set_read_timeout(60, 0);
    for (int i = 0; i < 200 && !client_->Get("/api/jobs"); ++i) {
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
  }
  ~Running() {
    service_.stop();
    thread_.join();
  }

  Service& service() { return service_; }
  httplib::Client& http() { return *client_; }

  std::pair<int, json> get(const std::string& path) {
    const auto r = client_->Get(path);
    if (!r) return {0, json()};
    return {r->status, r->body.empty() ? json() : json::parse(r->body, nullptr, false)};
  }
  std::pair<int, json> post(const std::string& path, const std::string& body) {
    const auto r = client_->Post(path, body, "application/json");
    if (!r) return {0, json()};
    return {r->status, json::parse(r->body, nullptr, false)};
  }
  std::pair<int, json> post(const std::string& path, const json& body) { return post(path, body.dump()); }

 private:
  Service service_;
  int port_ = 0;
  std::thread thread_;
  std::unique_ptr<httplib::Client> client_;
};

std::vector<std::string> field_names(const json& err) {
  std::vector<std::string> out;
  for (const auto& f : err["fields"]) out.push_back(f["field"]);
  return out;
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

std::string toy_command() { return "'" + testing_support::toy_detector_binary().string() + "'"; }

class Api : public ::testing::Test {
 protected:
  void SetUp() override {
    previous_ = fs::current_path();
    fs::copy(testing_support::fixture_dir(), dir_.path(), fs::copy_options::recursive);
    fs::current_path(dir_.path());
  }
  void TearDown() override { fs::current_path(previous_); }

  ServiceOptions options() const {
    ServiceOptions o;
    o.root = dir_ / "svc";
    o.workers = 1;
    o.demo_budget_ms = 10000;
    return o;
  }

  std::string run(const std::string& id, const std::string& artifact) const {
    return (dir_ / "svc" / "runs" / id / artifact).string();
  }

  // Fixture configs rewired to read from earlier service runs.
  json config(const std::string& stage) const {
    json c = load_config(dir_ / (stage + ".toml"));
    if (stage == "attack") c["input"] = run("b", "");
    if (stage == "calibrate") {
      c["lm_corpus"] = run("b", "train.jsonl");
      c["train"] = run("b", "train.jsonl");
      c["val"] = run("b", "val.jsonl");
    }
    if (stage == "evaluate") {
      c["lm"] = run("c", "lm.json");
      c["model"] = run("c", "");
      c["test"] = run("b", "test.jsonl");
      c["attacked"] = run("a", "attacked.jsonl");
    }
    return c;
  }

  void submit_and_wait(Running& s, const std::string& kind, const std::string& id) {
    const auto [status, body] = s.post("/api/jobs", json{{"kind", kind}, {"job_id", id}, {"config", config(kind)}});
    ASSERT_EQ(status, 202) << body.dump();
    ASSERT_EQ(s.service().wait(id, 120000), JobStatus::succeeded) << s.get("/api/jobs/" + id).second.dump(2);
  }

  void run_pipeline(Running& s) {
    submit_and_wait(s, "build", "b");
    submit_and_wait(s, "attack", "a");
    submit_and_wait(s, "calibrate", "c");
    submit_and_wait(s, "evaluate", "e");
  }

  TempDir dir_;
  fs::path previous_;
};

}  // namespace

TEST_F(Api, SubmitReturnsAcceptedAndJobCompletes) {
  Running s(options());
  const auto [status, body] = s.post("/api/jobs", json{{"kind", "build"}, {"config", config("build")}});
  ASSERT_EQ(status, 202) << body.dump();
  EXPECT_EQ(body["status"], "queued");
  const std::string id = body["job_id"];
  ASSERT_EQ(s.service().wait(id, 120000), JobStatus::succeeded);

  const auto [code, job] = s.get("/api/jobs/" + id);
  EXPECT_EQ(code, 200);
  EXPECT_EQ(job["status"], "succeeded");
  EXPECT_EQ(job["progress"], 1.0);
  EXPECT_EQ(job["kind"], "build");
  EXPECT_TRUE(job["error"].is_null());
  EXPECT_EQ(job["log_size"], job["log_lines"].size());
  EXPECT_EQ(job["submitted_config"], config("build"));

  const auto [list_code, list] = s.get("/api/jobs");
  EXPECT_EQ(list_code, 200);
  ASSERT_EQ(list["jobs"].size(), 1u);
  EXPECT_EQ(list["jobs"][0]["job_id"], id);
  EXPECT_FALSE(list["jobs"][0].contains("log_lines"));
}

TEST_F(Api, SubmitRejectsBadRequests) {
  Running s(options());
  auto [code, body] = s.post("/api/jobs", std::string("{not json"));
  EXPECT_EQ(code, 400);
  EXPECT_EQ(body["error"]["kind"], "usage");

  std::tie(code, body) = s.post("/api/jobs", json{{"config", config("build")}});
  EXPECT_EQ(code, 400);
  EXPECT_TRUE(contains(field_names(body["error"]), "kind"));

  std::tie(code, body) = s.post("/api/jobs", json{{"kind", "deploy"}});
  EXPECT_EQ(code, 400);
  EXPECT_TRUE(contains(field_names(body["error"]), "kind"));

  std::tie(code, body) = s.post("/api/jobs", json{{"kind", "build"}, {"config", {{"seed", "x"}}}});
  EXPECT_EQ(code, 400);
  const auto fields = field_names(body["error"]);
  EXPECT_TRUE(contains(fields, "config.seed"));
  EXPECT_TRUE(contains(fields, "config.human_corpus"));

  std::tie(code, body) = s.post("/api/jobs", json{{"kind", "build"}, {"job_id", "../x"}, {"config", config("build")}});
  EXPECT_EQ(code, 400);
  EXPECT_TRUE(contains(field_names(body["error"]), "config.job_id"));
  EXPECT_TRUE(s.service().jobs().empty());
}

TEST_F(Api, DuplicateJobIdConflicts) {
  Running s(options());
  const json request = {{"kind", "build"}, {"job_id", "dup"}, {"config", config("build")}};
  EXPECT_EQ(s.post("/api/jobs", request).first, 202);
  const auto [code, body] = s.post("/api/jobs", request);
  EXPECT_EQ(code, 409);
  EXPECT_EQ(body["error"]["kind"], "conflict");
  s.service().wait("dup", 120000);
}

TEST_F(Api, UnknownIdsAreNotFound) {
  Running s(options());
  for (const char* path : {"/api/jobs/nope", "/api/jobs/nope/logs?wait_ms=0", "/api/runs/nope/report",
                           "/api/runs/nope/predictions", "/api/runs/nope/files", "/api/runs/nope/files/report.json",
                           "/api/no-such-route"}) {
    const auto [code, body] = s.get(path);
    EXPECT_EQ(code, 404) << path;
    EXPECT_EQ(body["error"]["kind"], "not_found") << path;
  }
}

TEST_F(Api, LogsLongPollLosesNothing) {
  Running s(options());
  const auto [status, body] = s.post("/api/jobs", json{{"kind", "build"}, {"job_id", "b"}, {"config", config("build")}});
  ASSERT_EQ(status, 202);
  std::vector<std::string> seen;
  std::size_t next = 0;
  for (int polls = 0; polls < 1000; ++polls) {
    const auto [code, chunk] = s.get("/api/jobs/b/logs?since=" + std::to_string(next) + "&wait_ms=2000");
    ASSERT_EQ(code, 200);
    for (const auto& line : chunk["lines"]) seen.push_back(line);
    EXPECT_EQ(chunk["next"].get<std::size_t>(), next + chunk["lines"].size());
    next = chunk["next"];
    if (chunk["lines"].empty() && (chunk["status"] == "succeeded" || chunk["status"] == "failed")) break;
  }
  const auto job = s.service().job("b");
  ASSERT_TRUE(job);
  EXPECT_EQ(job->status, JobStatus::succeeded);
  EXPECT_EQ(seen, job->log_lines);
  EXPECT_EQ(seen.back(), "succeeded");

  const auto [code, tail] = s.get("/api/jobs/b/logs?since=" + std::to_string(seen.size()));
  EXPECT_EQ(code, 200);
  EXPECT_TRUE(tail["lines"].empty());
  EXPECT_EQ(tail["next"], seen.size());

  const auto [from_one_code, from_one] = s.get("/api/jobs/b/logs?since=1");
  EXPECT_EQ(from_one_code, 200);
  EXPECT_EQ(from_one["lines"].size(), seen.size() - 1);

  EXPECT_EQ(s.get("/api/jobs/b/logs?since=x").first, 400);
  EXPECT_EQ(s.get("/api/jobs/b/logs?wait_ms=-").first, 400);
}

TEST_F(Api, FullPipelineAndRunEndpoints) {
  Running s(options());
  run_pipeline(s);

  const auto report = s.http().Get("/api/runs/e/report");
  ASSERT_TRUE(report);
  EXPECT_EQ(report->status, 200);
  EXPECT_EQ(report->body, slurp(run("e", "report.json")));
  EXPECT_EQ(json::parse(report->body)["rows"].size(), 4u);

  const auto predictions = s.http().Get("/api/runs/e/predictions");
  ASSERT_TRUE(predictions);
  EXPECT_EQ(predictions->status, 200);
  EXPECT_EQ(predictions->body, slurp(run("e", "predictions.jsonl")));

  const auto [files_code, files] = s.get("/api/runs/e/files");
  EXPECT_EQ(files_code, 200);
  std::vector<std::string> on_disk;
  for (const auto& e : fs::directory_iterator(run("e", ""))) on_disk.push_back(e.path().filename().string());
  std::sort(on_disk.begin(), on_disk.end());
  EXPECT_EQ(files["files"].get<std::vector<std::string>>(), on_disk);

  const auto [manifest_code, manifest] = s.get("/api/runs/b/files/manifest.json");
  EXPECT_EQ(manifest_code, 200);
  EXPECT_EQ(manifest["status"], "complete");
  EXPECT_EQ(s.get("/api/runs/b/report").first, 404);
  EXPECT_EQ(s.get("/api/runs/b/files/nothing.txt").first, 404);

  const auto [code, job] = s.get("/api/jobs/e");
  EXPECT_EQ(code, 200);
  EXPECT_FALSE(job["summary"].is_null());
}

TEST_F(Api, FailedJobReportsError) {
  Running s(options());
  json c = config("evaluate");
  c["test"] = (dir_ / "missing.jsonl").string();
  const auto [status, body] = s.post("/api/jobs", json{{"kind", "evaluate"}, {"job_id", "f"}, {"config", c}});
  ASSERT_EQ(status, 202) << body.dump();
  EXPECT_EQ(s.service().wait("f", 60000), JobStatus::failed);
  const auto [code, job] = s.get("/api/jobs/f");
  EXPECT_EQ(code, 200);
  EXPECT_EQ(job["status"], "failed");
  EXPECT_FALSE(job["error"].get<std::string>().empty());
  EXPECT_EQ(job["log_lines"].back(), job["error"]);
}

TEST_F(Api, DetectorRegistry) {
  Running s(options());
  const auto [code, body] = s.get("/api/registry/detectors");
  ASSERT_EQ(code, 200);
  std::vector<std::string> names;
  for (const auto& d : body["detectors"]) {
    names.push_back(d["name"]);
    EXPECT_TRUE(d["config_schema"].is_object()) << d.dump();
  }
  EXPECT_EQ(names, (std::vector<std::string>{"entropy", "gltr", "likelihood", "logrank", "lrr", "rank",
                                             "external_process", "external_http"}));
  for (const auto& d : body["detectors"]) {
    if (d["name"] == "entropy") {
      EXPECT_EQ(d["sign"], "lower_is_machine");
    }
    if (d["name"] == "likelihood") {
      EXPECT_EQ(d["sign"], "higher_is_machine");
    }
  }
}

TEST_F(Api, AttackRegistry) {
  Running s(options());
  const auto [code, body] = s.get("/api/registry/attacks");
  ASSERT_EQ(code, 200);
  ASSERT_EQ(body["attacks"].size(), attack_catalog().size());
  for (const auto& a : body["attacks"]) {
    for (const char* key : {"name", "granularity", "uses_backend", "description", "example", "config_schema"}) {
      EXPECT_TRUE(a.contains(key)) << a["name"] << " " << key;
    }
    EXPECT_TRUE(a["config_schema"].contains("rate"));
  }
}

TEST_F(Api, DemoDetectWithExternalDetector) {
  Running s(options());
  const auto [code, body] = s.post(
      "/api/demo/detect",
      json{{"text", "abcd"}, {"detector", "toy-length"}, {"params", {{"external_command", toy_command()}}}});
  ASSERT_EQ(code, 200) << body.dump();
  // Uncalibrated: probability is sigmoid(4).
  EXPECT_EQ(body["score"], 4.0);
  EXPECT_EQ(body["verdict"], "machine");
  EXPECT_NEAR(body["confidence"].get<double>(), 1.0 / (1.0 + std::exp(-4.0)), 1e-12);
  EXPECT_EQ(body["calibrated"], false);
}

TEST_F(Api, DemoDetectWithCalibratedModel) {
  ServiceOptions o = options();
  o.default_lm = run("c", "lm.json");
  Running s(o);
  submit_and_wait(s, "build", "b");
  submit_and_wait(s, "calibrate", "c");
  const json request = {{"text", "the quick brown fox"}, {"detector", "likelihood"}, {"model_artifact", "c"}};
  const auto [code, body] = s.post("/api/demo/detect", request);
  ASSERT_EQ(code, 200) << body.dump();
  EXPECT_EQ(body["calibrated"], true);
  EXPECT_TRUE(body["verdict"] == "human" || body["verdict"] == "machine");

  // Same answer as the library with the same artifacts.
  DetectorSource src;
  src.detector = "likelihood";
  src.lm = run("c", "lm.json");
  const DetectResult expected = detect_text(load_detector(src), load_calibration(run("c", "")), "the quick brown fox");
  EXPECT_EQ(body["verdict"], expected.verdict);
  EXPECT_DOUBLE_EQ(body["probability"].get<double>(), expected.probability);
}

TEST_F(Api, DemoDetectErrors) {
  ServiceOptions o = options();
  o.demo_budget_ms = 500;
  Running s(o);
  auto [code, body] = s.post("/api/demo/detect", json{{"detector", "toy"}});
  EXPECT_EQ(code, 400);
  EXPECT_TRUE(contains(field_names(body["error"]), "text"));

  std::tie(code, body) = s.post("/api/demo/detect", json{{"text", "  "}, {"detector", "toy"},
                                                          {"params", {{"external_command", toy_command()}}}});
  EXPECT_EQ(code, 400);

  std::tie(code, body) = s.post("/api/demo/detect", json{{"text", "hi"}, {"detector", "likelihood"}});
  EXPECT_EQ(code, 400) << body.dump();

  std::tie(code, body) =
      s.post("/api/demo/detect", json{{"text", "hi"}, {"detector", "x"}, {"params", {{"external_command", "true"}}}});
  EXPECT_EQ(code, 503);
  EXPECT_EQ(body["error"]["kind"], "backend");

  std::tie(code, body) = s.post(
      "/api/demo/detect",
      json{{"text", "hi"}, {"detector", "toy-length"}, {"params", {{"external_command", toy_command() + " --delay-ms 3000"}}}});
  EXPECT_EQ(code, 503) << body.dump();
}

TEST_F(Api, RestartKeepsFinishedJobsAndFailsInterruptedOnes) {
  {
    Running s(options());
    submit_and_wait(s, "build", "b");
  }
  Job stale;
  stale.job_id = "stale";
  stale.kind = JobKind::attack;
  stale.status = JobStatus::running;
  stale.run_dir = dir_ / "svc/runs/stale";
  stale.log_lines = {"started attack job stale"};
  spit(dir_ / "svc/jobs/stale.json", to_json(stale).dump());
  spit(dir_ / "svc/jobs/garbage.json", "{");

  Running s(options());
  const auto [code, b] = s.get("/api/jobs/b");
  EXPECT_EQ(code, 200);
  EXPECT_EQ(b["status"], "succeeded");
  const auto [stale_code, j] = s.get("/api/jobs/stale");
  EXPECT_EQ(stale_code, 200);
  EXPECT_EQ(j["status"], "failed");
  EXPECT_NE(j["error"].get<std::string>().find("interrupted"), std::string::npos);
  EXPECT_EQ(json::parse(slurp(dir_ / "svc/jobs/stale.json"))["status"], "failed");
  EXPECT_EQ(s.get("/api/jobs").second["jobs"].size(), 2u);
  EXPECT_EQ(s.post("/api/jobs", json{{"kind", "build"}, {"job_id", "b"}, {"config", config("build")}}).first, 409);
}

TEST(ServiceOptionsCheck, RejectsMissingRoot) {
  EXPECT_THROW(Service(ServiceOptions{}), UsageError);
  TempDir dir;
  ServiceOptions o;
  o.root = dir.path();
  o.workers = 0;
  EXPECT_THROW(Service{o}, UsageError);
}
