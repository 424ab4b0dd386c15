#include "forgeval/service.hpp"

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <future>
#include <map>
#include <mutex>
#include <random>
#include <regex>
#include <thread>

#include "forgeval/attack.hpp"
#include "forgeval/schema.hpp"
#include "io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace forgeval {

struct Service::State {
  mutable std::mutex mu;
  mutable std::condition_variable changed;
  std::condition_variable work_ready;
  std::map<std::string, Job> jobs;
  std::deque<std::string> queue;
  std::vector<std::thread> workers;
  bool stopping = false;
};

struct Service::Http {
  httplib::Server server;
};

namespace {

const std::regex kJobIdPattern("[A-Za-z0-9][A-Za-z0-9_.-]{0,63}");

std::string new_job_id() {
  static std::mutex mu;
  static std::mt19937_64 gen{std::random_device{}()};
  std::lock_guard lock(mu);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(gen()));
  return std::string("job-") + buf;
}

const char* kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::usage:
      return "usage";
    case ErrorKind::data:
      return "data";
    case ErrorKind::backend:
      return "backend";
    case ErrorKind::protocol:
      return "protocol";
  }
  return "data";
}

void send_json(httplib::Response& res, int status, const ordered_json& body) {
  res.status = status;
  res.set_content(body.dump(-1, ' ', false, json::error_handler_t::replace), "application/json; charset=utf-8");
}

void send_error(httplib::Response& res, int status, const std::string& kind, const std::string& message,
                const std::vector<FieldError>& fields = {}) {
  ordered_json e;
  e["kind"] = kind;
  e["message"] = message;
  ordered_json f = ordered_json::array();
  for (const auto& fe : fields) f.push_back({{"field", fe.field}, {"message", fe.message}});
  e["fields"] = f;
  send_json(res, status, {{"error", e}});
}

void send_file(httplib::Response& res, const fs::path& path, const std::string& content_type) {
  auto stream = std::make_shared<std::ifstream>(path, std::ios::binary);
  if (!*stream) {
    send_error(res, 404, "not_found", "missing artifact " + path.filename().string());
    return;
  }
  res.status = 200;
  res.set_chunked_content_provider(content_type, [stream](std::size_t, httplib::DataSink& sink) {
    char buf[16384];
    stream->read(buf, sizeof buf);
    const std::streamsize n = stream->gcount();
    if (n > 0 && !sink.write(buf, static_cast<std::size_t>(n))) return false;
    if (!*stream) sink.done();
    return true;
  });
}

std::optional<json> parse_body(const httplib::Request& req, httplib::Response& res) {
  try {
    json body = json::parse(req.body);
    if (!body.is_object()) {
      send_error(res, 400, "usage", "request body must be a JSON object");
      return std::nullopt;
    }
    return body;
  } catch (const json::exception& e) {
    send_error(res, 400, "usage", std::string("malformed JSON body: ") + e.what());
    return std::nullopt;
  }
}

}  // namespace

const char* to_string(JobStatus s) {
  switch (s) {
    case JobStatus::queued:
      return "queued";
    case JobStatus::running:
      return "running";
    case JobStatus::succeeded:
      return "succeeded";
    case JobStatus::failed:
      return "failed";
  }
  return "queued";
}

JobStatus parse_job_status(const std::string& name) {
  if (name == "queued") return JobStatus::queued;
  if (name == "running") return JobStatus::running;
  if (name == "succeeded") return JobStatus::succeeded;
  if (name == "failed") return JobStatus::failed;
  throw DataError("unknown job status '" + name + "'");
}

ordered_json to_json(const Job& job, bool with_logs) {
  ordered_json j;
  j["job_id"] = job.job_id;
  j["kind"] = to_string(job.kind);
  j["status"] = to_string(job.status);
  j["progress"] = job.progress;
  j["run_dir"] = job.run_dir.generic_string();
  j["submitted_config"] = job.submitted_config;
  j["submitted_at"] = job.submitted_at;
  j["summary"] = job.summary;
  j["error"] = job.error.empty() ? ordered_json(nullptr) : ordered_json(job.error);
  j["log_size"] = job.log_lines.size();
  if (with_logs) j["log_lines"] = job.log_lines;
  return j;
}

Job job_from_json(const json& j) {
  try {
    Job job;
    job.job_id = j.at("job_id").get<std::string>();
    job.kind = parse_job_kind(j.at("kind").get<std::string>());
    job.status = parse_job_status(j.at("status").get<std::string>());
    job.progress = j.at("progress").get<double>();
    job.run_dir = j.at("run_dir").get<std::string>();
    job.submitted_config = j.at("submitted_config");
    job.submitted_at = j.value("submitted_at", "");
    job.summary = j.value("summary", json());
    if (j.contains("error") && j.at("error").is_string()) job.error = j.at("error").get<std::string>();
    if (j.contains("log_lines")) job.log_lines = j.at("log_lines").get<std::vector<std::string>>();
    return job;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed job record: ") + e.what());
  } catch (const UsageError& e) {
    throw DataError(std::string("malformed job record: ") + e.what());
  }
}

Service::Service(ServiceOptions options)
    : options_(std::move(options)), state_(std::make_unique<State>()), http_(std::make_unique<Http>()) {
  if (options_.root.empty()) throw UsageError("service root directory is required");
  if (options_.workers < 1) throw UsageError("workers: must be >= 1");
  fs::create_directories(options_.root / "jobs");
  fs::create_directories(options_.root / "runs");
  for (const auto& entry : fs::directory_iterator(options_.root / "jobs")) {
    if (entry.path().extension() != ".json") continue;
    try {
      Job job = job_from_json(json::parse(io::read_file(entry.path())));
      if (!finished(job.status)) {
        job.status = JobStatus::failed;
        job.error = "interrupted: the service stopped before the job finished";
        job.log_lines.push_back(job.error);
        persist(job);
      }
      state_->jobs.emplace(job.job_id, std::move(job));
    } catch (const std::exception&) {
      // Unreadable job records are left on disk and ignored.
    }
  }

  auto& s = http_->server;
  s.Post("/api/jobs", [this](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req, res);
    if (!body) return;
    if (!body->contains("kind") || !body->at("kind").is_string()) {
      send_error(res, 400, "usage", "kind is required", {{"kind", "required"}});
      return;
    }
    JobKind kind;
    try {
      kind = parse_job_kind(body->at("kind").get<std::string>());
    } catch (const UsageError& e) {
      send_error(res, 400, "usage", e.what(), {{"kind", e.what()}});
      return;
    }
    std::optional<std::string> id;
    if (body->contains("job_id")) {
      if (!body->at("job_id").is_string()) {
        send_error(res, 400, "usage", "job_id must be a string", {{"job_id", "expected a string"}});
        return;
      }
      id = body->at("job_id").get<std::string>();
    }
    try {
      const std::string job_id = submit(kind, body->value("config", json::object()), id);
      send_json(res, 202, {{"job_id", job_id}, {"status", "queued"}});
    } catch (const JobConflict& e) {
      send_error(res, 409, "conflict", e.what(), {{"job_id", e.what()}});
    } catch (const ConfigError& e) {
      std::vector<FieldError> fields = e.errors();
      for (auto& f : fields) f.field = f.field.empty() ? "config" : "config." + f.field;
      send_error(res, 400, "usage", e.what(), fields);
    } catch (const Error& e) {
      send_error(res, 400, kind_name(e.kind()), e.what());
    }
  });

  s.Get("/api/jobs", [this](const httplib::Request&, httplib::Response& res) {
    ordered_json out = ordered_json::array();
    for (const auto& j : jobs()) out.push_back(to_json(j, false));
    send_json(res, 200, {{"jobs", out}});
  });

  s.Get(R"(/api/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    const auto j = job(req.matches[1]);
    if (!j) return send_error(res, 404, "not_found", "unknown job '" + std::string(req.matches[1]) + "'");
    send_json(res, 200, to_json(*j));
  });

  s.Get(R"(/api/jobs/([^/]+)/logs)", [this](const httplib::Request& req, httplib::Response& res) {
    std::size_t since = 0;
    int wait_ms = 10000;
    try {
      if (req.has_param("since")) since = std::stoull(req.get_param_value("since"));
      if (req.has_param("wait_ms")) wait_ms = std::clamp(std::stoi(req.get_param_value("wait_ms")), 0, 30000);
    } catch (const std::exception&) {
      return send_error(res, 400, "usage", "since and wait_ms must be non-negative integers");
    }
    const auto chunk = logs(req.matches[1], since, wait_ms);
    if (!chunk) return send_error(res, 404, "not_found", "unknown job '" + std::string(req.matches[1]) + "'");
    send_json(res, 200, {{"lines", chunk->lines}, {"next", chunk->next}, {"status", to_string(chunk->status)}});
  });

  const auto run_path = [this](const httplib::Request& req, httplib::Response& res) -> std::optional<fs::path> {
    const std::string id = req.matches[1];
    if (!std::regex_match(id, kJobIdPattern) || !fs::is_directory(run_dir(id))) {
      send_error(res, 404, "not_found", "unknown run '" + id + "'");
      return std::nullopt;
    }
    return run_dir(id);
  };

  s.Get(R"(/api/runs/([^/]+)/report)", [run_path](const httplib::Request& req, httplib::Response& res) {
    if (const auto dir = run_path(req, res)) send_file(res, *dir / "report.json", "application/json; charset=utf-8");
  });
  s.Get(R"(/api/runs/([^/]+)/predictions)", [run_path](const httplib::Request& req, httplib::Response& res) {
    if (const auto dir = run_path(req, res)) send_file(res, *dir / "predictions.jsonl", "application/x-ndjson");
  });
  s.Get(R"(/api/runs/([^/]+)/files)", [run_path](const httplib::Request& req, httplib::Response& res) {
    const auto dir = run_path(req, res);
    if (!dir) return;
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(*dir)) {
      if (e.is_regular_file()) names.push_back(e.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    send_json(res, 200, {{"files", names}});
  });
  s.Get(R"(/api/runs/([^/]+)/files/([A-Za-z0-9_.-]+))",
        [run_path](const httplib::Request& req, httplib::Response& res) {
          const auto dir = run_path(req, res);
          if (!dir) return;
          const std::string name = req.matches[2];
          if (name.front() == '.') return send_error(res, 404, "not_found", "missing artifact " + name);
          const bool js = name.size() > 5 && name.substr(name.size() - 5) == ".json";
          send_file(res, *dir / name, js ? "application/json; charset=utf-8" : "text/plain; charset=utf-8");
        });

  s.Get("/api/registry/detectors", [](const httplib::Request&, httplib::Response& res) {
    ordered_json out = ordered_json::array();
    for (const auto& h : DetectorRegistry::with_builtins().list()) {
      ordered_json d;
      d["name"] = h.name;
      d["kind"] = to_string(h.kind);
      d["sign"] = h.sign == Sign::higher_is_machine ? "higher_is_machine" : "lower_is_machine";
      d["config_schema"] = config_schema(h);
      out.push_back(std::move(d));
    }
    for (const auto kind : {DetectorKind::external_process, DetectorKind::external_http}) {
      DetectorHandle h;
      h.name = kind == DetectorKind::external_process ? "external_process" : "external_http";
      h.kind = kind;
      out.push_back({{"name", h.name}, {"kind", to_string(kind)}, {"config_schema", config_schema(h)}});
    }
    send_json(res, 200, {{"detectors", out}});
  });

  s.Get("/api/registry/attacks", [](const httplib::Request&, httplib::Response& res) {
    ordered_json out = ordered_json::array();
    for (const auto& a : attack_catalog()) {
      ordered_json j;
      j["name"] = a.name;
      j["granularity"] = a.granularity;
      j["uses_backend"] = a.uses_backend;
      j["description"] = a.description;
      j["example"] = a.example;
      ordered_json schema;
      schema["rate"] = "fraction of eligible units perturbed, in [0, 1] (default 0.1)";
      schema["seed"] = "non-negative integer";
      for (const auto& [k, v] : a.params.items()) schema["params." + k] = v;
      j["config_schema"] = schema;
      out.push_back(std::move(j));
    }
    send_json(res, 200, {{"attacks", out}});
  });

  s.Post("/api/demo/detect", [this](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req, res);
    if (!body) return;
    if (!body->contains("text") || !body->at("text").is_string()) {
      return send_error(res, 400, "usage", "text is required", {{"text", "required"}});
    }
    json source = body->value("params", json::object());
    if (!source.is_object()) return send_error(res, 400, "usage", "params must be an object", {{"params", "expected an object"}});
    source["detector"] = body->value("detector", "");
    if (!source.contains("lm") && !source.contains("scorer_command") && !source.contains("external_command") &&
        !source.contains("external_url") && options_.default_lm) {
      source["lm"] = *options_.default_lm;
    }
    const int budget = options_.demo_budget_ms;
    source["timeout_ms"] = std::min(source.value("timeout_ms", budget), budget);

    std::optional<fs::path> model_path;
    if (body->contains("model_artifact") && !body->at("model_artifact").is_null()) {
      if (!body->at("model_artifact").is_string()) {
        return send_error(res, 400, "usage", "model_artifact must be a string", {{"model_artifact", "expected a string"}});
      }
      const std::string m = body->at("model_artifact").get<std::string>();
      if (std::regex_match(m, kJobIdPattern) && fs::is_directory(run_dir(m))) {
        model_path = run_dir(m);
      } else {
        model_path = fs::path(m);
      }
    }
    const std::string text = body->at("text").get<std::string>();

    struct Outcome {
      ordered_json body;
      int status = 200;
    };
    auto promise = std::make_shared<std::promise<Outcome>>();
    auto future = promise->get_future();
    std::thread([promise, source, model_path, text] {
      Outcome out;
      try {
        const DetectorSource src = detector_source_from_json(source);
        const LoadedDetector det = load_detector(src);
        const CalibrationModel model = model_path ? load_calibration(*model_path) : uncalibrated_model(det.handle.name);
        out.body = to_json(detect_text(det, model, text));
        out.body["calibrated"] = model_path.has_value();
      } catch (const ConfigError& e) {
        std::vector<FieldError> fields = e.errors();
        for (auto& f : fields) {
          if (f.field != "detector") f.field = "params." + f.field;
        }
        ordered_json err = {{"kind", "usage"}, {"message", e.what()}, {"fields", ordered_json::array()}};
        for (const auto& f : fields) err["fields"].push_back({{"field", f.field}, {"message", f.message}});
        out = {{{"error", err}}, 400};
      } catch (const Error& e) {
        const int status = e.kind() == ErrorKind::backend || e.kind() == ErrorKind::protocol ? 503 : 400;
        out = {{{"error", {{"kind", kind_name(e.kind())}, {"message", e.what()}, {"fields", ordered_json::array()}}}},
               status};
      } catch (const std::exception& e) {
        out = {{{"error", {{"kind", "backend"}, {"message", e.what()}, {"fields", ordered_json::array()}}}}, 503};
      }
      promise->set_value(std::move(out));
    }).detach();
    if (future.wait_for(std::chrono::milliseconds(budget)) != std::future_status::ready) {
      return send_error(res, 503, "backend", "detector did not answer within " + std::to_string(budget) + " ms");
    }
    Outcome out = future.get();
    send_json(res, out.status, out.body);
  });

  s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      send_error(res, res.status, res.status == 404 ? "not_found" : "usage", httplib::status_message(res.status));
    }
  });
  s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string message = "internal error";
    try {
      if (ep) std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      message = e.what();
    }
    send_error(res, 500, "internal", message);
  });

  for (std::size_t i = 0; i < options_.workers; ++i) state_->workers.emplace_back([this] { work(); });
}

Service::~Service() {
  stop();
  {
    std::lock_guard lock(state_->mu);
    state_->stopping = true;
  }
  state_->work_ready.notify_all();
  for (auto& t : state_->workers) t.join();
}

fs::path Service::run_dir(const std::string& id) const { return options_.root / "runs" / id; }

void Service::persist(const Job& job) const {
  io::write_file(options_.root / "jobs" / (job.job_id + ".json"),
                 to_json(job).dump(2, ' ', false, json::error_handler_t::replace) + "\n");
}

std::string Service::submit(JobKind kind, const json& config, std::optional<std::string> job_id) {
  if (job_id && !std::regex_match(*job_id, kJobIdPattern)) {
    throw ConfigError(std::vector<FieldError>{{"job_id", "expected 1-64 characters from [A-Za-z0-9_.-]"}});
  }
  const std::vector<FieldError> errors = validate_config(kind, config);
  if (!errors.empty()) throw ConfigError(errors);
  std::lock_guard lock(state_->mu);
  if (state_->stopping) throw BackendError("service is shutting down");
  std::string id = job_id ? *job_id : new_job_id();
  if (state_->jobs.count(id) || fs::exists(run_dir(id))) {
    if (job_id) throw JobConflict("job id '" + id + "' already exists");
    while (state_->jobs.count(id) || fs::exists(run_dir(id))) id = new_job_id();
  }
  Job job;
  job.job_id = id;
  job.kind = kind;
  job.run_dir = run_dir(id);
  job.submitted_config = config;
  job.submitted_at = utc_timestamp();
  persist(job);
  state_->jobs.emplace(id, std::move(job));
  state_->queue.push_back(id);
  state_->work_ready.notify_one();
  return id;
}

std::optional<Job> Service::job(const std::string& id) const {
  std::lock_guard lock(state_->mu);
  const auto it = state_->jobs.find(id);
  if (it == state_->jobs.end()) return std::nullopt;
  return it->second;
}

std::vector<Job> Service::jobs() const {
  std::lock_guard lock(state_->mu);
  std::vector<Job> out;
  for (const auto& [id, j] : state_->jobs) out.push_back(j);
  std::sort(out.begin(), out.end(), [](const Job& a, const Job& b) {
    return std::tie(a.submitted_at, a.job_id) < std::tie(b.submitted_at, b.job_id);
  });
  return out;
}

std::optional<LogChunk> Service::logs(const std::string& id, std::size_t since, int wait_ms) const {
  std::unique_lock lock(state_->mu);
  const auto ready = [&] {
    const auto it = state_->jobs.find(id);
    return it == state_->jobs.end() || it->second.log_lines.size() > since || finished(it->second.status) ||
           state_->stopping;
  };
  if (wait_ms > 0) state_->changed.wait_for(lock, std::chrono::milliseconds(wait_ms), ready);
  const auto it = state_->jobs.find(id);
  if (it == state_->jobs.end()) return std::nullopt;
  LogChunk out;
  const auto& lines = it->second.log_lines;
  if (since < lines.size()) out.lines.assign(lines.begin() + static_cast<std::ptrdiff_t>(since), lines.end());
  out.next = std::max(since, lines.size());
  out.status = it->second.status;
  return out;
}

std::optional<JobStatus> Service::wait(const std::string& id, int timeout_ms) const {
  std::unique_lock lock(state_->mu);
  state_->changed.wait_for(lock, std::chrono::milliseconds(timeout_ms), [&] {
    const auto it = state_->jobs.find(id);
    return it == state_->jobs.end() || finished(it->second.status);
  });
  const auto it = state_->jobs.find(id);
  if (it == state_->jobs.end()) return std::nullopt;
  return it->second.status;
}

void Service::work() {
  for (;;) {
    std::string id;
    {
      std::unique_lock lock(state_->mu);
      state_->work_ready.wait(lock, [&] { return state_->stopping || !state_->queue.empty(); });
      if (state_->queue.empty()) return;
      id = state_->queue.front();
      state_->queue.pop_front();
    }
    execute(id);
  }
}

void Service::execute(const std::string& id) {
  JobKind kind;
  json config;
  fs::path dir;
  {
    std::lock_guard lock(state_->mu);
    Job& job = state_->jobs.at(id);
    job.status = JobStatus::running;
    job.log_lines.push_back("started " + std::string(to_string(job.kind)) + " job " + id);
    kind = job.kind;
    config = job.submitted_config;
    dir = job.run_dir;
    persist(job);
  }
  state_->changed.notify_all();

  StageHooks hooks;
  hooks.log = [this, id](const std::string& line) {
    {
      std::lock_guard lock(state_->mu);
      state_->jobs.at(id).log_lines.push_back(line);
    }
    state_->changed.notify_all();
  };
  hooks.progress = [this, id](double p) {
    std::lock_guard lock(state_->mu);
    Job& job = state_->jobs.at(id);
    job.progress = std::max(job.progress, std::clamp(p, 0.0, 1.0));
  };

  json summary;
  std::string error;
  try {
    summary = run_stage(kind, config, dir, hooks);
  } catch (const Error& e) {
    error = std::string(kind_name(e.kind())) + " error: " + e.what();
  } catch (const std::exception& e) {
    error = std::string("error: ") + e.what();
  }
  {
    std::lock_guard lock(state_->mu);
    Job& job = state_->jobs.at(id);
    if (error.empty()) {
      job.status = JobStatus::succeeded;
      job.progress = 1.0;
      job.summary = summary;
      job.log_lines.push_back("succeeded");
    } else {
      job.status = JobStatus::failed;
      job.error = error;
      job.log_lines.push_back(error);
    }
    persist(job);
  }
  state_->changed.notify_all();
}

bool Service::listen(const std::string& host, int port) { return http_->server.listen(host, port); }

int Service::bind_any(const std::string& host) { return http_->server.bind_to_any_port(host); }

bool Service::serve() { return http_->server.listen_after_bind(); }

void Service::stop() {
  if (http_->server.is_running()) http_->server.stop();
  {
    std::lock_guard lock(state_->mu);
    state_->stopping = true;
  }
  state_->changed.notify_all();
}

}  // namespace forgeval
