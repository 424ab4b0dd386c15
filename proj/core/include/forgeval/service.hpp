#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "forgeval/errors.hpp"
#include "forgeval/pipeline.hpp"

namespace forgeval {

struct ServiceOptions {
  std::filesystem::path root;  // jobs/ and runs/ live here
  std::size_t workers = 2;
  int demo_budget_ms = 30000;
  // Token scorer for built-in detectors in the demo when the request names none.
  std::optional<std::string> default_lm;
};

enum class JobStatus { queued, running, succeeded, failed };
const char* to_string(JobStatus status);
JobStatus parse_job_status(const std::string& name);
inline bool finished(JobStatus s) { return s == JobStatus::succeeded || s == JobStatus::failed; }

struct Job {
  std::string job_id;
  JobKind kind = JobKind::build;
  JobStatus status = JobStatus::queued;
  double progress = 0.0;
  std::vector<std::string> log_lines;
  std::filesystem::path run_dir;
  nlohmann::json submitted_config = nlohmann::json::object();
  nlohmann::json summary;
  std::string error;
  std::string submitted_at;
};

nlohmann::ordered_json to_json(const Job& job, bool with_logs = true);
Job job_from_json(const nlohmann::json& j);

class JobConflict : public UsageError {
 public:
  explicit JobConflict(const std::string& message) : UsageError(message) {}
};

struct LogChunk {
  std::vector<std::string> lines;
  std::size_t next = 0;
  JobStatus status = JobStatus::queued;
};

// In-process job queue plus the HTTP front end. Jobs persist as
// <root>/jobs/<id>.json and write into <root>/runs/<id>/. Jobs that were
// queued or running when a previous instance stopped come back as failed.
class Service {
 public:
  explicit Service(ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Throws ConfigError for an invalid config, JobConflict for a taken id.
  std::string submit(JobKind kind, const nlohmann::json& config, std::optional<std::string> job_id = std::nullopt);
  std::optional<Job> job(const std::string& id) const;
  std::vector<Job> jobs() const;
  // Lines from index `since`. Blocks up to wait_ms while nothing new has
  // arrived and the job is still active. nullopt for unknown jobs.
  std::optional<LogChunk> logs(const std::string& id, std::size_t since, int wait_ms = 0) const;
  // Waits until the job finishes or the timeout expires; returns its status.
  std::optional<JobStatus> wait(const std::string& id, int timeout_ms) const;

  std::filesystem::path run_dir(const std::string& id) const;
  const ServiceOptions& options() const { return options_; }

  // HTTP. bind_any returns the chosen port; serve blocks until stop().
  bool listen(const std::string& host, int port);
  int bind_any(const std::string& host);
  bool serve();
  void stop();

 private:
  struct State;
  struct Http;
  void work();
  void execute(const std::string& id);
  void persist(const Job& job) const;

  ServiceOptions options_;
  std::unique_ptr<State> state_;
  std::unique_ptr<Http> http_;
};

}  // namespace forgeval
