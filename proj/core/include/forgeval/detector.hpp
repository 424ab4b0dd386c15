#pragma once

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "forgeval/protocol.hpp"
#include "forgeval/schema.hpp"
#include "forgeval/scoring.hpp"

namespace forgeval {

enum class DetectorKind { builtin_metric, external_process, external_http };
const char* to_string(DetectorKind kind);

struct DetectorHandle {
  std::string name;
  DetectorKind kind = DetectorKind::builtin_metric;
  Sign sign = Sign::higher_is_machine;
  nlohmann::json config = nlohmann::json::object();

  bool operator==(const DetectorHandle&) const = default;
};

nlohmann::json to_json(const DetectorHandle& handle);

// Config keys reserved for perturbation-based external detectors.
inline constexpr std::array<const char*, 2> kReservedConfigKeys = {"perturbation_count",
                                                                  "perturbation_strength"};

// Oriented so that larger means "more machine-like".
inline double effective_score(Sign sign, double raw) {
  return sign == Sign::higher_is_machine ? raw : -raw;
}

namespace stats {

double likelihood(std::span<const TokenScore> tokens);
double rank(std::span<const TokenScore> tokens);  // -mean(rank)
double logrank(std::span<const TokenScore> tokens);  // -mean(ln rank)
double entropy(std::span<const TokenScore> tokens);  // mean entropy

// Counts of positions with rank <= 10, (10,100], (100,1000], > 1000.
std::array<std::size_t, 4> gltr_histogram(std::span<const TokenScore> tokens);
double gltr(std::span<const TokenScore> tokens);  // fraction with rank <= 10

struct LrrValue {
  double value = 0.0;
  bool zero_denominator = false;
};
// mean(logprob) / -mean(ln rank); 0 with the flag set when every rank is 1.
LrrValue lrr(std::span<const TokenScore> tokens);

}  // namespace stats

struct DetectorOutput {
  double score = 0.0;
  std::vector<std::string> flags;
  nlohmann::json metadata = nlohmann::json::object();
  std::optional<double> gpu_peak_gib;
};

class Detector {
 public:
  explicit Detector(DetectorHandle handle) : handle_(std::move(handle)) {}
  virtual ~Detector() = default;

  const DetectorHandle& handle() const { return handle_; }

  // Raw detector output for one text. Throws on detector failure.
  virtual DetectorOutput evaluate(const std::string& record_id, const std::string& text) const = 0;

 private:
  DetectorHandle handle_;
};

struct RawScore {
  std::string record_id;
  double score = 0.0;  // raw, finite
  double latency_ms = 0.0;
  std::vector<std::string> flags;
  nlohmann::json metadata = nlohmann::json::object();
  std::optional<double> gpu_peak_gib;
};

// Times the detector call only. Throws DataError on empty text and
// ProtocolError on a non-finite score.
RawScore score(const Detector& detector, const Record& record);

struct EfficiencyTrace {
  double wall_seconds = 0.0;
  std::vector<double> latencies_ms;

  std::size_t count() const { return latencies_ms.size(); }
  std::optional<double> throughput() const;
};

struct ScoreOutcome {
  std::optional<RawScore> score;
  std::string error;
  bool ok() const { return score.has_value(); }
};

struct BatchScores {
  std::vector<ScoreOutcome> outcomes;  // aligned with the input records
  EfficiencyTrace trace;
  std::size_t failures() const;
};

BatchScores batch_score(const Detector& detector, std::span<const Record> records,
                        std::size_t parallelism = 1);

class DetectorRegistry {
 public:
  using Factory = std::function<std::unique_ptr<Detector>(const DetectorHandle&,
                                                          std::shared_ptr<const TokenScorer>)>;

  DetectorRegistry() = default;
  DetectorRegistry(DetectorRegistry&& other) noexcept : entries_(std::move(other.entries_)) {}
  DetectorRegistry& operator=(DetectorRegistry&& other) noexcept {
    entries_ = std::move(other.entries_);
    return *this;
  }

  // Throws UsageError on a duplicate name.
  void add(DetectorHandle handle, Factory factory);
  std::vector<DetectorHandle> list() const;  // sorted by name
  // Throws UsageError for an unknown name.
  DetectorHandle resolve(const std::string& name) const;
  bool contains(const std::string& name) const;
  // Built-in detectors require a scorer.
  std::unique_ptr<Detector> create(const std::string& name,
                                   std::shared_ptr<const TokenScorer> scorer = nullptr) const;

  // The six token-statistics detectors.
  static DetectorRegistry with_builtins();

 private:
  struct Entry {
    DetectorHandle handle;
    Factory factory;
  };
  mutable std::shared_mutex mu_;
  std::vector<Entry> entries_;
};

// Starts (or connects to) an external detector, reads its handshake, and
// registers it under the announced name. Returns the registered handle.
DetectorHandle register_external(DetectorRegistry& registry, DetectorKind kind,
                                 const std::string& target, int timeout_ms = 30000);

// Config keys each detector kind understands, for registry listings.
nlohmann::json config_schema(const DetectorHandle& handle);

}  // namespace forgeval
