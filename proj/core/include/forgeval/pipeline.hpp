#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "forgeval/attack.hpp"
#include "forgeval/builder.hpp"
#include "forgeval/calibration.hpp"
#include "forgeval/detector.hpp"
#include "forgeval/errors.hpp"
#include "forgeval/metrics.hpp"

namespace forgeval {

// The four pipeline stages, shared by the CLI and the service.
enum class JobKind { build, attack, calibrate, evaluate };
JobKind parse_job_kind(const std::string& name);
const char* to_string(JobKind kind);

struct FieldError {
  std::string field;
  std::string message;
  bool operator==(const FieldError&) const = default;
};

class ConfigError : public UsageError {
 public:
  explicit ConfigError(std::vector<FieldError> errors);
  const std::vector<FieldError>& errors() const { return errors_; }

 private:
  std::vector<FieldError> errors_;
};

// Where detector scores come from. Built-in detectors need `lm` (an n-gram
// artifact) or `scorer_command` (an external score_tokens process); external
// detectors need `external_command` or `external_url`.
struct DetectorSource {
  std::string detector;
  std::optional<std::string> lm;
  std::optional<std::string> scorer_command;
  std::optional<std::string> external_command;
  std::optional<std::string> external_url;
  int timeout_ms = 30000;
};

struct AttackConfig {
  std::string input;  // dataset file, or a build output directory (uses `split`)
  std::string split = "test";
  std::vector<AttackSpec> attacks;
  AttackMode mode = AttackMode::append;
  std::size_t parallelism = 4;
  std::optional<std::uint64_t> seed;  // replaces every spec's seed when set
};

struct CalibrateConfig {
  DetectorSource source;
  std::string train;
  std::optional<std::string> val;
  ThresholdPolicy policy = ThresholdPolicy::fixed_half;
  Mapping mapping = Mapping::logistic;
  double l2_lambda = 1e-6;
  std::optional<std::size_t> sample_k;
  std::uint64_t seed = 0;
  std::size_t parallelism = 4;
  // Train the n-gram scorer on this corpus instead of loading `lm`.
  std::optional<std::string> lm_corpus;
  int lm_order = 3;
  double lm_alpha = 0.5;
};

struct EvaluateConfig {
  DetectorSource source;
  std::string model;  // calibration file, or a calibrate output directory
  std::string test;
  std::optional<std::string> attacked;
  std::optional<std::string> provenance;
  // Calibration used for the attacked side; must equal `model`.
  std::optional<std::string> attacked_model;
  std::vector<SliceKey> slices;
  std::size_t parallelism = 4;
  std::uint64_t seed = 0;
};

// Typed views of a stage config object. Every problem is collected into the
// thrown ConfigError, one entry per field.
BuildSpec build_config_from_json(const nlohmann::json& config);
AttackConfig attack_config_from_json(const nlohmann::json& config);
CalibrateConfig calibrate_config_from_json(const nlohmann::json& config);
EvaluateConfig evaluate_config_from_json(const nlohmann::json& config);

std::vector<FieldError> validate_config(JobKind kind, const nlohmann::json& config);

// The normalized configuration recorded as config_snapshot. Independent of
// whether the config came from a file or a JSON body.
nlohmann::json normalized_config(JobKind kind, const nlohmann::json& config);

struct StageHooks {
  std::function<void(const std::string&)> log;
  std::function<void(double)> progress;
};

// Artifact names each stage writes into its output directory.
std::vector<std::string> stage_artifacts(JobKind kind, const nlohmann::json& config);

// Resolved plan for --dry-run: normalized config, output directory, artifacts.
nlohmann::json plan_stage(JobKind kind, const nlohmann::json& config, const std::filesystem::path& out_dir);

// Runs one stage writing into out_dir and returns a short summary. A manifest
// is written before any work starts and marked failed if the stage throws.
nlohmann::json run_stage(JobKind kind, const nlohmann::json& config, const std::filesystem::path& out_dir,
                         const StageHooks& hooks = {});

struct LoadedDetector {
  DetectorHandle handle;
  std::unique_ptr<Detector> detector;
  std::string scorer_fingerprint;
};

LoadedDetector load_detector(const DetectorSource& source);
DetectorSource detector_source_from_json(const nlohmann::json& config);

// Accepts a calibration file or a directory holding calibration.txt.
CalibrationModel load_calibration(const std::filesystem::path& path);

// Used by detect when no calibration is given: sigmoid(score), threshold 0.5.
CalibrationModel uncalibrated_model(const std::string& detector_name);

struct DetectResult {
  std::string verdict;  // "human" or "machine"
  double confidence = 0.0;  // probability of the predicted class
  double score = 0.0;       // raw detector score
  double probability = 0.0;  // calibrated probability of machine
  double latency_ms = 0.0;
  std::string detector;
};

nlohmann::ordered_json to_json(const DetectResult& result);

// Throws UsageError on empty text (after normalization) or when the model was
// calibrated for a different detector.
DetectResult detect_text(const LoadedDetector& detector, const CalibrationModel& model, const std::string& text);

inline constexpr const char* kCalibrationFile = "calibration.txt";

}  // namespace forgeval
