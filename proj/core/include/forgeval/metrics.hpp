#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "forgeval/detector.hpp"
#include "forgeval/schema.hpp"

namespace forgeval {

struct Prediction {
  std::string record_id;
  int y_true = 0;
  double score = 0.0;  // sign-oriented: larger = more machine-like
  double probability = 0.5;
  int y_pred = 0;
  std::optional<std::string> attack;
  std::optional<std::string> base_id;  // set on attacked variants
  double latency_ms = 0.0;
  std::optional<std::string> source;
  std::optional<std::string> lang;
  std::optional<std::string> model;

  bool operator==(const Prediction&) const = default;
};

nlohmann::ordered_json to_json(const Prediction& prediction);
Prediction prediction_from_json(const nlohmann::json& object);

// A metric that may be undefined; undefined values carry a reason and are
// never reported as zero.
struct MetricValue {
  std::optional<double> value;
  std::string reason;

  static MetricValue of(double v) { return {v, {}}; }
  static MetricValue absent(std::string why) { return {std::nullopt, std::move(why)}; }
  bool present() const { return value.has_value(); }
  bool operator==(const MetricValue&) const = default;
};

nlohmann::json to_json(const MetricValue& metric);
MetricValue metric_from_json(const nlohmann::json& value);

// Positive class is machine (1).
struct Confusion {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  Confusion& operator+=(const Confusion& o);
  bool operator==(const Confusion&) const = default;
};

Confusion confusion(std::span<const Prediction> predictions);

// Threshold-free ranking metrics over raw score/label arrays. Both classes
// must be present (DataError otherwise).
// Concordance probability over all (positive, negative) pairs, ties count 1/2.
double auroc(std::span<const double> scores, std::span<const int> labels);
// Area under the precision-recall step curve swept over distinct scores.
double aupr(std::span<const double> scores, std::span<const int> labels);
// max TPR over thresholds t in distinct scores and +inf (predict 1 iff score >= t)
// whose FPR <= alpha. No interpolation.
double tpr_at_fpr(std::span<const double> scores, std::span<const int> labels, double alpha);

struct Effectiveness {
  Confusion confusion;
  std::size_t n = 0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  MetricValue accuracy;
  MetricValue precision;
  MetricValue recall;
  MetricValue f1;
  MetricValue auroc;
  MetricValue aupr;

  bool operator==(const Effectiveness&) const = default;
};

// Throws DataError on an empty prediction list.
Effectiveness effectiveness(std::span<const Prediction> predictions);

struct OperatingPoint {
  double alpha = 0.01;
  MetricValue tpr;
  // alpha is finer than 1 / (number of negatives).
  bool resolution_limited = false;

  bool operator==(const OperatingPoint&) const = default;
};

OperatingPoint tpr_at_fpr(std::span<const Prediction> predictions, double alpha);

inline constexpr double kDefaultFprLevels[] = {0.01, 0.001};

struct AsrPair {
  std::string base_id;
  std::string attacked_id;
  std::string attack;
  int clean_pred = 0;
  int attacked_pred = 0;
  bool operator==(const AsrPair&) const = default;
};

struct AsrResult {
  MetricValue asr;
  std::size_t flipped = 0;
  std::size_t eligible = 0;  // machine samples detected correctly on the clean side
  std::vector<AsrPair> pairs;
};

// Throws ThresholdReuseError unless the two calibration fingerprints agree.
void require_same_calibration(const std::string& clean_calibration, const std::string& attacked_calibration);

// Attack success rate. Throws ThresholdReuseError when the calibration
// fingerprints differ, DataError on unmatched provenance or a pair whose
// y_true is not 1.
AsrResult asr(std::span<const Prediction> clean, std::span<const Prediction> attacked,
              std::span<const AttackProvenance> provenance, const std::string& clean_calibration,
              const std::string& attacked_calibration);

struct Efficiency {
  std::size_t n = 0;
  double wall_seconds = 0.0;
  MetricValue throughput_per_s;
  MetricValue mean_latency_ms;

  bool operator==(const Efficiency&) const = default;
};

Efficiency efficiency(const EfficiencyTrace& trace);

enum class SliceKey { source, lang, model, attack };
SliceKey parse_slice_key(const std::string& name);  // UsageError for unknown keys
const char* to_string(SliceKey key);

struct SliceReport {
  std::size_t n = 0;
  bool low_confidence = false;
  Effectiveness metrics;
  bool operator==(const SliceReport&) const = default;
};

inline constexpr std::size_t kMinSliceSize = 10;

// Attack slices name clean predictions "clean"; missing metadata groups under "unknown".
std::map<std::string, SliceReport> slice(std::span<const Prediction> predictions, SliceKey key,
                                         std::size_t min_size = kMinSliceSize);

// One row of results: a detector on one dataset under one attack ("clean" for none).
struct EvalReport {
  std::string detector;
  std::string dataset_fingerprint;
  std::string attack = "clean";
  Effectiveness effectiveness;
  std::vector<OperatingPoint> tpr_at_fpr;
  std::optional<MetricValue> asr;
  Efficiency efficiency;
  std::map<std::string, std::map<std::string, SliceReport>> slices;
  std::optional<double> gpu_peak_gib;

  bool operator==(const EvalReport&) const = default;
};

nlohmann::ordered_json to_json(const EvalReport& report);
EvalReport eval_report_from_json(const nlohmann::json& object);

// Effectiveness, operating points and slices for one prediction set.
EvalReport evaluate_predictions(const std::string& detector, const std::string& dataset_fingerprint,
                                std::span<const Prediction> predictions, const EfficiencyTrace& trace,
                                std::span<const SliceKey> slice_keys = {});

}  // namespace forgeval
