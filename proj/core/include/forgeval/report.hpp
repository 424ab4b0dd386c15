#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "forgeval/metrics.hpp"

namespace forgeval {

// Contents of report.json: one EvalReport row per attack ("clean" first).
struct RunReport {
  std::string run_fingerprint;
  std::string detector;
  std::string calibration_fingerprint;
  std::string dataset_fingerprint;
  std::string predictions_sha256;
  std::vector<EvalReport> rows;
  // Pooled over every attacked variant; absent for clean-only runs.
  std::optional<MetricValue> overall_asr;
  std::size_t asr_eligible = 0;
  std::size_t asr_flipped = 0;

  bool operator==(const RunReport&) const = default;
};

nlohmann::ordered_json to_json(const RunReport& report);
RunReport run_report_from_json(const nlohmann::json& object);

struct RunArtifacts {
  nlohmann::json manifest = nlohmann::json::object();
  std::vector<Prediction> predictions;
  RunReport report;

  bool operator==(const RunArtifacts&) const = default;
};

inline constexpr const char* kReportColumns[] = {
    "detector", "dataset", "attack", "accuracy", "precision", "recall", "f1", "auroc", "aupr",
    "tpr_fpr_0.01", "tpr_fpr_0.001", "asr", "mean_latency_ms", "throughput_per_s", "gpu_peak_gib"};

// Writes manifest.json, predictions.jsonl, report.json and report.csv. Sets
// report.predictions_sha256 and manifest.run_fingerprint; returns the
// artifacts exactly as written.
RunArtifacts write_run(const std::filesystem::path& run_dir, RunArtifacts run);
RunArtifacts read_run(const std::filesystem::path& run_dir);

std::string serialize_predictions(std::span<const Prediction> predictions);
std::vector<Prediction> parse_predictions(const std::string& content);

// One row per report; absent metrics are empty cells.
std::string report_csv(std::span<const EvalReport> rows);

enum class Direction { higher_is_better, lower_is_better };

struct MetricColumn {
  std::string name;
  Direction direction = Direction::higher_is_better;
  bool operator==(const MetricColumn&) const = default;
};

// The metric columns of report.csv, in order.
const std::vector<MetricColumn>& metric_columns();
std::optional<double> metric_cell(const EvalReport& report, const std::string& column);

struct ComparisonRow {
  std::string detector;
  std::string dataset;
  std::string attack;
  std::vector<std::optional<double>> cells;  // aligned with ComparisonTable::columns
  std::vector<bool> best;
};

struct ComparisonTable {
  std::vector<MetricColumn> columns;  // metric columns present in at least one report
  std::vector<ComparisonRow> rows;    // sorted by detector, then attack (clean first)
};

// Throws UsageError on an empty list and DataError on mixed dataset
// fingerprints unless allow_mixed is set.
ComparisonTable compare(std::span<const EvalReport> reports, bool allow_mixed = false);
nlohmann::ordered_json to_json(const ComparisonTable& table);
// Fixed-width text; best cells carry a trailing '*', absent cells show '-'.
std::string render_table(const ComparisonTable& table);

}  // namespace forgeval
