#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace forgeval {

inline constexpr const char* kSchemaVersion = "forgeval.standardized/1";

// One text sample in the canonical binary-detection schema.
// label: 0 = human, 1 = machine. `attack` set implies label 1.
struct Record {
  std::string id;
  std::string text;
  int label = 0;
  std::optional<std::string> source;
  std::optional<std::string> lang;
  std::optional<std::string> model;
  std::optional<std::string> attack;

  bool operator==(const Record&) const = default;
};

// Standardized JSON object with all seven fields; absent optionals are null.
nlohmann::ordered_json to_json(const Record& record);
// Throws DataError on a malformed standardized object.
Record record_from_json(const nlohmann::json& object);

enum class Format { flat, hc3, paired, attack_paired, standardized, auto_detect };

Format parse_format(const std::string& name);
const char* to_string(Format format);

struct LoadResult {
  std::vector<Record> records;
  std::vector<std::string> warnings;
  std::size_t skipped = 0;
  // CSV columns outside the standardized set, in first-seen order.
  std::vector<std::string> unknown_columns;
  std::vector<std::string> source_paths;
};

// Loads a .jsonl/.json/.csv file, or every such file below a directory in
// lexicographic path order. Throws DataError for unreadable files or
// structures none of the parsers accept.
LoadResult load_dataset(const std::filesystem::path& path, Format hint = Format::auto_detect);

// NFC + trim on text, trim on metadata fields (empty becomes absent). Records
// whose text is empty afterwards are dropped and counted in `dropped`.
std::vector<Record> normalize(std::span<const Record> records, std::size_t* dropped = nullptr);

struct SplitRatio {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;

  // Rescales to sum 1. Throws UsageError for negative or all-zero components.
  SplitRatio normalized() const;
  static SplitRatio parse(const std::string& text);  // "8:1:1" or "0.8,0.1,0.1"
  bool operator==(const SplitRatio&) const = default;
};

enum class Split { train, val, test };
const char* to_string(Split split);
Split parse_split(const std::string& name);

struct DatasetManifest {
  std::string schema_version = kSchemaVersion;
  std::uint64_t seed = 0;
  SplitRatio split_ratios;
  std::map<std::string, Split> split_membership;
  std::vector<std::string> source_paths;
  nlohmann::json config_snapshot = nlohmann::json::object();
  std::string created_at;

  bool operator==(const DatasetManifest&) const = default;
};

nlohmann::ordered_json to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const nlohmann::json& object);

struct SplitResult {
  std::vector<Record> train;
  std::vector<Record> val;
  std::vector<Record> test;
  DatasetManifest manifest;
  std::vector<std::string> warnings;
};

// Stratified by label and deterministic in (ids, ratios, seed). Throws
// UsageError on empty input or duplicate ids.
SplitResult split(std::span<const Record> records, const SplitRatio& ratios, std::uint64_t seed);

// Writes newline-delimited records to `data_path` and the manifest to
// `manifest_path` (defaults to "<data_path>.manifest.json").
void save_standardized(std::span<const Record> records, const DatasetManifest& manifest,
                       const std::filesystem::path& data_path,
                       std::optional<std::filesystem::path> manifest_path = std::nullopt);

// Newline-delimited records only.
void write_records(std::span<const Record> records, const std::filesystem::path& data_path);

// Lineage of one attacked variant.
struct AttackProvenance {
  std::string id;  // variant record id
  std::string base_id;
  std::string attack;
  std::string params_fingerprint;
  std::uint64_t seed = 0;

  bool operator==(const AttackProvenance&) const = default;
};

nlohmann::ordered_json to_json(const AttackProvenance& provenance);
AttackProvenance provenance_from_json(const nlohmann::json& object);
void write_provenance(std::span<const AttackProvenance> provenance, const std::filesystem::path& path);
std::vector<AttackProvenance> read_provenance(const std::filesystem::path& path);

std::string utc_timestamp();

// Fingerprint over the ids, labels and texts of a record list.
std::string dataset_fingerprint(std::span<const Record> records);

}  // namespace forgeval
