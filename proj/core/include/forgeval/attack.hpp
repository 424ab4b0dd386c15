#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "forgeval/generator.hpp"
#include "forgeval/schema.hpp"

namespace forgeval {

struct AttackInfo {
  std::string name;
  std::string granularity;  // character, lexical, paragraph, document
  bool uses_backend = false;
  std::string description;
  std::string example;
  nlohmann::json params = nlohmann::json::object();  // key -> description
};

// The twelve attacks, in a fixed order.
const std::vector<AttackInfo>& attack_catalog();
const AttackInfo& attack_info(const std::string& name);  // UsageError for unknown names

struct AttackSpec {
  std::string name;
  double rate = 0.1;
  std::uint64_t seed = 0;
  // Attack-specific: "lexicon" / "lexicon_path" (synonym), "map" (homoglyph),
  // "generator", "prompt_template", "pivot_language" (backend attacks).
  nlohmann::json params = nlohmann::json::object();

  // Throws UsageError naming the offending field.
  void validate() const;
  std::string params_fingerprint() const;
};

nlohmann::ordered_json to_json(const AttackSpec& spec);
AttackSpec attack_spec_from_json(const nlohmann::json& object);
// A JSON array of specs, or one object per line.
std::vector<AttackSpec> parse_attack_specs(const std::string& content);

// ASCII letters and digits to visually confusable codepoints.
const std::map<char32_t, char32_t>& default_homoglyphs();
inline constexpr char32_t kFormatChars[] = {0x200B, 0x200C, 0x200D, 0x2060};

struct AttackResult {
  Record record;
  AttackProvenance provenance;
  std::size_t eligible = 0;
  std::size_t perturbed = 0;
};

// Budget: ceil(rate * eligible units), exactly. Deterministic in (spec,
// record): the random stream is keyed by (seed, base id, attack name).
// Throws DataError for label-0 input, BackendError from backend attacks.
AttackResult apply_attack(const AttackSpec& spec, const Record& record, RequestLog* log = nullptr);

enum class AttackMode { replace, append };
AttackMode parse_attack_mode(const std::string& name);
const char* to_string(AttackMode mode);

struct AttackFailure {
  std::string base_id;
  std::string attack;
  std::string error;
};

struct AttackedDataset {
  std::vector<Record> records;
  std::vector<AttackProvenance> provenance;
  std::vector<AttackFailure> failures;
};

// Human records pass through unchanged. Each machine record is followed by its
// variants in spec order (append) or replaced by them (replace).
AttackedDataset attack_dataset(std::span<const AttackSpec> specs, std::span<const Record> records,
                               AttackMode mode = AttackMode::append, std::size_t parallelism = 1,
                               RequestLog* log = nullptr);

}  // namespace forgeval
