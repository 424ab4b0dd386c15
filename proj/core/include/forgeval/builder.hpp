#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "forgeval/generator.hpp"
#include "forgeval/schema.hpp"

namespace forgeval {

enum class Pairing { one_to_one, one_to_many };
Pairing parse_pairing(const std::string& name);
const char* to_string(Pairing pairing);

struct BuildSpec {
  std::string human_corpus_path;
  Format format = Format::auto_detect;
  std::vector<GenerationConfig> generators;
  Pairing pairing = Pairing::one_to_one;
  // Completions kept per human text and generator under one_to_many.
  std::size_t samples_per_text = 2;
  SplitRatio split;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  double max_failure_fraction = 0.05;
  std::size_t parallelism = 4;

  // Throws UsageError naming the offending field.
  void validate() const;
};

// Everything except output_dir, which does not influence the dataset.
nlohmann::ordered_json to_json(const BuildSpec& spec);

struct BuildResult {
  std::vector<Record> dataset;
  SplitResult splits;
  std::vector<std::string> warnings;
  std::size_t requested = 0;
  std::size_t failed = 0;
};

using LogFn = std::function<void(const std::string&)>;
using ProgressFn = std::function<void(double)>;

// Writes dataset.jsonl, train.jsonl, val.jsonl, test.jsonl and manifest.json
// into output_dir (when set). The manifest is written first with status
// "running" and rewritten at the end. Throws BackendError when more than
// max_failure_fraction of the generation requests fail.
BuildResult build(const BuildSpec& spec, const LogFn& log = {}, const ProgressFn& progress = {});

}  // namespace forgeval
