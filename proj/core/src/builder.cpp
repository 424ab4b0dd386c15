#include "forgeval/builder.hpp"

#include <set>

#include "forgeval/errors.hpp"
#include "forgeval/fingerprint.hpp"
#include "forgeval/text.hpp"
#include "io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace forgeval {
namespace {

void write_manifest(const BuildSpec& spec, const DatasetManifest& manifest, const std::string& status,
                    const json& extra) {
  if (spec.output_dir.empty()) return;
  ordered_json j = to_json(manifest);
  j["status"] = status;
  for (const auto& [k, v] : extra.items()) j[k] = v;
  io::write_file(spec.output_dir / "manifest.json", j.dump(2, ' ', false, json::error_handler_t::replace) + "\n");
}

}  // namespace

Pairing parse_pairing(const std::string& name) {
  if (name == "one_to_one") return Pairing::one_to_one;
  if (name == "one_to_many") return Pairing::one_to_many;
  throw UsageError("pairing: expected one_to_one or one_to_many, got '" + name + "'");
}

const char* to_string(Pairing pairing) { return pairing == Pairing::one_to_one ? "one_to_one" : "one_to_many"; }

void BuildSpec::validate() const {
  if (human_corpus_path.empty()) throw UsageError("human_corpus: required");
  if (generators.empty()) throw UsageError("generators: at least one generator is required");
  std::set<std::string> models;
  for (std::size_t i = 0; i < generators.size(); ++i) {
    try {
      generators[i].validate();
    } catch (const UsageError& e) {
      throw UsageError("generators[" + std::to_string(i) + "]." + e.what());
    }
    if (!models.insert(generators[i].model).second) {
      throw UsageError("generators[" + std::to_string(i) + "].model: '" + generators[i].model +
                       "' is used twice; machine record ids are keyed by model name");
    }
  }
  if (pairing == Pairing::one_to_many && samples_per_text < 1) throw UsageError("samples_per_text: must be >= 1");
  if (!(max_failure_fraction >= 0.0 && max_failure_fraction <= 1.0)) {
    throw UsageError("max_failure_fraction: must lie in [0, 1]");
  }
  if (parallelism < 1) throw UsageError("parallelism: must be >= 1");
  split.normalized();
}

ordered_json to_json(const BuildSpec& spec) {
  ordered_json j;
  j["human_corpus"] = spec.human_corpus_path;
  j["format"] = to_string(spec.format);
  json gens = json::array();
  for (const auto& g : spec.generators) gens.push_back(to_json(g));
  j["generators"] = gens;
  j["pairing"] = to_string(spec.pairing);
  j["samples_per_text"] = spec.pairing == Pairing::one_to_many ? spec.samples_per_text : 1;
  j["split"] = {{"train", spec.split.train}, {"val", spec.split.val}, {"test", spec.split.test}};
  j["seed"] = spec.seed;
  j["max_failure_fraction"] = spec.max_failure_fraction;
  j["parallelism"] = spec.parallelism;
  return j;
}

BuildResult build(const BuildSpec& spec, const LogFn& log, const ProgressFn& progress) {
  const auto say = [&](const std::string& line) {
    if (log) log(line);
  };
  const auto advance = [&](double p) {
    if (progress) progress(p);
  };
  spec.validate();

  json generation = json::array();
  for (const auto& g : spec.generators) {
    generation.push_back({{"model", g.model},
                          {"config_fingerprint", g.fingerprint()},
                          {"prompt_template", g.prompt_template},
                          {"prompt_id", sha256_hex(g.prompt_template).substr(0, 16)}});
  }
  DatasetManifest manifest;
  manifest.seed = spec.seed;
  manifest.split_ratios = spec.split.normalized();
  manifest.config_snapshot = json(to_json(spec));
  manifest.config_snapshot["generation"] = generation;
  manifest.created_at = utc_timestamp();
  write_manifest(spec, manifest, "running", json::object());

  BuildResult result;
  LoadResult loaded = load_dataset(spec.human_corpus_path, spec.format);
  result.warnings = loaded.warnings;
  std::size_t dropped = 0;
  std::vector<Record> humans = normalize(loaded.records, &dropped);
  if (dropped) result.warnings.push_back(std::to_string(dropped) + " human records empty after normalization");
  if (humans.empty()) throw DataError("human corpus " + spec.human_corpus_path + " has no usable records");
  std::size_t relabeled = 0;
  for (auto& h : humans) {
    if (h.label != 0 || h.attack) ++relabeled;
    h.label = 0;
    h.attack.reset();
    h.model.reset();
  }
  if (relabeled) {
    result.warnings.push_back(std::to_string(relabeled) + " corpus records were not labeled human; coerced to label 0");
  }
  say("loaded " + std::to_string(humans.size()) + " human texts from " + spec.human_corpus_path);
  advance(0.05);

  std::vector<std::string> inputs;
  inputs.reserve(humans.size());
  for (const auto& h : humans) inputs.push_back(h.text);

  const std::size_t samples = spec.pairing == Pairing::one_to_many ? spec.samples_per_text : 1;
  // machine[g][k][i]: generator g, sample k, human text i.
  std::vector<std::vector<std::vector<GenerationOutcome>>> machine(spec.generators.size());
  RequestLog requests;
  const std::size_t passes = spec.generators.size() * samples;
  std::size_t done = 0;
  for (std::size_t g = 0; g < spec.generators.size(); ++g) {
    for (std::size_t k = 0; k < samples; ++k) {
      GenerationConfig config = spec.generators[g];
      config.seed += k;
      say("generating with " + config.model + (samples > 1 ? " sample " + std::to_string(k + 1) : std::string()));
      machine[g].push_back(batch_generate(config, inputs, spec.parallelism, &requests));
      advance(0.05 + 0.85 * static_cast<double>(++done) / static_cast<double>(passes));
    }
  }

  std::vector<std::string> failures;
  for (std::size_t i = 0; i < humans.size(); ++i) {
    result.dataset.push_back(humans[i]);
    for (std::size_t g = 0; g < spec.generators.size(); ++g) {
      for (std::size_t k = 0; k < samples; ++k) {
        ++result.requested;
        GenerationOutcome& o = machine[g][k][i];
        std::string text = o.ok() ? text::canonicalize(o.result->text) : std::string();
        if (text.empty()) {
          ++result.failed;
          failures.push_back(humans[i].id + "@" + spec.generators[g].model + ": " +
                             (o.ok() ? std::string("empty completion after normalization") : o.error));
          continue;
        }
        Record m;
        m.id = humans[i].id + "@" + spec.generators[g].model + (samples > 1 ? "." + std::to_string(k) : "");
        m.text = std::move(text);
        m.label = 1;
        m.source = humans[i].source;
        m.lang = humans[i].lang;
        m.model = spec.generators[g].model;
        result.dataset.push_back(std::move(m));
      }
    }
  }
  for (const auto& f : failures) say("generation failed: " + f);

  json extra = {{"generation_requests", result.requested},
                {"generation_failures", result.failed},
                {"failures", failures},
                {"requests", requests.to_json()},
                {"warnings", result.warnings}};
  const double fraction = static_cast<double>(result.failed) / static_cast<double>(result.requested);
  if (fraction > spec.max_failure_fraction) {
    const std::string message = "generation failed for " + std::to_string(result.failed) + " of " +
                                std::to_string(result.requested) + " requests, above the cap of " +
                                text::format_double(spec.max_failure_fraction);
    extra["error"] = message;
    write_manifest(spec, manifest, "failed", extra);
    throw BackendError(message);
  }

  result.splits = split(result.dataset, spec.split, spec.seed);
  for (const auto& w : result.splits.warnings) result.warnings.push_back(w);
  extra["warnings"] = result.warnings;
  result.splits.manifest.seed = spec.seed;
  result.splits.manifest.source_paths = loaded.source_paths;
  result.splits.manifest.config_snapshot = manifest.config_snapshot;
  if (!loaded.unknown_columns.empty()) result.splits.manifest.config_snapshot["extra_columns"] = loaded.unknown_columns;
  result.splits.manifest.created_at = manifest.created_at;

  if (!spec.output_dir.empty()) {
    write_records(result.dataset, spec.output_dir / "dataset.jsonl");
    write_records(result.splits.train, spec.output_dir / "train.jsonl");
    write_records(result.splits.val, spec.output_dir / "val.jsonl");
    write_records(result.splits.test, spec.output_dir / "test.jsonl");
    extra["dataset_fingerprint"] = dataset_fingerprint(result.dataset);
    extra["split_fingerprints"] = {{"train", dataset_fingerprint(result.splits.train)},
                                   {"val", dataset_fingerprint(result.splits.val)},
                                   {"test", dataset_fingerprint(result.splits.test)}};
    write_manifest(spec, result.splits.manifest, "complete", extra);
  }
  say("built " + std::to_string(result.dataset.size()) + " records (" + std::to_string(result.splits.train.size()) +
      "/" + std::to_string(result.splits.val.size()) + "/" + std::to_string(result.splits.test.size()) + ")");
  advance(1.0);
  return result;
}

}  // namespace forgeval
