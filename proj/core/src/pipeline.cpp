#include "forgeval/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <map>
#include <set>
#include <unordered_map>

#include "forgeval/fingerprint.hpp"
#include "forgeval/report.hpp"
#include "forgeval/text.hpp"
#include "io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace forgeval {
namespace {

constexpr const char* kRunSchema = "forgeval.run/1";

// Typed reads from a config object; every problem is recorded, never thrown.
class Fields {
 public:
  Fields(const json& obj, std::vector<FieldError>& errors) : obj_(obj), errors_(errors) {
    if (!obj_.is_object()) error("", "config must be an object");
  }

  bool has(const char* key) const { return obj_.is_object() && obj_.contains(key) && !obj_.at(key).is_null(); }
  const json& at(const char* key) const { return obj_.at(key); }

  void error(const std::string& field, const std::string& message) { errors_.push_back({field, message}); }

  std::optional<std::string> str(const char* key, bool required = false) {
    if (!has(key)) {
      if (required) error(key, "required");
      return std::nullopt;
    }
    const json& v = obj_.at(key);
    if (!v.is_string()) {
      error(key, "expected a string");
      return std::nullopt;
    }
    if (required && v.get<std::string>().empty()) {
      error(key, "must not be empty");
      return std::nullopt;
    }
    return v.get<std::string>();
  }

  std::optional<double> num(const char* key) {
    if (!has(key)) return std::nullopt;
    const json& v = obj_.at(key);
    if (!v.is_number()) {
      error(key, "expected a number");
      return std::nullopt;
    }
    return v.get<double>();
  }

  std::optional<std::uint64_t> uint(const char* key) {
    if (!has(key)) return std::nullopt;
    const json& v = obj_.at(key);
    if (!(v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0))) {
      error(key, "expected a non-negative integer");
      return std::nullopt;
    }
    return v.get<std::uint64_t>();
  }

  std::size_t positive(const char* key, std::size_t fallback) {
    const auto v = uint(key);
    if (!v) return fallback;
    if (*v == 0) {
      error(key, "must be >= 1");
      return fallback;
    }
    return static_cast<std::size_t>(*v);
  }

  template <typename F>
  auto parsed(const char* key, F parse) -> std::optional<decltype(parse(std::string()))> {
    const auto s = str(key);
    if (!s) return std::nullopt;
    try {
      return parse(*s);
    } catch (const Error& e) {
      error(key, e.what());
      return std::nullopt;
    }
  }

  void reject_unknown(std::initializer_list<const char*> known) {
    if (!obj_.is_object()) return;
    for (const auto& [key, value] : obj_.items()) {
      if (key == "output_dir") continue;
      if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
        error(key, "unknown field");
      }
    }
  }

 private:
  const json& obj_;
  std::vector<FieldError>& errors_;
};

void throw_if(const std::vector<FieldError>& errors) {
  if (!errors.empty()) throw ConfigError(errors);
}

DetectorSource read_source(Fields& f, bool allow_lm_corpus) {
  DetectorSource s;
  s.detector = f.str("detector").value_or("");
  s.lm = f.str("lm");
  s.scorer_command = f.str("scorer_command");
  s.external_command = f.str("external_command");
  s.external_url = f.str("external_url");
  if (const auto t = f.uint("timeout_ms")) {
    if (*t == 0) {
      f.error("timeout_ms", "must be >= 1");
    } else {
      s.timeout_ms = static_cast<int>(*t);
    }
  }
  const int externals = (s.external_command ? 1 : 0) + (s.external_url ? 1 : 0);
  if (externals > 1) f.error("external_command", "set only one of external_command and external_url");
  if (externals == 0) {
    if (s.detector.empty()) {
      f.error("detector", "required");
    } else if (!DetectorRegistry::with_builtins().contains(s.detector)) {
      f.error("detector", "unknown detector '" + s.detector + "' (built-ins: likelihood, rank, logrank, entropy, "
                          "gltr, lrr; others attach via external_command or external_url)");
    } else if (!s.lm && !s.scorer_command && !(allow_lm_corpus && f.has("lm_corpus"))) {
      f.error("lm", "built-in detectors need lm (n-gram artifact) or scorer_command");
    }
  }
  return s;
}

json source_json(const DetectorSource& s) {
  json j;
  j["detector"] = s.detector;
  j["lm"] = s.lm ? json(*s.lm) : json(nullptr);
  j["scorer_command"] = s.scorer_command ? json(*s.scorer_command) : json(nullptr);
  j["external_command"] = s.external_command ? json(*s.external_command) : json(nullptr);
  j["external_url"] = s.external_url ? json(*s.external_url) : json(nullptr);
  j["timeout_ms"] = s.timeout_ms;
  return j;
}

template <typename T>
json opt(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

SplitRatio read_split(const json& v, Fields& f) {
  try {
    if (v.is_string()) return SplitRatio::parse(v.get<std::string>()).normalized();
    if (v.is_array() && v.size() == 3) {
      return SplitRatio{v[0].get<double>(), v[1].get<double>(), v[2].get<double>()}.normalized();
    }
    if (v.is_object()) {
      return SplitRatio{v.at("train").get<double>(), v.at("val").get<double>(), v.at("test").get<double>()}
          .normalized();
    }
    f.error("split", "expected \"8:1:1\", [8, 1, 1] or {train, val, test}");
  } catch (const json::exception& e) {
    f.error("split", e.what());
  } catch (const Error& e) {
    f.error("split", e.what());
  }
  return {};
}

fs::path dataset_file(const std::string& path, const std::string& default_name) {
  const fs::path p(path);
  return fs::is_directory(p) ? p / default_name : p;
}

std::vector<Record> load_records(const fs::path& path, const StageHooks& hooks) {
  LoadResult r = load_dataset(path);
  for (const auto& w : r.warnings) {
    if (hooks.log) hooks.log("warning: " + w);
  }
  return std::move(r.records);
}

// Manifest for the attack, calibrate and evaluate stages.
class StageManifest {
 public:
  StageManifest(const fs::path& out_dir, JobKind kind, const json& snapshot, std::uint64_t seed)
      : path_(out_dir / "manifest.json") {
    j_["schema_version"] = kRunSchema;
    j_["stage"] = to_string(kind);
    j_["status"] = "running";
    j_["seed"] = seed;
    j_["config_snapshot"] = snapshot;
    j_["created_at"] = utc_timestamp();
    write();
  }

  template <typename V>
  void set(const std::string& key, V&& value) {
    j_[key] = std::forward<V>(value);
  }
  ordered_json& json_value() { return j_; }

  void complete() {
    j_["status"] = "complete";
    write();
  }

 private:
  void write() { io::write_file(path_, j_.dump(2, ' ', false, json::error_handler_t::replace) + "\n"); }

  fs::path path_;
  ordered_json j_;
};

void mark_failed(const fs::path& out_dir, const std::string& message) {
  const fs::path path = out_dir / "manifest.json";
  std::error_code ec;
  if (!fs::exists(path, ec)) return;
  try {
    ordered_json j = ordered_json::parse(io::read_file(path));
    j["status"] = "failed";
    j["error"] = message;
    io::write_file(path, j.dump(2, ' ', false, json::error_handler_t::replace) + "\n");
  } catch (const std::exception&) {
  }
}

void say(const StageHooks& hooks, const std::string& line) {
  if (hooks.log) hooks.log(line);
}
void advance(const StageHooks& hooks, double p) {
  if (hooks.progress) hooks.progress(p);
}

json failures_json(std::span<const Record> records, const BatchScores& scores) {
  json out = json::array();
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!scores.outcomes[i].ok()) out.push_back({{"id", records[i].id}, {"error", scores.outcomes[i].error}});
  }
  return out;
}

std::vector<LabeledScore> labeled(std::span<const Record> records, const BatchScores& scores, Sign sign) {
  std::vector<LabeledScore> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (scores.outcomes[i].ok()) out.push_back({effective_score(sign, scores.outcomes[i].score->score), records[i].label});
  }
  return out;
}

BatchScores score_all(const LoadedDetector& d, std::span<const Record> records, std::size_t parallelism,
                      const StageHooks& hooks, const std::string& what) {
  say(hooks, "scoring " + std::to_string(records.size()) + " " + what + " records with " + d.handle.name);
  BatchScores s = batch_score(*d.detector, records, parallelism);
  if (s.failures()) say(hooks, std::to_string(s.failures()) + " " + what + " records failed to score");
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!s.outcomes[i].ok()) say(hooks, "score failed for " + records[i].id + ": " + s.outcomes[i].error);
  }
  return s;
}

LoadedDetector load_detector_with(const DetectorSource& source, std::shared_ptr<const TokenScorer> scorer) {
  LoadedDetector out;
  if (source.external_command || source.external_url) {
    DetectorRegistry registry;
    const DetectorKind kind = source.external_command ? DetectorKind::external_process : DetectorKind::external_http;
    out.handle = register_external(registry, kind, source.external_command ? *source.external_command : *source.external_url,
                                   source.timeout_ms);
    if (!source.detector.empty() && source.detector != out.handle.name) {
      throw UsageError("external detector announced itself as '" + out.handle.name + "', config names '" +
                       source.detector + "'");
    }
    out.detector = registry.create(out.handle.name);
    out.scorer_fingerprint = sha256_hex(json{{"external", kind == DetectorKind::external_process ? "process" : "http"},
                                             {"name", out.handle.name}}
                                            .dump());
    return out;
  }
  const DetectorRegistry registry = DetectorRegistry::with_builtins();
  out.handle = registry.resolve(source.detector);
  if (!scorer) {
    if (source.lm) {
      scorer = std::make_shared<NGramLM>(NGramLM::load(*source.lm));
    } else if (source.scorer_command) {
      scorer = std::make_shared<ExternalTokenScorer>(
          std::make_shared<ProcessChannel>(*source.scorer_command, source.timeout_ms));
    } else {
      throw UsageError("detector '" + source.detector + "' needs lm or scorer_command");
    }
  }
  out.scorer_fingerprint = scorer->fingerprint();
  out.detector = registry.create(source.detector, std::move(scorer));
  return out;
}

Prediction make_prediction(const Record& r, const RawScore& s, Sign sign, const CalibrationModel& model) {
  Prediction p;
  p.record_id = r.id;
  p.y_true = r.label;
  p.score = effective_score(sign, s.score);
  p.probability = model.apply(p.score);
  p.y_pred = model.decide(p.score);
  p.attack = r.attack;
  p.latency_ms = s.latency_ms;
  p.source = r.source;
  p.lang = r.lang;
  p.model = r.model;
  return p;
}

std::optional<double> peak_gpu(const BatchScores& scores) {
  std::optional<double> peak;
  for (const auto& o : scores.outcomes) {
    if (o.ok() && o.score->gpu_peak_gib) peak = std::max(peak.value_or(0.0), *o.score->gpu_peak_gib);
  }
  return peak;
}

json run_attack(const AttackConfig& c, const json& snapshot, const fs::path& out_dir, const StageHooks& hooks) {
  StageManifest manifest(out_dir, JobKind::attack, snapshot, c.seed.value_or(c.attacks.empty() ? 0 : c.attacks[0].seed));
  const fs::path input = dataset_file(c.input, c.split + ".jsonl");
  std::vector<Record> records = load_records(input, hooks);
  manifest.set("input_fingerprint", dataset_fingerprint(records));
  say(hooks, "attacking " + std::to_string(records.size()) + " records from " + input.generic_string());
  advance(hooks, 0.1);
  RequestLog requests;
  AttackedDataset out = attack_dataset(c.attacks, records, c.mode, c.parallelism, &requests);
  for (const auto& f : out.failures) say(hooks, "attack " + f.attack + " failed on " + f.base_id + ": " + f.error);
  advance(hooks, 0.9);
  write_records(out.records, out_dir / "attacked.jsonl");
  write_provenance(out.provenance, out_dir / "provenance.jsonl");
  json failures = json::array();
  for (const auto& f : out.failures) failures.push_back({{"base_id", f.base_id}, {"attack", f.attack}, {"error", f.error}});
  manifest.set("output_fingerprint", dataset_fingerprint(out.records));
  manifest.set("variants", out.provenance.size());
  manifest.set("failures", failures);
  manifest.set("requests", requests.to_json());
  manifest.complete();
  say(hooks, "wrote " + std::to_string(out.records.size()) + " records, " + std::to_string(out.provenance.size()) +
                 " attacked variants");
  advance(hooks, 1.0);
  return {{"records", out.records.size()}, {"variants", out.provenance.size()}, {"failures", out.failures.size()}};
}

json run_calibrate(const CalibrateConfig& c, const json& snapshot, const fs::path& out_dir, const StageHooks& hooks) {
  StageManifest manifest(out_dir, JobKind::calibrate, snapshot, c.seed);
  const std::vector<Record> train = load_records(dataset_file(c.train, "train.jsonl"), hooks);
  std::vector<Record> val;
  if (c.val) val = load_records(dataset_file(*c.val, "val.jsonl"), hooks);
  manifest.set("train_fingerprint", dataset_fingerprint(train));
  manifest.set("val_fingerprint", c.val ? json(dataset_fingerprint(val)) : json(nullptr));

  std::shared_ptr<const TokenScorer> scorer;
  if (c.lm_corpus && !c.source.lm && !c.source.scorer_command) {
    const std::vector<Record> corpus = load_records(dataset_file(*c.lm_corpus, "train.jsonl"), hooks);
    std::vector<std::string> texts;
    for (const auto& r : corpus) texts.push_back(r.text);
    say(hooks, "training order-" + std::to_string(c.lm_order) + " character LM on " + std::to_string(texts.size()) +
                   " texts");
    auto lm = std::make_shared<NGramLM>(NGramLM::train(texts, c.lm_order, c.lm_alpha));
    lm->save(out_dir / "lm.json");
    manifest.set("lm_artifact", "lm.json");
    scorer = lm;
  }
  LoadedDetector det = load_detector_with(c.source, scorer);
  manifest.set("detector", to_json(det.handle));
  manifest.set("scorer_fingerprint", det.scorer_fingerprint);
  advance(hooks, 0.1);

  const BatchScores train_scores = score_all(det, train, c.parallelism, hooks, "train");
  advance(hooks, 0.6);
  FitOptions options;
  options.l2_lambda = c.l2_lambda;
  options.policy = c.policy;
  options.sample_k = c.sample_k;
  options.seed = c.seed;
  options.detector_name = det.handle.name;
  json val_failures = json::array();
  if (c.val) {
    const BatchScores val_scores = score_all(det, val, c.parallelism, hooks, "val");
    options.validation = labeled(val, val_scores, det.handle.sign);
    val_failures = failures_json(val, val_scores);
  } else if (c.policy == ThresholdPolicy::max_f1_val) {
    throw UsageError("policy max_f1_val needs a validation set (val)");
  }
  advance(hooks, 0.9);

  const std::vector<LabeledScore> data = labeled(train, train_scores, det.handle.sign);
  FitTrace trace;
  CalibrationModel model = c.mapping == Mapping::identity_probability ? identity_calibration(det.handle.name, options)
                                                                       : fit(data, options, &trace);
  model.save(out_dir / kCalibrationFile);
  say(hooks, "calibrated " + det.handle.name + ": alpha=" + text::format_double(model.alpha) +
                 " beta=" + text::format_double(model.beta) + " threshold=" + text::format_double(model.threshold));

  // Training accuracy at the chosen threshold, for the train page.
  std::size_t correct = 0;
  for (const auto& d : data) correct += model.decide(d.score) == d.label ? 1 : 0;
  manifest.set("calibration_fingerprint", model.fingerprint());
  manifest.set("fit", json{{"iterations", trace.iterations},
                       {"gradient_norm", trace.gradient_norm},
                       {"gradient_fallbacks", trace.gradient_fallbacks},
                       {"objective", trace.objective},
                       {"train_accuracy", data.empty() ? json(nullptr)
                                                       : json(static_cast<double>(correct) /
                                                              static_cast<double>(data.size()))}});
  manifest.set("score_failures", json{{"train", failures_json(train, train_scores)}, {"val", val_failures}});
  manifest.complete();
  advance(hooks, 1.0);
  return {{"calibration", kCalibrationFile},
          {"alpha", model.alpha},
          {"beta", model.beta},
          {"threshold", model.threshold},
          {"calibration_fingerprint", model.fingerprint()}};
}

json run_evaluate(const EvaluateConfig& c, const json& snapshot, const fs::path& out_dir, const StageHooks& hooks) {
  StageManifest manifest(out_dir, JobKind::evaluate, snapshot, c.seed);
  const CalibrationModel model = load_calibration(c.model);
  const CalibrationModel attacked_model = c.attacked_model ? load_calibration(*c.attacked_model) : model;
  if (c.attacked) require_same_calibration(model.fingerprint(), attacked_model.fingerprint());

  LoadedDetector det = load_detector(c.source);
  if (!model.detector_name.empty() && model.detector_name != det.handle.name) {
    throw UsageError("calibration model belongs to detector '" + model.detector_name + "', not '" + det.handle.name + "'");
  }
  const std::vector<Record> test = load_records(dataset_file(c.test, "test.jsonl"), hooks);
  const std::string dataset_fp = dataset_fingerprint(test);
  manifest.set("dataset_fingerprint", dataset_fp);
  manifest.set("calibration_fingerprint", model.fingerprint());
  manifest.set("detector", to_json(det.handle));
  manifest.set("scorer_fingerprint", det.scorer_fingerprint);
  advance(hooks, 0.05);

  const BatchScores clean_scores = score_all(det, test, c.parallelism, hooks, "test");
  std::vector<Prediction> clean;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (clean_scores.outcomes[i].ok()) clean.push_back(make_prediction(test[i], *clean_scores.outcomes[i].score, det.handle.sign, model));
  }
  if (clean.empty()) throw DataError("no test record could be scored");
  advance(hooks, 0.5);

  RunArtifacts run;
  run.report.detector = det.handle.name;
  run.report.calibration_fingerprint = model.fingerprint();
  run.report.dataset_fingerprint = dataset_fp;
  EvalReport clean_row = evaluate_predictions(det.handle.name, dataset_fp, clean, clean_scores.trace, c.slices);
  clean_row.gpu_peak_gib = peak_gpu(clean_scores);
  run.report.rows.push_back(std::move(clean_row));
  run.predictions = clean;
  json score_failures = {{"test", failures_json(test, clean_scores)}};

  if (c.attacked) {
    const fs::path attacked_path = dataset_file(*c.attacked, "attacked.jsonl");
    const fs::path provenance_path =
        c.provenance ? fs::path(*c.provenance) : attacked_path.parent_path() / "provenance.jsonl";
    const std::vector<AttackProvenance> provenance = read_provenance(provenance_path);
    std::unordered_map<std::string, std::string> base_of;
    for (const auto& p : provenance) base_of.emplace(p.id, p.base_id);
    std::map<std::string, std::vector<Record>> groups;
    for (auto& r : load_records(attacked_path, hooks)) {
      if (r.attack) groups[*r.attack].push_back(std::move(r));
    }
    manifest.set("attacked_fingerprint", dataset_fingerprint([&] {
                   std::vector<Record> all;
                   for (const auto& [name, g] : groups) all.insert(all.end(), g.begin(), g.end());
                   return all;
                 }()));

    std::vector<Prediction> human_clean;
    std::unordered_map<std::string, const Prediction*> clean_by_id;
    for (const auto& p : clean) {
      if (p.y_true == 0) human_clean.push_back(p);
      clean_by_id.emplace(p.record_id, &p);
    }
    std::vector<Prediction> all_variants;
    std::size_t done = 0;
    for (const auto& [name, records] : groups) {
      const BatchScores scores = score_all(det, records, c.parallelism, hooks, name);
      score_failures[name] = failures_json(records, scores);
      std::vector<Prediction> variants;
      for (std::size_t i = 0; i < records.size(); ++i) {
        if (!scores.outcomes[i].ok()) continue;
        Prediction p = make_prediction(records[i], *scores.outcomes[i].score, det.handle.sign, attacked_model);
        const auto base = base_of.find(p.record_id);
        if (base == base_of.end()) throw DataError("attacked record '" + p.record_id + "' has no provenance entry");
        p.base_id = base->second;
        if (!clean_by_id.count(*p.base_id)) {
          say(hooks, "skipping " + p.record_id + ": its clean base has no prediction");
          continue;
        }
        variants.push_back(std::move(p));
      }
      const AsrResult a = asr(clean, variants, provenance, model.fingerprint(), attacked_model.fingerprint());
      std::vector<Prediction> row_preds = human_clean;
      row_preds.insert(row_preds.end(), variants.begin(), variants.end());
      if (!row_preds.empty()) {
        EvalReport row = evaluate_predictions(det.handle.name, dataset_fp, row_preds, scores.trace, c.slices);
        row.attack = name;
        row.asr = a.asr;
        row.gpu_peak_gib = peak_gpu(scores);
        run.report.rows.push_back(std::move(row));
      }
      say(hooks, name + ": ASR " + (a.asr.value ? text::format_double(*a.asr.value) : "absent (" + a.asr.reason + ")"));
      all_variants.insert(all_variants.end(), variants.begin(), variants.end());
      advance(hooks, 0.5 + 0.45 * static_cast<double>(++done) / static_cast<double>(groups.size()));
    }
    const AsrResult overall = asr(clean, all_variants, provenance, model.fingerprint(), attacked_model.fingerprint());
    run.report.overall_asr = overall.asr;
    run.report.asr_eligible = overall.eligible;
    run.report.asr_flipped = overall.flipped;
    run.predictions.insert(run.predictions.end(), all_variants.begin(), all_variants.end());
  }

  manifest.set("score_failures", score_failures);
  manifest.set("status", "complete");
  run.report.run_fingerprint = json_fingerprint({{"config", snapshot},
                                                 {"dataset", dataset_fp},
                                                 {"calibration", model.fingerprint()},
                                                 {"detector", det.handle.name},
                                                 {"scorer", det.scorer_fingerprint}});
  run.manifest = json(manifest.json_value());
  run = write_run(out_dir, std::move(run));
  advance(hooks, 1.0);
  const auto& row = run.report.rows.front();
  return {{"run_fingerprint", run.report.run_fingerprint},
          {"predictions", run.predictions.size()},
          {"accuracy", to_json(row.effectiveness.accuracy)},
          {"auroc", to_json(row.effectiveness.auroc)},
          {"asr", run.report.overall_asr ? to_json(*run.report.overall_asr) : json(nullptr)}};
}

}  // namespace

ConfigError::ConfigError(std::vector<FieldError> errors)
    : UsageError([&] {
        std::string msg = "invalid config:";
        for (const auto& e : errors) msg += " " + (e.field.empty() ? std::string("(root)") : e.field) + ": " + e.message + ";";
        if (!msg.empty() && msg.back() == ';') msg.pop_back();
        return msg;
      }()),
      errors_(std::move(errors)) {}

JobKind parse_job_kind(const std::string& name) {
  if (name == "build") return JobKind::build;
  if (name == "attack") return JobKind::attack;
  if (name == "calibrate") return JobKind::calibrate;
  if (name == "evaluate") return JobKind::evaluate;
  throw UsageError("unknown job kind '" + name + "' (build, attack, calibrate, evaluate)");
}

const char* to_string(JobKind kind) {
  switch (kind) {
    case JobKind::build:
      return "build";
    case JobKind::attack:
      return "attack";
    case JobKind::calibrate:
      return "calibrate";
    case JobKind::evaluate:
      return "evaluate";
  }
  return "build";
}

BuildSpec build_config_from_json(const json& config) {
  std::vector<FieldError> errors;
  Fields f(config, errors);
  f.reject_unknown({"human_corpus", "format", "generators", "generator", "pairing", "samples_per_text", "split",
                    "seed", "max_failure_fraction", "parallelism"});
  BuildSpec s;
  s.human_corpus_path = f.str("human_corpus", true).value_or("");
  if (auto v = f.parsed("format", parse_format)) s.format = *v;
  if (auto v = f.parsed("pairing", parse_pairing)) s.pairing = *v;
  s.samples_per_text = f.positive("samples_per_text", s.samples_per_text);
  if (f.has("split")) s.split = read_split(f.at("split"), f);
  if (auto v = f.uint("seed")) s.seed = *v;
  if (auto v = f.num("max_failure_fraction")) {
    if (*v < 0 || *v > 1) {
      f.error("max_failure_fraction", "must lie in [0, 1]");
    } else {
      s.max_failure_fraction = *v;
    }
  }
  s.parallelism = f.positive("parallelism", s.parallelism);

  json gens = json::array();
  if (f.has("generators")) {
    gens = f.at("generators");
    if (!gens.is_array()) {
      f.error("generators", "expected an array of generator objects");
      gens = json::array();
    }
  }
  if (f.has("generator")) gens.push_back(f.at("generator"));
  if (gens.empty()) f.error("generators", "at least one generator is required");
  std::set<std::string> models;
  for (std::size_t i = 0; i < gens.size(); ++i) {
    const std::string field = "generators[" + std::to_string(i) + "]";
    try {
      GenerationConfig g = generation_config_from_json(gens[i]);
      g.validate();
      if (!models.insert(g.model).second) f.error(field + ".model", "'" + g.model + "' is used by another generator");
      s.generators.push_back(std::move(g));
    } catch (const Error& e) {
      const std::string what = e.what();
      const auto colon = what.find(':');
      if (colon != std::string::npos && what.find(' ') > colon) {
        f.error(field + "." + what.substr(0, colon), what.substr(colon + 2 <= what.size() ? colon + 2 : colon + 1));
      } else {
        f.error(field, what);
      }
    }
  }
  throw_if(errors);
  return s;
}

AttackConfig attack_config_from_json(const json& config) {
  std::vector<FieldError> errors;
  Fields f(config, errors);
  f.reject_unknown({"input", "split", "attacks", "attacks_file", "mode", "parallelism", "seed"});
  AttackConfig c;
  c.input = f.str("input", true).value_or("");
  if (auto v = f.str("split")) {
    if (*v != "train" && *v != "val" && *v != "test" && *v != "dataset") {
      f.error("split", "expected train, val, test or dataset");
    } else {
      c.split = *v;
    }
  }
  if (auto v = f.parsed("mode", parse_attack_mode)) c.mode = *v;
  c.parallelism = f.positive("parallelism", c.parallelism);
  c.seed = f.uint("seed");

  json specs = json::array();
  if (f.has("attacks")) {
    specs = f.at("attacks");
    if (!specs.is_array()) {
      f.error("attacks", "expected an array of attack specs");
      specs = json::array();
    }
  }
  if (auto path = f.str("attacks_file")) {
    try {
      for (const auto& s : parse_attack_specs(io::read_file(*path))) specs.push_back(json(to_json(s)));
    } catch (const Error& e) {
      f.error("attacks_file", e.what());
    }
  }
  if (specs.empty() && errors.empty()) f.error("attacks", "at least one attack spec is required");
  std::set<std::string> names;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const std::string field = "attacks[" + std::to_string(i) + "]";
    try {
      AttackSpec s = attack_spec_from_json(specs[i]);
      if (c.seed) s.seed = *c.seed;
      if (!names.insert(s.name).second) f.error(field + ".name", "'" + s.name + "' appears twice");
      c.attacks.push_back(std::move(s));
    } catch (const Error& e) {
      f.error(field, e.what());
    }
  }
  throw_if(errors);
  return c;
}

CalibrateConfig calibrate_config_from_json(const json& config) {
  std::vector<FieldError> errors;
  Fields f(config, errors);
  f.reject_unknown({"detector", "lm", "scorer_command", "external_command", "external_url", "timeout_ms", "train",
                    "val", "policy", "mapping", "l2_lambda", "sample_k", "seed", "parallelism", "lm_corpus",
                    "lm_order", "lm_alpha"});
  CalibrateConfig c;
  c.source = read_source(f, true);
  c.train = f.str("train", true).value_or("");
  c.val = f.str("val");
  if (auto v = f.parsed("policy", parse_threshold_policy)) c.policy = *v;
  if (auto v = f.str("mapping")) {
    if (*v == "logistic") {
      c.mapping = Mapping::logistic;
    } else if (*v == "identity_probability") {
      c.mapping = Mapping::identity_probability;
    } else {
      f.error("mapping", "expected logistic or identity_probability");
    }
  }
  if (auto v = f.num("l2_lambda")) {
    if (*v < 0) {
      f.error("l2_lambda", "must be >= 0");
    } else {
      c.l2_lambda = *v;
    }
  }
  if (f.has("sample_k")) c.sample_k = f.positive("sample_k", 1);
  if (auto v = f.uint("seed")) c.seed = *v;
  c.parallelism = f.positive("parallelism", c.parallelism);
  c.lm_corpus = f.str("lm_corpus");
  c.lm_order = static_cast<int>(f.positive("lm_order", 3));
  if (auto v = f.num("lm_alpha")) {
    if (!(*v > 0)) {
      f.error("lm_alpha", "must be > 0");
    } else {
      c.lm_alpha = *v;
    }
  }
  if (c.policy == ThresholdPolicy::max_f1_val && !c.val) f.error("val", "required by policy max_f1_val");
  throw_if(errors);
  return c;
}

EvaluateConfig evaluate_config_from_json(const json& config) {
  std::vector<FieldError> errors;
  Fields f(config, errors);
  f.reject_unknown({"detector", "lm", "scorer_command", "external_command", "external_url", "timeout_ms", "model",
                    "test", "attacked", "provenance", "attacked_model", "slices", "parallelism", "seed"});
  EvaluateConfig c;
  c.source = read_source(f, false);
  c.model = f.str("model", true).value_or("");
  c.test = f.str("test", true).value_or("");
  c.attacked = f.str("attacked");
  c.provenance = f.str("provenance");
  c.attacked_model = f.str("attacked_model");
  if (f.has("slices")) {
    const json& s = f.at("slices");
    std::vector<std::string> names;
    if (s.is_string()) {
      std::string cur;
      for (char ch : s.get<std::string>() + ",") {
        if (ch == ',') {
          if (!cur.empty()) names.push_back(cur);
          cur.clear();
        } else if (ch != ' ') {
          cur += ch;
        }
      }
    } else if (s.is_array()) {
      for (const auto& v : s) names.push_back(v.is_string() ? v.get<std::string>() : v.dump());
    } else {
      f.error("slices", "expected a list of slice keys");
    }
    for (const auto& n : names) {
      try {
        const SliceKey k = parse_slice_key(n);
        if (std::find(c.slices.begin(), c.slices.end(), k) == c.slices.end()) c.slices.push_back(k);
      } catch (const Error& e) {
        f.error("slices", e.what());
      }
    }
  }
  c.parallelism = f.positive("parallelism", c.parallelism);
  if (auto v = f.uint("seed")) c.seed = *v;
  throw_if(errors);
  return c;
}

std::vector<FieldError> validate_config(JobKind kind, const json& config) {
  try {
    normalized_config(kind, config);
  } catch (const ConfigError& e) {
    return e.errors();
  } catch (const Error& e) {
    return {{"", e.what()}};
  }
  return {};
}

json normalized_config(JobKind kind, const json& config) {
  switch (kind) {
    case JobKind::build:
      return json(to_json(build_config_from_json(config)));
    case JobKind::attack: {
      const AttackConfig c = attack_config_from_json(config);
      json specs = json::array();
      for (const auto& s : c.attacks) specs.push_back(json(to_json(s)));
      return {{"input", c.input},
              {"split", c.split},
              {"attacks", specs},
              {"mode", to_string(c.mode)},
              {"parallelism", c.parallelism},
              {"seed", opt(c.seed)}};
    }
    case JobKind::calibrate: {
      const CalibrateConfig c = calibrate_config_from_json(config);
      json j = source_json(c.source);
      j["train"] = c.train;
      j["val"] = opt(c.val);
      j["policy"] = to_string(c.policy);
      j["mapping"] = c.mapping == Mapping::logistic ? "logistic" : "identity_probability";
      j["l2_lambda"] = c.l2_lambda;
      j["sample_k"] = opt(c.sample_k);
      j["seed"] = c.seed;
      j["parallelism"] = c.parallelism;
      j["lm_corpus"] = opt(c.lm_corpus);
      j["lm_order"] = c.lm_order;
      j["lm_alpha"] = c.lm_alpha;
      return j;
    }
    case JobKind::evaluate: {
      const EvaluateConfig c = evaluate_config_from_json(config);
      json j = source_json(c.source);
      j["model"] = c.model;
      j["test"] = c.test;
      j["attacked"] = opt(c.attacked);
      j["provenance"] = opt(c.provenance);
      j["attacked_model"] = opt(c.attacked_model);
      json slices = json::array();
      for (SliceKey k : c.slices) slices.push_back(to_string(k));
      j["slices"] = slices;
      j["parallelism"] = c.parallelism;
      j["seed"] = c.seed;
      return j;
    }
  }
  return json::object();
}

std::vector<std::string> stage_artifacts(JobKind kind, const json& config) {
  switch (kind) {
    case JobKind::build:
      return {"manifest.json", "dataset.jsonl", "train.jsonl", "val.jsonl", "test.jsonl"};
    case JobKind::attack:
      return {"manifest.json", "attacked.jsonl", "provenance.jsonl"};
    case JobKind::calibrate: {
      std::vector<std::string> out = {"manifest.json", kCalibrationFile};
      if (config.is_object() && config.contains("lm_corpus") && !config.contains("lm") && !config.contains("scorer_command")) {
        out.push_back("lm.json");
      }
      return out;
    }
    case JobKind::evaluate:
      return {"manifest.json", "predictions.jsonl", "report.json", "report.csv"};
  }
  return {};
}

json plan_stage(JobKind kind, const json& config, const fs::path& out_dir) {
  const json normalized = normalized_config(kind, config);
  return {{"stage", to_string(kind)},
          {"config", normalized},
          {"output_dir", out_dir.generic_string()},
          {"artifacts", stage_artifacts(kind, config)}};
}

json run_stage(JobKind kind, const json& config, const fs::path& out_dir, const StageHooks& hooks) {
  if (out_dir.empty()) throw UsageError("output_dir: required");
  const json snapshot = normalized_config(kind, config);
  fs::create_directories(out_dir);
  try {
    switch (kind) {
      case JobKind::build: {
        BuildSpec spec = build_config_from_json(config);
        spec.output_dir = out_dir;
        const BuildResult r = build(spec, hooks.log, hooks.progress);
        return {{"records", r.dataset.size()},
                {"train", r.splits.train.size()},
                {"val", r.splits.val.size()},
                {"test", r.splits.test.size()},
                {"generation_failures", r.failed}};
      }
      case JobKind::attack:
        return run_attack(attack_config_from_json(config), snapshot, out_dir, hooks);
      case JobKind::calibrate:
        return run_calibrate(calibrate_config_from_json(config), snapshot, out_dir, hooks);
      case JobKind::evaluate:
        return run_evaluate(evaluate_config_from_json(config), snapshot, out_dir, hooks);
    }
  } catch (const std::exception& e) {
    mark_failed(out_dir, e.what());
    throw;
  }
  return json::object();
}

DetectorSource detector_source_from_json(const json& config) {
  std::vector<FieldError> errors;
  Fields f(config, errors);
  DetectorSource s = read_source(f, false);
  throw_if(errors);
  return s;
}

LoadedDetector load_detector(const DetectorSource& source) { return load_detector_with(source, nullptr); }

CalibrationModel load_calibration(const fs::path& path) {
  return CalibrationModel::load(fs::is_directory(path) ? path / kCalibrationFile : path);
}

CalibrationModel uncalibrated_model(const std::string& detector_name) {
  CalibrationModel m;
  m.detector_name = detector_name;
  return m;
}

ordered_json to_json(const DetectResult& r) {
  ordered_json j;
  j["verdict"] = r.verdict;
  j["confidence"] = r.confidence;
  j["score"] = r.score;
  j["probability"] = r.probability;
  j["latency_ms"] = r.latency_ms;
  j["detector"] = r.detector;
  return j;
}

DetectResult detect_text(const LoadedDetector& d, const CalibrationModel& model, const std::string& raw_text) {
  const std::string t = text::canonicalize(raw_text);
  if (t.empty()) throw UsageError("text: must not be empty");
  if (!model.detector_name.empty() && model.detector_name != d.handle.name) {
    throw UsageError("calibration model belongs to detector '" + model.detector_name + "', not '" + d.handle.name + "'");
  }
  Record r;
  r.id = "demo";
  r.text = t;
  const RawScore s = score(*d.detector, r);
  DetectResult out;
  out.detector = d.handle.name;
  out.score = s.score;
  out.latency_ms = s.latency_ms;
  const double oriented = effective_score(d.handle.sign, s.score);
  out.probability = model.apply(oriented);
  const bool machine = model.decide(oriented) == 1;
  out.verdict = machine ? "machine" : "human";
  out.confidence = machine ? out.probability : 1.0 - out.probability;
  return out;
}

}  // namespace forgeval
