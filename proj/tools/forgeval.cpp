#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <iterator>

#include "forgeval/config.hpp"
#include "forgeval/pipeline.hpp"
#include "forgeval/report.hpp"
#include "forgeval/schema.hpp"
#include "forgeval/scoring.hpp"
#include "forgeval/service.hpp"
#include "forgeval/text.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace forgeval;

namespace {

struct Globals {
  bool json_output = false;
  bool dry_run = false;
  std::optional<std::uint64_t> seed;
};

// Flag values keyed by config field; only flags the user actually passed.
struct Overrides {
  std::vector<std::pair<std::string, std::function<json()>>> entries;

  template <typename T>
  void add(CLI::Option* opt, const std::string& field, const T& value) {
    entries.emplace_back(field, [opt, &value]() -> json { return opt->count() ? json(value) : json(); });
  }

  void apply(json& config) const {
    for (const auto& [field, get] : entries) {
      json v = get();
      if (!v.is_null()) config[field] = std::move(v);
    }
  }
};

fs::path default_out(const char* stage) {
  const char* home = std::getenv("FORGEVAL_HOME");
  std::string stamp = utc_timestamp();
  std::erase_if(stamp, [](char c) { return c == ':' || c == '-'; });
  return fs::path(home && *home ? home : "forgeval-runs") / (std::string(stage) + "-" + stamp);
}

void emit(const Globals& g, const json& summary, const std::string& human) {
  if (g.json_output) {
    std::cout << summary.dump() << "\n";
  } else {
    std::cout << human;
  }
}

int run_pipeline_stage(const Globals& g, JobKind kind, json config, const std::string& out) {
  if (g.seed) config["seed"] = *g.seed;
  fs::path out_dir = out;
  if (out_dir.empty() && config.contains("output_dir") && config["output_dir"].is_string()) {
    out_dir = config["output_dir"].get<std::string>();
  }
  if (out_dir.empty()) out_dir = default_out(to_string(kind));
  if (g.dry_run) {
    const json plan = plan_stage(kind, config, out_dir);
    std::cout << plan.dump(g.json_output ? -1 : 2) << "\n";
    return 0;
  }
  StageHooks hooks;
  if (!g.json_output) hooks.log = [](const std::string& line) { std::cerr << line << "\n"; };
  json summary = run_stage(kind, config, out_dir, hooks);
  summary["output_dir"] = out_dir.generic_string();
  std::string human;
  for (const auto& [k, v] : summary.items()) human += k + ": " + (v.is_string() ? v.get<std::string>() : v.dump()) + "\n";
  emit(g, summary, human);
  return 0;
}

json config_from(const std::string& path) { return path.empty() ? json::object() : load_config(path); }

void add_source_flags(CLI::App* cmd, Overrides& o, std::string& detector, std::string& lm, std::string& scorer,
                      std::string& ext_cmd, std::string& ext_url, int& timeout) {
  o.add(cmd->add_option("--detector", detector, "detector name"), "detector", detector);
  o.add(cmd->add_option("--lm", lm, "n-gram LM artifact used as token scorer"), "lm", lm);
  o.add(cmd->add_option("--scorer-command", scorer, "external score_tokens process"), "scorer_command", scorer);
  o.add(cmd->add_option("--external-command", ext_cmd, "external detector process"), "external_command", ext_cmd);
  o.add(cmd->add_option("--external-url", ext_url, "external detector HTTP base URL"), "external_url", ext_url);
  o.add(cmd->add_option("--timeout-ms", timeout, "per-request timeout for external backends"), "timeout_ms", timeout);
}

int report_error(const Globals& g, const Error& e) {
  const int code = exit_code_for(e.kind());
  if (g.json_output) {
    json err = {{"kind", e.kind() == ErrorKind::usage     ? "usage"
                         : e.kind() == ErrorKind::data    ? "data"
                         : e.kind() == ErrorKind::backend ? "backend"
                                                          : "protocol"},
                {"message", e.what()},
                {"exit_code", code},
                {"fields", json::array()}};
    if (const auto* ce = dynamic_cast<const ConfigError*>(&e)) {
      for (const auto& f : ce->errors()) err["fields"].push_back({{"field", f.field}, {"message", f.message}});
    }
    std::cerr << json{{"error", err}}.dump(-1, ' ', false, json::error_handler_t::replace) << "\n";
  } else {
    std::cerr << "forgeval: error: " << e.what() << "\n";
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"forgeval: machine-generated text detection benchmark"};
  app.require_subcommand(1);
  Globals g;
  app.add_flag("--json", g.json_output, "machine-readable output; errors as a JSON object on stderr");
  app.add_flag("--dry-run", g.dry_run, "print the resolved plan and exit");
  app.add_option("--seed", g.seed, "overrides the config seed");
  app.fallthrough();

  std::string out;

  // build
  auto* build = app.add_subcommand("build", "build a labeled dataset from a human corpus");
  std::string build_config, human_corpus;
  Overrides build_o;
  build->add_option("--config", build_config, "build config file")->check(CLI::ExistingFile);
  build_o.add(build->add_option("--human-corpus", human_corpus, "human corpus path"), "human_corpus", human_corpus);
  build->add_option("--out", out, "output directory");

  // attack
  auto* attack = app.add_subcommand("attack", "apply adversarial attacks to a dataset");
  std::string attack_config, attack_in, attacks_file, attack_mode, attack_split;
  std::size_t attack_par = 0;
  Overrides attack_o;
  attack->add_option("--config", attack_config, "attack config file")->check(CLI::ExistingFile);
  attack_o.add(attack->add_option("--in", attack_in, "dataset file or build directory"), "input", attack_in);
  attack_o.add(attack->add_option("--attacks", attacks_file, "attack spec file (JSON array or JSONL)"),
               "attacks_file", attacks_file);
  attack_o.add(attack->add_option("--mode", attack_mode, "append or replace"), "mode", attack_mode);
  attack_o.add(attack->add_option("--split", attack_split, "split file used when --in is a directory"), "split",
               attack_split);
  attack_o.add(attack->add_option("--parallelism", attack_par), "parallelism", attack_par);
  attack->add_option("--out", out, "output directory");

  // calibrate
  auto* calibrate = app.add_subcommand("calibrate", "score a training split and fit the calibration");
  std::string cal_config, cal_detector, cal_lm, cal_scorer, cal_ext_cmd, cal_ext_url, cal_train, cal_val, cal_policy,
      cal_mapping, cal_corpus;
  int cal_timeout = 0;
  double cal_lambda = 0;
  std::size_t cal_k = 0, cal_par = 0;
  Overrides cal_o;
  calibrate->add_option("--config", cal_config, "calibrate config file")->check(CLI::ExistingFile);
  add_source_flags(calibrate, cal_o, cal_detector, cal_lm, cal_scorer, cal_ext_cmd, cal_ext_url, cal_timeout);
  cal_o.add(calibrate->add_option("--train", cal_train, "training records"), "train", cal_train);
  cal_o.add(calibrate->add_option("--val", cal_val, "validation records"), "val", cal_val);
  cal_o.add(calibrate->add_option("--policy", cal_policy, "fixed_half or max_f1_val"), "policy", cal_policy);
  cal_o.add(calibrate->add_option("--mapping", cal_mapping, "logistic or identity_probability"), "mapping", cal_mapping);
  cal_o.add(calibrate->add_option("--l2-lambda", cal_lambda), "l2_lambda", cal_lambda);
  cal_o.add(calibrate->add_option("--sample-k", cal_k, "fit on a seeded subsample of k records"), "sample_k", cal_k);
  cal_o.add(calibrate->add_option("--lm-corpus", cal_corpus, "train the n-gram scorer on this corpus"), "lm_corpus",
            cal_corpus);
  cal_o.add(calibrate->add_option("--parallelism", cal_par), "parallelism", cal_par);
  calibrate->add_option("--out", out, "output directory (receives calibration.txt)");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "evaluate a calibrated detector");
  std::string ev_config, ev_detector, ev_lm, ev_scorer, ev_ext_cmd, ev_ext_url, ev_model, ev_test, ev_attacked,
      ev_provenance, ev_attacked_model, ev_slices;
  int ev_timeout = 0;
  std::size_t ev_par = 0;
  Overrides ev_o;
  evaluate->add_option("--config", ev_config, "evaluate config file")->check(CLI::ExistingFile);
  add_source_flags(evaluate, ev_o, ev_detector, ev_lm, ev_scorer, ev_ext_cmd, ev_ext_url, ev_timeout);
  ev_o.add(evaluate->add_option("--model", ev_model, "calibration file or calibrate directory"), "model", ev_model);
  ev_o.add(evaluate->add_option("--test", ev_test, "test records"), "test", ev_test);
  ev_o.add(evaluate->add_option("--attacked", ev_attacked, "attacked records"), "attacked", ev_attacked);
  ev_o.add(evaluate->add_option("--provenance", ev_provenance, "attack provenance file"), "provenance", ev_provenance);
  ev_o.add(evaluate->add_option("--attacked-model", ev_attacked_model, "calibration used for the attacked side"),
           "attacked_model", ev_attacked_model);
  ev_o.add(evaluate->add_option("--slices", ev_slices, "comma-separated slice keys"), "slices", ev_slices);
  ev_o.add(evaluate->add_option("--parallelism", ev_par), "parallelism", ev_par);
  evaluate->add_option("--out", out, "run directory");

  // detect
  auto* detect = app.add_subcommand("detect", "classify one text");
  std::string dt_detector, dt_lm, dt_scorer, dt_ext_cmd, dt_ext_url, dt_model, dt_text;
  int dt_timeout = 0;
  bool dt_stdin = false;
  Overrides dt_o;
  add_source_flags(detect, dt_o, dt_detector, dt_lm, dt_scorer, dt_ext_cmd, dt_ext_url, dt_timeout);
  detect->add_option("--model", dt_model, "calibration file or calibrate directory");
  auto* text_opt = detect->add_option("--text", dt_text, "text to classify");
  detect->add_flag("--stdin", dt_stdin, "read the text from stdin")->excludes(text_opt);

  // report compare
  auto* report = app.add_subcommand("report", "work with evaluation runs");
  report->require_subcommand(1);
  auto* compare_cmd = report->add_subcommand("compare", "compare run directories side by side");
  std::vector<std::string> run_dirs;
  bool allow_mixed = false;
  compare_cmd->add_option("run_dirs", run_dirs, "run directories")->required()->check(CLI::ExistingDirectory);
  compare_cmd->add_flag("--allow-mixed", allow_mixed, "allow runs over different datasets");

  // train-lm
  auto* train_lm = app.add_subcommand("train-lm", "train a character n-gram LM artifact");
  std::string lm_corpus, lm_out;
  int lm_order = 3;
  double lm_alpha = 0.5;
  train_lm->add_option("--corpus", lm_corpus, "dataset file or directory")->required();
  train_lm->add_option("--order", lm_order, "n-gram order")->capture_default_str();
  train_lm->add_option("--alpha", lm_alpha, "add-alpha smoothing")->capture_default_str();
  train_lm->add_option("--label", "restrict to records with this label")->type_name("INT");
  train_lm->add_option("--out", lm_out, "output LM file")->required();

  // serve
  auto* serve = app.add_subcommand("serve", "run the HTTP service");
  std::string host = "127.0.0.1", root, serve_lm;
  int port = 8080;
  std::size_t workers = 2;
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->capture_default_str();
  serve->add_option("--root", root, "artifact root (default $FORGEVAL_HOME or ./forgeval-home)");
  serve->add_option("--workers", workers)->capture_default_str();
  serve->add_option("--lm", serve_lm, "default token scorer for the demo endpoint");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error(g, UsageError(e.what()));
  }

  try {
    if (*build) {
      json config = config_from(build_config);
      build_o.apply(config);
      return run_pipeline_stage(g, JobKind::build, config, out);
    }
    if (*attack) {
      json config = config_from(attack_config);
      attack_o.apply(config);
      return run_pipeline_stage(g, JobKind::attack, config, out);
    }
    if (*calibrate) {
      json config = config_from(cal_config);
      cal_o.apply(config);
      return run_pipeline_stage(g, JobKind::calibrate, config, out);
    }
    if (*evaluate) {
      json config = config_from(ev_config);
      ev_o.apply(config);
      return run_pipeline_stage(g, JobKind::evaluate, config, out);
    }
    if (*detect) {
      json source = json::object();
      dt_o.apply(source);
      std::string input = dt_text;
      if (dt_stdin) input.assign(std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>());
      if (!dt_stdin && !*text_opt) throw UsageError("detect needs --text or --stdin");
      if (text::canonicalize(input).empty()) throw UsageError("text: must not be empty");
      const DetectorSource src = detector_source_from_json(source);
      if (g.dry_run) {
        std::cout << json{{"detector", src.detector}, {"model", dt_model.empty() ? json(nullptr) : json(dt_model)}}.dump()
                  << "\n";
        return 0;
      }
      const LoadedDetector det = load_detector(src);
      const CalibrationModel model = dt_model.empty() ? uncalibrated_model(det.handle.name) : load_calibration(dt_model);
      const DetectResult r = detect_text(det, model, input);
      json j = to_json(r);
      j["calibrated"] = !dt_model.empty();
      emit(g, j,
           r.verdict + " (confidence " + text::format_double(r.confidence) + ", score " +
               text::format_double(r.score) + ")\n");
      return 0;
    }
    if (*report) {
      std::vector<EvalReport> rows;
      for (const auto& d : run_dirs) {
        const RunArtifacts run = read_run(d);
        rows.insert(rows.end(), run.report.rows.begin(), run.report.rows.end());
      }
      if (g.dry_run) {
        std::cout << json{{"runs", run_dirs}, {"rows", rows.size()}}.dump() << "\n";
        return 0;
      }
      const ComparisonTable table = compare(rows, allow_mixed);
      emit(g, json(to_json(table)), render_table(table));
      return 0;
    }
    if (*train_lm) {
      LoadResult loaded = load_dataset(lm_corpus);
      std::vector<std::string> texts;
      const auto* label_opt = train_lm->get_option("--label");
      const int label = label_opt->count() ? label_opt->as<int>() : -1;
      for (const auto& r : normalize(loaded.records)) {
        if (label < 0 || r.label == label) texts.push_back(r.text);
      }
      if (g.dry_run) {
        std::cout << json{{"texts", texts.size()}, {"order", lm_order}, {"alpha", lm_alpha}, {"out", lm_out}}.dump()
                  << "\n";
        return 0;
      }
      const NGramLM lm = NGramLM::train(texts, lm_order, lm_alpha);
      lm.save(lm_out);
      emit(g, {{"out", lm_out}, {"texts", texts.size()}, {"fingerprint", lm.fingerprint()}},
           "wrote " + lm_out + " (" + std::to_string(texts.size()) + " texts)\n");
      return 0;
    }
    if (*serve) {
      ServiceOptions options;
      if (root.empty()) {
        const char* home = std::getenv("FORGEVAL_HOME");
        root = home && *home ? home : "forgeval-home";
      }
      options.root = root;
      options.workers = workers;
      if (!serve_lm.empty()) options.default_lm = serve_lm;
      if (g.dry_run) {
        std::cout << json{{"host", host}, {"port", port}, {"root", root}, {"workers", workers}}.dump() << "\n";
        return 0;
      }
      Service service(options);
      std::cerr << "serving on http://" << host << ":" << port << " (root " << root << ")\n";
      if (!service.listen(host, port)) throw BackendError("could not bind " + host + ":" + std::to_string(port));
      return 0;
    }
  } catch (const Error& e) {
    return report_error(g, e);
  } catch (const std::exception& e) {
    return report_error(g, DataError(e.what()));
  }
  return 0;
}
