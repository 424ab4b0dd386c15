#include "forgeval/report.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "csv.hpp"
#include "forgeval/errors.hpp"
#include "forgeval/fingerprint.hpp"
#include "forgeval/text.hpp"
#include "io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace forgeval {
namespace {

std::string pretty(const ordered_json& j) { return j.dump(2, ' ', false, json::error_handler_t::replace) + "\n"; }

std::optional<double> value_of(const MetricValue& m) { return m.value; }

std::optional<double> operating_point(const EvalReport& r, double alpha) {
  for (const auto& op : r.tpr_at_fpr) {
    if (op.alpha == alpha) return op.tpr.value;
  }
  return std::nullopt;
}

std::string cell_text(const std::optional<double>& v) { return v ? text::format_double(*v) : std::string(); }

int attack_order(const std::string& attack) { return attack == "clean" ? 0 : 1; }

}  // namespace

ordered_json to_json(const RunReport& r) {
  ordered_json j;
  j["run_fingerprint"] = r.run_fingerprint;
  j["detector"] = r.detector;
  j["calibration_fingerprint"] = r.calibration_fingerprint;
  j["dataset_fingerprint"] = r.dataset_fingerprint;
  j["predictions_sha256"] = r.predictions_sha256;
  ordered_json rows = ordered_json::array();
  for (const auto& row : r.rows) rows.push_back(to_json(row));
  j["rows"] = std::move(rows);
  if (r.overall_asr) {
    j["overall_asr"] = {{"asr", to_json(*r.overall_asr)}, {"eligible", r.asr_eligible}, {"flipped", r.asr_flipped}};
  } else {
    j["overall_asr"] = nullptr;
  }
  return j;
}

RunReport run_report_from_json(const json& j) {
  try {
    RunReport r;
    r.run_fingerprint = j.at("run_fingerprint").get<std::string>();
    r.detector = j.at("detector").get<std::string>();
    r.calibration_fingerprint = j.at("calibration_fingerprint").get<std::string>();
    r.dataset_fingerprint = j.at("dataset_fingerprint").get<std::string>();
    r.predictions_sha256 = j.at("predictions_sha256").get<std::string>();
    for (const auto& row : j.at("rows")) r.rows.push_back(eval_report_from_json(row));
    if (const auto& a = j.at("overall_asr"); !a.is_null()) {
      r.overall_asr = metric_from_json(a.at("asr"));
      r.asr_eligible = a.at("eligible").get<std::size_t>();
      r.asr_flipped = a.at("flipped").get<std::size_t>();
    }
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed run report: ") + e.what());
  }
}

std::string serialize_predictions(std::span<const Prediction> predictions) {
  std::string out;
  for (const auto& p : predictions) {
    out += to_json(p).dump(-1, ' ', false, json::error_handler_t::replace);
    out += '\n';
  }
  return out;
}

std::vector<Prediction> parse_predictions(const std::string& content) {
  std::vector<Prediction> out;
  std::istringstream lines(content);
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(prediction_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError("predictions line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

RunArtifacts write_run(const fs::path& run_dir, RunArtifacts run) {
  const std::string predictions = serialize_predictions(run.predictions);
  run.report.predictions_sha256 = sha256_hex(predictions);
  run.manifest["run_fingerprint"] = run.report.run_fingerprint;
  fs::create_directories(run_dir);
  io::write_file(run_dir / "manifest.json", pretty(ordered_json(run.manifest)));
  io::write_file(run_dir / "predictions.jsonl", predictions);
  io::write_file(run_dir / "report.json", pretty(to_json(run.report)));
  io::write_file(run_dir / "report.csv", report_csv(run.report.rows));
  return run;
}

RunArtifacts read_run(const fs::path& run_dir) {
  RunArtifacts run;
  try {
    run.manifest = json::parse(io::read_file(run_dir / "manifest.json"));
    run.report = run_report_from_json(json::parse(io::read_file(run_dir / "report.json")));
  } catch (const json::exception& e) {
    throw DataError("run " + run_dir.string() + ": " + e.what());
  }
  const std::string predictions = io::read_file(run_dir / "predictions.jsonl");
  if (sha256_hex(predictions) != run.report.predictions_sha256) {
    throw DataError("run " + run_dir.string() + ": predictions.jsonl does not match the report fingerprint");
  }
  run.predictions = parse_predictions(predictions);
  return run;
}

const std::vector<MetricColumn>& metric_columns() {
  static const std::vector<MetricColumn> columns = {
      {"accuracy", Direction::higher_is_better},        {"precision", Direction::higher_is_better},
      {"recall", Direction::higher_is_better},          {"f1", Direction::higher_is_better},
      {"auroc", Direction::higher_is_better},           {"aupr", Direction::higher_is_better},
      {"tpr_fpr_0.01", Direction::higher_is_better},    {"tpr_fpr_0.001", Direction::higher_is_better},
      {"asr", Direction::lower_is_better},              {"mean_latency_ms", Direction::lower_is_better},
      {"throughput_per_s", Direction::higher_is_better}, {"gpu_peak_gib", Direction::lower_is_better},
  };
  return columns;
}

std::optional<double> metric_cell(const EvalReport& r, const std::string& column) {
  const Effectiveness& e = r.effectiveness;
  if (column == "accuracy") return value_of(e.accuracy);
  if (column == "precision") return value_of(e.precision);
  if (column == "recall") return value_of(e.recall);
  if (column == "f1") return value_of(e.f1);
  if (column == "auroc") return value_of(e.auroc);
  if (column == "aupr") return value_of(e.aupr);
  if (column == "tpr_fpr_0.01") return operating_point(r, 0.01);
  if (column == "tpr_fpr_0.001") return operating_point(r, 0.001);
  if (column == "asr") return r.asr ? r.asr->value : std::nullopt;
  if (column == "mean_latency_ms") return value_of(r.efficiency.mean_latency_ms);
  if (column == "throughput_per_s") return value_of(r.efficiency.throughput_per_s);
  if (column == "gpu_peak_gib") return r.gpu_peak_gib;
  throw UsageError("unknown metric column '" + column + "'");
}

std::string report_csv(std::span<const EvalReport> rows) {
  std::string out;
  for (std::size_t i = 0; i < std::size(kReportColumns); ++i) {
    if (i) out += ',';
    out += kReportColumns[i];
  }
  out += '\n';
  for (const auto& r : rows) {
    out += csv::escape(r.detector) + ',' + csv::escape(r.dataset_fingerprint) + ',' + csv::escape(r.attack);
    for (const auto& col : metric_columns()) out += ',' + cell_text(metric_cell(r, col.name));
    out += '\n';
  }
  return out;
}

ComparisonTable compare(std::span<const EvalReport> reports, bool allow_mixed) {
  if (reports.empty()) throw UsageError("compare needs at least one report");
  std::set<std::string> datasets;
  for (const auto& r : reports) datasets.insert(r.dataset_fingerprint);
  if (datasets.size() > 1 && !allow_mixed) {
    throw DataError("reports cover " + std::to_string(datasets.size()) +
                    " different datasets; pass --allow-mixed to compare them anyway");
  }

  std::vector<const EvalReport*> order;
  for (const auto& r : reports) order.push_back(&r);
  std::stable_sort(order.begin(), order.end(), [](const EvalReport* a, const EvalReport* b) {
    return std::make_tuple(a->detector, attack_order(a->attack), a->attack, a->dataset_fingerprint) <
           std::make_tuple(b->detector, attack_order(b->attack), b->attack, b->dataset_fingerprint);
  });

  ComparisonTable table;
  for (const auto& col : metric_columns()) {
    const bool present = std::any_of(order.begin(), order.end(),
                                     [&](const EvalReport* r) { return metric_cell(*r, col.name).has_value(); });
    if (present) table.columns.push_back(col);
  }
  for (const EvalReport* r : order) {
    ComparisonRow row{r->detector, r->dataset_fingerprint, r->attack, {}, {}};
    for (const auto& col : table.columns) row.cells.push_back(metric_cell(*r, col.name));
    row.best.assign(table.columns.size(), false);
    table.rows.push_back(std::move(row));
  }
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    std::optional<double> best;
    for (const auto& row : table.rows) {
      const auto& v = row.cells[c];
      if (!v) continue;
      if (!best || (table.columns[c].direction == Direction::higher_is_better ? *v > *best : *v < *best)) best = v;
    }
    for (auto& row : table.rows) row.best[c] = row.cells[c] && *row.cells[c] == *best;
  }
  return table;
}

ordered_json to_json(const ComparisonTable& t) {
  ordered_json j;
  ordered_json cols = ordered_json::array();
  for (const auto& c : t.columns) {
    cols.push_back({{"name", c.name}, {"direction", c.direction == Direction::higher_is_better ? "higher" : "lower"}});
  }
  j["columns"] = std::move(cols);
  ordered_json rows = ordered_json::array();
  for (const auto& r : t.rows) {
    ordered_json row;
    row["detector"] = r.detector;
    row["dataset"] = r.dataset;
    row["attack"] = r.attack;
    ordered_json cells = ordered_json::object();
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      cells[t.columns[c].name] = r.cells[c] ? ordered_json(*r.cells[c]) : ordered_json(nullptr);
    }
    row["cells"] = std::move(cells);
    ordered_json best = ordered_json::array();
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      if (r.best[c]) best.push_back(t.columns[c].name);
    }
    row["best"] = std::move(best);
    rows.push_back(std::move(row));
  }
  j["rows"] = std::move(rows);
  return j;
}

std::string render_table(const ComparisonTable& t) {
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header = {"detector", "attack", "dataset"};
  for (const auto& c : t.columns) {
    header.push_back(c.name + (c.direction == Direction::higher_is_better ? " (+)" : " (-)"));
  }
  grid.push_back(header);
  for (const auto& r : t.rows) {
    std::vector<std::string> line = {r.detector, r.attack, r.dataset.substr(0, 12)};
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      if (!r.cells[c]) {
        line.push_back("-");
        continue;
      }
      std::ostringstream v;
      v.setf(std::ios::fixed);
      v.precision(4);
      v << *r.cells[c];
      line.push_back(v.str() + (r.best[c] ? "*" : ""));
    }
    grid.push_back(std::move(line));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : grid) {
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  }
  std::string out;
  for (const auto& line : grid) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      out += line[i];
      if (i + 1 < line.size()) out += std::string(width[i] - line[i].size() + 2, ' ');
    }
    out += '\n';
  }
  return out;
}

}  // namespace forgeval
