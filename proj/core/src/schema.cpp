#include "forgeval/schema.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "csv.hpp"
#include "io.hpp"
#include "forgeval/errors.hpp"
#include "forgeval/fingerprint.hpp"
#include "forgeval/rng.hpp"
#include "forgeval/text.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace forgeval {
namespace {

constexpr const char* kStandardFields[] = {"id", "text", "label", "source", "lang", "model", "attack"};

using io::read_file;
using io::write_file;

std::optional<std::string> optional_string(const json& obj, const char* key) {
  const auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (it->is_string()) return it->get<std::string>();
  return it->dump();
}

// Accepts 0/1 integers, booleans, and the strings "0", "1", "human", "machine".
std::optional<int> parse_label(const json& value) {
  if (value.is_number_integer() || value.is_number_unsigned()) {
    const auto v = value.get<long long>();
    if (v == 0 || v == 1) return static_cast<int>(v);
    return std::nullopt;
  }
  if (value.is_number_float()) {
    const double v = value.get<double>();
    if (v == 0.0 || v == 1.0) return static_cast<int>(v);
    return std::nullopt;
  }
  if (value.is_boolean()) return value.get<bool>() ? 1 : 0;
  if (value.is_string()) {
    const auto s = value.get<std::string>();
    if (s == "0" || s == "human") return 0;
    if (s == "1" || s == "machine") return 1;
  }
  return std::nullopt;
}

struct ParseContext {
  std::string rel_path;
  LoadResult* out;
  std::unordered_set<std::string>* seen_ids;

  std::string synth_id(std::size_t row, std::size_t sub) const {
    return sha256_hex(rel_path + '\n' + std::to_string(row) + '.' + std::to_string(sub)).substr(0, 16);
  }
  void warn(std::size_t row, const std::string& msg) const {
    out->warnings.push_back(rel_path + ":" + std::to_string(row) + ": " + msg);
  }
  void skip(std::size_t row, const std::string& msg) const {
    warn(row, msg + " (skipped)");
    ++out->skipped;
  }
  void emit(std::size_t row, Record record) const {
    if (record.text.empty()) {
      skip(row, "empty text");
      return;
    }
    if (record.attack && record.label == 0) {
      skip(row, "attack set on a human (label 0) record");
      return;
    }
    if (!seen_ids->insert(record.id).second) {
      skip(row, "duplicate id '" + record.id + "'");
      return;
    }
    out->records.push_back(std::move(record));
  }
};

Format detect(const json& obj) {
  if (!obj.is_object()) return Format::auto_detect;
  if (obj.contains("human_answers") || obj.contains("chatgpt_answers")) return Format::hc3;
  if (obj.contains("meta") && obj["meta"].is_object() && obj.contains("sample")) {
    return Format::attack_paired;
  }
  if (obj.contains("original") ||
      (!obj.contains("text") &&
       (obj.contains("sample") || obj.contains("sampled") || obj.contains("rewritten")))) {
    return Format::paired;
  }
  if (obj.contains("text")) {
    return obj.contains("id") && obj.contains("attack") ? Format::standardized : Format::flat;
  }
  return Format::auto_detect;
}

// Values of list-of-{text} or list-of-string shape (a single item is accepted too).
std::vector<json> text_items(const json& value) {
  std::vector<json> items;
  if (value.is_array()) {
    for (const auto& v : value) items.push_back(v);
  } else if (!value.is_null()) {
    items.push_back(value);
  }
  return items;
}

std::optional<std::string> item_text(const json& item) {
  if (item.is_string()) return item.get<std::string>();
  if (item.is_object()) return optional_string(item, "text");
  return std::nullopt;
}

void parse_flat(const json& obj, std::size_t row, const ParseContext& ctx) {
  const auto text = optional_string(obj, "text");
  if (!text) return ctx.skip(row, "missing text field");
  const auto label_it = obj.find("label");
  if (label_it == obj.end()) return ctx.skip(row, "missing label field");
  const auto label = parse_label(*label_it);
  if (!label) return ctx.skip(row, "invalid label " + label_it->dump());
  Record r;
  r.id = optional_string(obj, "id").value_or(ctx.synth_id(row, 0));
  r.text = *text;
  r.label = *label;
  r.source = optional_string(obj, "source");
  r.lang = optional_string(obj, "lang");
  r.model = optional_string(obj, "model");
  r.attack = optional_string(obj, "attack");
  ctx.emit(row, std::move(r));
}

void parse_hc3(const json& obj, std::size_t row, const ParseContext& ctx) {
  const auto source = optional_string(obj, "source");
  const auto lang = optional_string(obj, "lang");
  std::size_t sub = 0;
  auto add = [&](const json& answers, int label, std::optional<std::string> model) {
    for (const auto& a : text_items(answers)) {
      const auto t = item_text(a);
      const std::size_t k = sub++;
      if (!t) {
        ctx.skip(row, "answer without text");
        continue;
      }
      Record r;
      r.id = ctx.synth_id(row, k);
      r.text = *t;
      r.label = label;
      r.source = source;
      r.lang = lang;
      r.model = model;
      ctx.emit(row, std::move(r));
    }
  };
  if (obj.contains("human_answers")) add(obj["human_answers"], 0, std::nullopt);
  for (const auto& [key, value] : obj.items()) {
    if (key != "human_answers" && key.size() > 8 && key.ends_with("_answers")) {
      add(value, 1, key.substr(0, key.size() - 8));
    }
  }
}

void parse_paired(const json& obj, std::size_t row, const ParseContext& ctx) {
  const auto source = optional_string(obj, "source");
  const auto lang = optional_string(obj, "lang");
  const auto model = optional_string(obj, "model");
  std::size_t sub = 0;
  bool any = false;
  for (const char* key : {"original", "sample", "sampled", "rewritten"}) {
    const auto it = obj.find(key);
    if (it == obj.end()) continue;
    const int label = std::string_view(key) == "original" ? 0 : 1;
    for (const auto& item : text_items(*it)) {
      any = true;
      const std::size_t k = sub++;
      const auto t = item_text(item);
      if (!t) {
        ctx.skip(row, std::string("'") + key + "' item without text");
        continue;
      }
      Record r;
      r.id = item.is_object() ? optional_string(item, "id").value_or(ctx.synth_id(row, k))
                              : ctx.synth_id(row, k);
      r.text = *t;
      r.label = label;
      r.source = item.is_object() && item.contains("source") ? optional_string(item, "source") : source;
      r.lang = item.is_object() && item.contains("lang") ? optional_string(item, "lang") : lang;
      r.model = item.is_object() && item.contains("model") ? optional_string(item, "model") : model;
      ctx.emit(row, std::move(r));
    }
  }
  if (!any) ctx.skip(row, "paired record without texts");
}

void parse_attack_paired(const json& obj, std::size_t row, const ParseContext& ctx) {
  const json& meta = obj["meta"];
  const auto base_id = optional_string(meta, "base_id");
  const auto active = optional_string(meta, "active_attack");
  std::size_t sub = 0;
  std::map<std::string, int> per_attack;
  for (const auto& item : text_items(obj["sample"])) {
    const std::size_t k = sub++;
    const auto t = item_text(item);
    if (!t) {
      ctx.skip(row, "attacked sample without text");
      continue;
    }
    Record r;
    r.text = *t;
    r.label = 1;
    r.attack = item.is_object() ? optional_string(item, "attack") : std::nullopt;
    if (!r.attack) r.attack = active;
    if (item.is_object()) {
      r.source = optional_string(item, "source");
      r.lang = optional_string(item, "lang");
      r.model = optional_string(item, "model");
    }
    if (item.is_object() && item.contains("id")) {
      r.id = *optional_string(item, "id");
    } else if (base_id) {
      const std::string tag = r.attack.value_or("clean");
      const int n = per_attack[tag]++;
      r.id = r.attack ? *base_id + "#" + *r.attack : *base_id;
      if (n > 0) r.id += "#" + std::to_string(n);
    } else {
      r.id = ctx.synth_id(row, k);
    }
    ctx.emit(row, std::move(r));
  }
}

// Returns false when the object matches no known structure.
bool parse_object(const json& obj, Format hint, std::size_t row, const ParseContext& ctx) {
  Format fmt = hint == Format::auto_detect ? detect(obj) : hint;
  if (!obj.is_object()) {
    ctx.skip(row, "not an object");
    return false;
  }
  switch (fmt) {
    case Format::flat:
    case Format::standardized:
      parse_flat(obj, row, ctx);
      return true;
    case Format::hc3:
      parse_hc3(obj, row, ctx);
      return true;
    case Format::paired:
      parse_paired(obj, row, ctx);
      return true;
    case Format::attack_paired:
      if (!obj.contains("meta") || !obj["meta"].is_object()) {
        ctx.skip(row, "attack-paired record without meta object");
        return true;
      }
      parse_attack_paired(obj, row, ctx);
      return true;
    case Format::auto_detect:
      break;
  }
  ctx.skip(row, "missing text field");
  return false;
}

json parse_json_text(std::string_view content, const std::string& where) {
  try {
    return json::parse(content);
  } catch (const json::parse_error& e) {
    throw DataError(where + ": malformed JSON: " + e.what());
  }
}

void load_file(const fs::path& path, const std::string& rel, Format hint, LoadResult& out,
               std::unordered_set<std::string>& seen) {
  const ParseContext ctx{rel, &out, &seen};
  const std::string content = read_file(path);
  const std::string ext = path.extension().string();
  std::size_t objects = 0;
  std::size_t recognized = 0;

  auto visit = [&](const json& obj, std::size_t row) {
    ++objects;
    if (parse_object(obj, hint, row, ctx)) ++recognized;
  };

  if (ext == ".jsonl") {
    std::istringstream lines(content);
    std::string line;
    std::size_t row = 0;
    while (std::getline(lines, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") == std::string::npos) {
        ++row;
        continue;
      }
      visit(parse_json_text(line, rel + ":" + std::to_string(row)), row);
      ++row;
    }
  } else if (ext == ".json") {
    const json doc = parse_json_text(content, rel);
    if (doc.is_array()) {
      for (std::size_t i = 0; i < doc.size(); ++i) visit(doc[i], i);
    } else {
      visit(doc, 0);
    }
  } else if (ext == ".csv") {
    const auto rows = csv::parse(content);
    if (rows.empty()) return;
    const auto& header = rows.front();
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) {
      col.emplace(header[i], i);
      if (std::find(std::begin(kStandardFields), std::end(kStandardFields), header[i]) ==
              std::end(kStandardFields) &&
          std::find(out.unknown_columns.begin(), out.unknown_columns.end(), header[i]) ==
              out.unknown_columns.end()) {
        out.unknown_columns.push_back(header[i]);
      }
    }
    if (!col.count("text") || !col.count("label")) {
      throw DataError(rel + ": csv header must contain text and label columns");
    }
    for (std::size_t r = 1; r < rows.size(); ++r) {
      json obj = json::object();
      for (const char* f : kStandardFields) {
        const auto it = col.find(f);
        if (it == col.end() || it->second >= rows[r].size()) continue;
        const std::string& v = rows[r][it->second];
        if (v.empty() && std::string_view(f) != "text") continue;
        obj[f] = v;
      }
      if (!obj.contains("text")) {
        ctx.skip(r - 1, "missing text field");
        ++objects;
        continue;
      }
      visit(obj, r - 1);
    }
  } else {
    throw DataError(rel + ": unsupported file extension '" + ext + "'");
  }

  if (objects > 0 && recognized == 0) {
    throw DataError(rel + ": unrecognizable dataset structure");
  }
}

bool is_data_file(const fs::path& p) {
  const std::string ext = p.extension().string();
  if (ext != ".jsonl" && ext != ".json" && ext != ".csv") return false;
  const std::string name = p.filename().string();
  return name != "manifest.json" && !name.ends_with(".manifest.json") &&
         name != "provenance.jsonl" && name != "report.json" && name != "job.json";
}

std::optional<std::string> trimmed_or_absent(const std::optional<std::string>& v) {
  if (!v) return std::nullopt;
  std::string t = text::canonicalize(*v);
  if (t.empty()) return std::nullopt;
  return t;
}

}  // namespace

ordered_json to_json(const Record& record) {
  ordered_json j;
  auto opt = [](const std::optional<std::string>& v) -> ordered_json {
    return v ? ordered_json(*v) : ordered_json(nullptr);
  };
  j["id"] = record.id;
  j["text"] = record.text;
  j["label"] = record.label;
  j["source"] = opt(record.source);
  j["lang"] = opt(record.lang);
  j["model"] = opt(record.model);
  j["attack"] = opt(record.attack);
  return j;
}

Record record_from_json(const json& obj) {
  if (!obj.is_object()) throw DataError("record is not an object");
  Record r;
  const auto id = optional_string(obj, "id");
  const auto text = optional_string(obj, "text");
  if (!id || !text) throw DataError("record missing id or text");
  const auto label = obj.contains("label") ? parse_label(obj["label"]) : std::nullopt;
  if (!label) throw DataError("record '" + *id + "' has no valid label");
  r.id = *id;
  r.text = *text;
  r.label = *label;
  r.source = optional_string(obj, "source");
  r.lang = optional_string(obj, "lang");
  r.model = optional_string(obj, "model");
  r.attack = optional_string(obj, "attack");
  if (r.attack && r.label == 0) throw DataError("record '" + r.id + "' is attacked but labeled human");
  return r;
}

Format parse_format(const std::string& name) {
  if (name == "flat") return Format::flat;
  if (name == "hc3") return Format::hc3;
  if (name == "paired") return Format::paired;
  if (name == "attack_paired") return Format::attack_paired;
  if (name == "standardized") return Format::standardized;
  if (name == "auto" || name.empty()) return Format::auto_detect;
  throw UsageError("unknown dataset format '" + name + "'");
}

const char* to_string(Format format) {
  switch (format) {
    case Format::flat:
      return "flat";
    case Format::hc3:
      return "hc3";
    case Format::paired:
      return "paired";
    case Format::attack_paired:
      return "attack_paired";
    case Format::standardized:
      return "standardized";
    case Format::auto_detect:
      return "auto";
  }
  return "auto";
}

LoadResult load_dataset(const fs::path& path, Format hint) {
  LoadResult out;
  std::unordered_set<std::string> seen;
  std::error_code ec;
  if (!fs::exists(path, ec)) throw DataError("no such file or directory: " + path.string());

  if (fs::is_directory(path)) {
    std::vector<std::pair<std::string, fs::path>> files;
    for (const auto& entry : fs::recursive_directory_iterator(path)) {
      if (entry.is_regular_file() && is_data_file(entry.path())) {
        files.emplace_back(fs::relative(entry.path(), path).generic_string(), entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& [rel, file] : files) {
      out.source_paths.push_back((path / rel).generic_string());
      load_file(file, rel, hint, out, seen);
    }
  } else {
    out.source_paths.push_back(path.generic_string());
    load_file(path, path.filename().generic_string(), hint, out, seen);
  }
  return out;
}

std::vector<Record> normalize(std::span<const Record> records, std::size_t* dropped) {
  std::vector<Record> out;
  out.reserve(records.size());
  std::size_t n_dropped = 0;
  for (const Record& r : records) {
    Record n;
    n.id = r.id;
    n.text = text::canonicalize(r.text);
    n.label = r.label;
    n.source = trimmed_or_absent(r.source);
    n.lang = trimmed_or_absent(r.lang);
    n.model = trimmed_or_absent(r.model);
    n.attack = trimmed_or_absent(r.attack);
    if (n.text.empty() || (n.label != 0 && n.label != 1) || (n.attack && n.label == 0)) {
      ++n_dropped;
      continue;
    }
    out.push_back(std::move(n));
  }
  if (dropped) *dropped = n_dropped;
  return out;
}

SplitRatio SplitRatio::normalized() const {
  if (!(train >= 0 && val >= 0 && test >= 0) || !std::isfinite(train + val + test)) {
    throw UsageError("split ratios must be finite and non-negative");
  }
  const double sum = train + val + test;
  if (sum <= 0) throw UsageError("split ratios must not all be zero");
  return {train / sum, val / sum, test / sum};
}

SplitRatio SplitRatio::parse(const std::string& s) {
  const char sep = s.find(':') != std::string::npos ? ':' : ',';
  std::vector<double> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    std::string piece = s.substr(start, pos == std::string::npos ? std::string::npos : pos - start);
    piece.erase(0, piece.find_first_not_of(' '));
    piece.erase(piece.find_last_not_of(' ') + 1);
    try {
      parts.push_back(text::parse_double(piece));
    } catch (const DataError&) {
      throw UsageError("invalid split ratio '" + s + "'");
    }
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  if (parts.size() != 3) throw UsageError("split ratio needs three components: '" + s + "'");
  return SplitRatio{parts[0], parts[1], parts[2]}.normalized();
}

const char* to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "train";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw DataError("unknown split '" + name + "'");
}

ordered_json to_json(const DatasetManifest& m) {
  ordered_json j;
  j["schema_version"] = m.schema_version;
  j["seed"] = m.seed;
  j["split_ratios"] = {{"train", m.split_ratios.train}, {"val", m.split_ratios.val}, {"test", m.split_ratios.test}};
  ordered_json membership = ordered_json::object();
  for (const auto& [id, s] : m.split_membership) membership[id] = to_string(s);
  j["split_membership"] = std::move(membership);
  j["source_paths"] = m.source_paths;
  j["config_snapshot"] = m.config_snapshot;
  j["created_at"] = m.created_at;
  return j;
}

DatasetManifest manifest_from_json(const json& j) {
  try {
    DatasetManifest m;
    m.schema_version = j.at("schema_version").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    const auto& r = j.at("split_ratios");
    m.split_ratios = {r.at("train").get<double>(), r.at("val").get<double>(), r.at("test").get<double>()};
    for (const auto& [id, s] : j.at("split_membership").items()) {
      m.split_membership.emplace(id, parse_split(s.get<std::string>()));
    }
    m.source_paths = j.value("source_paths", std::vector<std::string>{});
    m.config_snapshot = j.value("config_snapshot", json::object());
    m.created_at = j.value("created_at", std::string{});
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
}

SplitResult split(std::span<const Record> records, const SplitRatio& ratios, std::uint64_t seed) {
  if (records.empty()) throw UsageError("cannot split an empty record list");
  const SplitRatio r = ratios.normalized();
  const double fractions[3] = {r.train, r.val, r.test};
  const std::size_t n = records.size();

  // Split sizes: floor of ratio * N, remainder to the largest fractional parts.
  std::size_t sizes[3];
  double frac[3];
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double target = fractions[i] * static_cast<double>(n);
    sizes[i] = static_cast<std::size_t>(std::floor(target));
    frac[i] = target - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  while (assigned < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i) {
      if (frac[i] > frac[best]) best = i;
    }
    ++sizes[best];
    frac[best] = -1.0;
    ++assigned;
  }

  std::vector<std::size_t> by_label[2];
  std::unordered_set<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) {
    if (!ids.insert(records[i].id).second) throw UsageError("duplicate record id '" + records[i].id + "'");
    if (records[i].label != 0 && records[i].label != 1) throw UsageError("invalid label on '" + records[i].id + "'");
    by_label[records[i].label].push_back(i);
  }

  // Per-label counts per split: floor/ceil of size_i * n_label / N with margins
  // preserved (controlled rounding of a 2x3 table).
  std::size_t label_sizes[2][3];
  {
    const double n0 = static_cast<double>(by_label[0].size());
    std::size_t total0 = 0;
    double f0[3];
    for (int i = 0; i < 3; ++i) {
      const double x = static_cast<double>(sizes[i]) * n0 / static_cast<double>(n);
      label_sizes[0][i] = static_cast<std::size_t>(std::floor(x));
      f0[i] = x - static_cast<double>(label_sizes[0][i]);
      total0 += label_sizes[0][i];
    }
    while (total0 < by_label[0].size()) {
      int best = -1;
      for (int i = 0; i < 3; ++i) {
        if (label_sizes[0][i] >= sizes[i]) continue;
        if (best < 0 || f0[i] > f0[best]) best = i;
      }
      ++label_sizes[0][best];
      f0[best] = -1.0;
      ++total0;
    }
    for (int i = 0; i < 3; ++i) label_sizes[1][i] = sizes[i] - label_sizes[0][i];
  }

  DatasetManifest manifest;
  manifest.seed = seed;
  manifest.split_ratios = r;
  manifest.created_at = utc_timestamp();

  for (int label = 0; label < 2; ++label) {
    auto& group = by_label[label];
    std::sort(group.begin(), group.end(),
              [&](std::size_t a, std::size_t b) { return records[a].id < records[b].id; });
    Rng rng(hash64("split\n" + std::to_string(seed) + "\n" + std::to_string(label)));
    rng.shuffle(group);
    std::size_t pos = 0;
    for (int s = 0; s < 3; ++s) {
      for (std::size_t k = 0; k < label_sizes[label][s]; ++k, ++pos) {
        manifest.split_membership[records[group[pos]].id] = static_cast<Split>(s);
      }
    }
  }

  SplitResult result;
  for (const Record& rec : records) {
    switch (manifest.split_membership.at(rec.id)) {
      case Split::train:
        result.train.push_back(rec);
        break;
      case Split::val:
        result.val.push_back(rec);
        break;
      case Split::test:
        result.test.push_back(rec);
        break;
    }
  }
  for (int s = 0; s < 3; ++s) {
    if (sizes[s] == 0 && fractions[s] > 0) {
      result.warnings.push_back(std::string("split '") + to_string(static_cast<Split>(s)) +
                                "' is empty at ratio " + text::format_double(fractions[s]));
    }
  }
  result.manifest = std::move(manifest);
  return result;
}

void write_records(std::span<const Record> records, const fs::path& data_path) {
  std::string content;
  for (const Record& r : records) {
    content += to_json(r).dump(-1, ' ', false, json::error_handler_t::replace);
    content += '\n';
  }
  write_file(data_path, content);
}

void save_standardized(std::span<const Record> records, const DatasetManifest& manifest,
                       const fs::path& data_path, std::optional<fs::path> manifest_path) {
  write_records(records, data_path);
  const fs::path mpath = manifest_path ? *manifest_path : fs::path(data_path.string() + ".manifest.json");
  write_file(mpath, to_json(manifest).dump(2, ' ', false, json::error_handler_t::replace) + "\n");
}

ordered_json to_json(const AttackProvenance& p) {
  ordered_json j;
  j["id"] = p.id;
  j["base_id"] = p.base_id;
  j["attack"] = p.attack;
  j["params_fingerprint"] = p.params_fingerprint;
  j["seed"] = p.seed;
  return j;
}

AttackProvenance provenance_from_json(const json& j) {
  try {
    AttackProvenance p;
    p.base_id = j.at("base_id").get<std::string>();
    p.attack = j.at("attack").get<std::string>();
    p.id = j.value("id", p.base_id + "#" + p.attack);
    p.params_fingerprint = j.value("params_fingerprint", std::string{});
    p.seed = j.value("seed", std::uint64_t{0});
    return p;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed provenance entry: ") + e.what());
  }
}

void write_provenance(std::span<const AttackProvenance> provenance, const fs::path& path) {
  std::string content;
  for (const auto& p : provenance) {
    content += to_json(p).dump(-1, ' ', false, json::error_handler_t::replace);
    content += '\n';
  }
  write_file(path, content);
}

std::vector<AttackProvenance> read_provenance(const fs::path& path) {
  std::istringstream lines(read_file(path));
  std::vector<AttackProvenance> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(lines, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(provenance_from_json(parse_json_text(line, path.filename().string() + ":" + std::to_string(row))));
  }
  return out;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string dataset_fingerprint(std::span<const Record> records) {
  std::string content;
  for (const Record& r : records) {
    content += to_json(r).dump(-1, ' ', false, json::error_handler_t::replace);
    content += '\n';
  }
  return sha256_hex(content);
}

}  // namespace forgeval
