#include "forgeval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "forgeval/errors.hpp"

using nlohmann::json;
using nlohmann::ordered_json;

namespace forgeval {
namespace {

std::optional<std::string> opt_string(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<std::string>();
}

ordered_json opt_json(const std::optional<std::string>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

struct Counts {
  std::size_t pos = 0;
  std::size_t neg = 0;
};

Counts count_classes(std::span<const int> labels) {
  Counts c;
  for (int y : labels) (y == 1 ? c.pos : c.neg) += 1;
  return c;
}

void require_both(const Counts& c, std::size_t n_scores, std::size_t n_labels) {
  if (n_scores != n_labels) throw DataError("scores and labels differ in length");
  if (c.pos == 0 || c.neg == 0) throw DataError("both classes are required");
}

// Indices sorted by descending score.
std::vector<std::size_t> descending(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

void split_columns(std::span<const Prediction> preds, std::vector<double>& scores, std::vector<int>& labels) {
  scores.reserve(preds.size());
  labels.reserve(preds.size());
  for (const auto& p : preds) {
    scores.push_back(p.score);
    labels.push_back(p.y_true);
  }
}

json confusion_json(const Confusion& c) { return {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}}; }

Confusion confusion_from_json(const json& j) {
  return {j.at("tp").get<std::uint64_t>(), j.at("fp").get<std::uint64_t>(), j.at("tn").get<std::uint64_t>(),
          j.at("fn").get<std::uint64_t>()};
}

ordered_json effectiveness_json(const Effectiveness& e) {
  ordered_json j;
  j["n"] = e.n;
  j["positives"] = e.positives;
  j["negatives"] = e.negatives;
  j["confusion"] = confusion_json(e.confusion);
  j["accuracy"] = to_json(e.accuracy);
  j["precision"] = to_json(e.precision);
  j["recall"] = to_json(e.recall);
  j["f1"] = to_json(e.f1);
  j["auroc"] = to_json(e.auroc);
  j["aupr"] = to_json(e.aupr);
  return j;
}

Effectiveness effectiveness_from_json(const json& j) {
  Effectiveness e;
  e.n = j.at("n").get<std::size_t>();
  e.positives = j.at("positives").get<std::size_t>();
  e.negatives = j.at("negatives").get<std::size_t>();
  e.confusion = confusion_from_json(j.at("confusion"));
  e.accuracy = metric_from_json(j.at("accuracy"));
  e.precision = metric_from_json(j.at("precision"));
  e.recall = metric_from_json(j.at("recall"));
  e.f1 = metric_from_json(j.at("f1"));
  e.auroc = metric_from_json(j.at("auroc"));
  e.aupr = metric_from_json(j.at("aupr"));
  return e;
}

}  // namespace

ordered_json to_json(const Prediction& p) {
  ordered_json j;
  j["record_id"] = p.record_id;
  j["y_true"] = p.y_true;
  j["score"] = p.score;
  j["probability"] = p.probability;
  j["y_pred"] = p.y_pred;
  j["attack"] = opt_json(p.attack);
  j["base_id"] = opt_json(p.base_id);
  j["latency_ms"] = p.latency_ms;
  j["source"] = opt_json(p.source);
  j["lang"] = opt_json(p.lang);
  j["model"] = opt_json(p.model);
  return j;
}

Prediction prediction_from_json(const json& j) {
  try {
    Prediction p;
    p.record_id = j.at("record_id").get<std::string>();
    p.y_true = j.at("y_true").get<int>();
    p.score = j.at("score").get<double>();
    p.probability = j.at("probability").get<double>();
    p.y_pred = j.at("y_pred").get<int>();
    p.attack = opt_string(j, "attack");
    p.base_id = opt_string(j, "base_id");
    p.latency_ms = j.at("latency_ms").get<double>();
    p.source = opt_string(j, "source");
    p.lang = opt_string(j, "lang");
    p.model = opt_string(j, "model");
    return p;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed prediction: ") + e.what());
  }
}

json to_json(const MetricValue& m) {
  if (m.value) return *m.value;
  return {{"absent", m.reason}};
}

MetricValue metric_from_json(const json& v) {
  if (v.is_number()) return MetricValue::of(v.get<double>());
  if (v.is_object() && v.contains("absent")) return MetricValue::absent(v["absent"].get<std::string>());
  if (v.is_null()) return MetricValue::absent("");
  throw DataError("malformed metric value " + v.dump());
}

Confusion& Confusion::operator+=(const Confusion& o) {
  tp += o.tp;
  fp += o.fp;
  tn += o.tn;
  fn += o.fn;
  return *this;
}

Confusion confusion(std::span<const Prediction> preds) {
  Confusion c;
  for (const auto& p : preds) {
    if (p.y_true == 1) {
      (p.y_pred == 1 ? c.tp : c.fn) += 1;
    } else {
      (p.y_pred == 1 ? c.fp : c.tn) += 1;
    }
  }
  return c;
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  const Counts c = count_classes(labels);
  require_both(c, scores.size(), labels.size());
  // Mann-Whitney U via mid-ranks; doubled ranks keep every quantity integral.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::uint64_t rank_sum2 = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t midrank2 = static_cast<std::uint64_t>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) rank_sum2 += midrank2;
    }
    i = j;
  }
  const std::uint64_t u2 = rank_sum2 - static_cast<std::uint64_t>(c.pos) * (c.pos + 1);
  return static_cast<double>(u2) / (2.0 * static_cast<double>(c.pos) * static_cast<double>(c.neg));
}

double aupr(std::span<const double> scores, std::span<const int> labels) {
  const Counts c = count_classes(labels);
  require_both(c, scores.size(), labels.size());
  const auto order = descending(scores);
  std::size_t tp = 0;
  std::size_t fp = 0;
  double area = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = scores[order[i]];
    while (i < order.size() && scores[order[i]] == t) {
      (labels[order[i]] == 1 ? tp : fp) += 1;
      ++i;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(c.pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return area;
}

double tpr_at_fpr(std::span<const double> scores, std::span<const int> labels, double alpha) {
  const Counts c = count_classes(labels);
  require_both(c, scores.size(), labels.size());
  if (!(alpha >= 0 && alpha <= 1)) throw UsageError("FPR level must lie in [0, 1]");
  const auto order = descending(scores);
  std::size_t tp = 0;
  std::size_t fp = 0;
  double best = 0.0;  // t = +inf: nothing predicted positive
  for (std::size_t i = 0; i < order.size();) {
    const double t = scores[order[i]];
    while (i < order.size() && scores[order[i]] == t) {
      (labels[order[i]] == 1 ? tp : fp) += 1;
      ++i;
    }
    const double fpr = static_cast<double>(fp) / static_cast<double>(c.neg);
    if (fpr <= alpha) best = std::max(best, static_cast<double>(tp) / static_cast<double>(c.pos));
  }
  return best;
}

Effectiveness effectiveness(std::span<const Prediction> preds) {
  if (preds.empty()) throw DataError("no predictions to evaluate");
  Effectiveness e;
  e.confusion = confusion(preds);
  e.n = preds.size();
  e.positives = static_cast<std::size_t>(e.confusion.tp + e.confusion.fn);
  e.negatives = static_cast<std::size_t>(e.confusion.tn + e.confusion.fp);
  const auto& c = e.confusion;
  e.accuracy = MetricValue::of(static_cast<double>(c.tp + c.tn) / static_cast<double>(e.n));
  e.precision = c.tp + c.fp > 0 ? MetricValue::of(static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp))
                                : MetricValue::absent("no positive predictions (TP+FP = 0)");
  e.recall = c.tp + c.fn > 0 ? MetricValue::of(static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn))
                             : MetricValue::absent("no positive samples (TP+FN = 0)");
  if (c.tp > 0) {
    e.f1 = MetricValue::of(2.0 * static_cast<double>(c.tp) / static_cast<double>(2 * c.tp + c.fp + c.fn));
  } else if (c.fp + c.fn > 0) {
    e.f1 = MetricValue::of(0.0);
  } else {
    e.f1 = MetricValue::absent("no positive samples or predictions");
  }
  if (e.positives > 0 && e.negatives > 0) {
    std::vector<double> scores;
    std::vector<int> labels;
    split_columns(preds, scores, labels);
    e.auroc = MetricValue::of(auroc(scores, labels));
    e.aupr = MetricValue::of(aupr(scores, labels));
  } else {
    const char* why = e.positives == 0 ? "no machine samples" : "no human samples";
    e.auroc = MetricValue::absent(why);
    e.aupr = MetricValue::absent(why);
  }
  return e;
}

OperatingPoint tpr_at_fpr(std::span<const Prediction> preds, double alpha) {
  OperatingPoint op;
  op.alpha = alpha;
  std::vector<double> scores;
  std::vector<int> labels;
  split_columns(preds, scores, labels);
  const Counts c = count_classes(labels);
  if (c.neg == 0) {
    op.tpr = MetricValue::absent("no negatives");
    return op;
  }
  if (c.pos == 0) {
    op.tpr = MetricValue::absent("no positives");
    return op;
  }
  op.resolution_limited = alpha < 1.0 / static_cast<double>(c.neg);
  op.tpr = MetricValue::of(tpr_at_fpr(scores, labels, alpha));
  return op;
}

void require_same_calibration(const std::string& clean_calibration, const std::string& attacked_calibration) {
  if (clean_calibration == attacked_calibration) return;
  throw ThresholdReuseError(
      "threshold reuse violated: clean and attacked predictions come from different calibration models (" +
      clean_calibration.substr(0, 12) + " vs " + attacked_calibration.substr(0, 12) +
      "); the threshold fixed at calibration must be reused unchanged on attacked data");
}

AsrResult asr(std::span<const Prediction> clean, std::span<const Prediction> attacked,
              std::span<const AttackProvenance> provenance, const std::string& clean_calibration,
              const std::string& attacked_calibration) {
  require_same_calibration(clean_calibration, attacked_calibration);
  std::unordered_map<std::string, const Prediction*> by_id;
  for (const auto& p : clean) by_id.emplace(p.record_id, &p);
  std::unordered_map<std::string, const AttackProvenance*> lineage;
  for (const auto& p : provenance) lineage.emplace(p.id, &p);

  AsrResult r;
  for (const auto& a : attacked) {
    if (!a.attack) continue;
    const auto prov = lineage.find(a.record_id);
    if (prov == lineage.end()) throw DataError("attacked record '" + a.record_id + "' has no provenance entry");
    const auto base = by_id.find(prov->second->base_id);
    if (base == by_id.end()) {
      throw DataError("provenance base '" + prov->second->base_id + "' has no clean prediction");
    }
    const Prediction& c = *base->second;
    if (c.y_true != 1 || a.y_true != 1) {
      throw DataError("ASR pairs must be machine samples ('" + a.record_id + "')");
    }
    r.pairs.push_back({c.record_id, a.record_id, *a.attack, c.y_pred, a.y_pred});
    if (c.y_pred == 1) {
      ++r.eligible;
      if (a.y_pred == 0) ++r.flipped;
    }
  }
  r.asr = r.eligible > 0 ? MetricValue::of(static_cast<double>(r.flipped) / static_cast<double>(r.eligible))
                         : MetricValue::absent("no machine sample was detected on the clean side");
  return r;
}

Efficiency efficiency(const EfficiencyTrace& trace) {
  Efficiency e;
  e.n = trace.count();
  e.wall_seconds = trace.wall_seconds;
  if (const auto t = trace.throughput()) {
    e.throughput_per_s = MetricValue::of(*t);
  } else {
    e.throughput_per_s = MetricValue::absent(trace.latencies_ms.empty() ? "no samples" : "zero wall time");
  }
  if (trace.latencies_ms.empty()) {
    e.mean_latency_ms = MetricValue::absent("no samples");
  } else {
    double sum = 0.0;
    for (double l : trace.latencies_ms) sum += l;
    e.mean_latency_ms = MetricValue::of(sum / static_cast<double>(trace.latencies_ms.size()));
  }
  return e;
}

SliceKey parse_slice_key(const std::string& name) {
  if (name == "source") return SliceKey::source;
  if (name == "lang") return SliceKey::lang;
  if (name == "model") return SliceKey::model;
  if (name == "attack") return SliceKey::attack;
  throw UsageError("unknown slice key '" + name + "'");
}

const char* to_string(SliceKey key) {
  switch (key) {
    case SliceKey::source:
      return "source";
    case SliceKey::lang:
      return "lang";
    case SliceKey::model:
      return "model";
    case SliceKey::attack:
      return "attack";
  }
  return "source";
}

std::map<std::string, SliceReport> slice(std::span<const Prediction> preds, SliceKey key, std::size_t min_size) {
  std::map<std::string, std::vector<Prediction>> groups;
  for (const auto& p : preds) {
    std::string group;
    switch (key) {
      case SliceKey::source:
        group = p.source.value_or("unknown");
        break;
      case SliceKey::lang:
        group = p.lang.value_or("unknown");
        break;
      case SliceKey::model:
        group = p.model.value_or("unknown");
        break;
      case SliceKey::attack:
        group = p.attack.value_or("clean");
        break;
    }
    groups[group].push_back(p);
  }
  std::map<std::string, SliceReport> out;
  for (const auto& [name, members] : groups) {
    SliceReport r;
    r.n = members.size();
    r.low_confidence = members.size() < min_size;
    r.metrics = effectiveness(members);
    out.emplace(name, std::move(r));
  }
  return out;
}

ordered_json to_json(const EvalReport& r) {
  ordered_json j;
  j["detector"] = r.detector;
  j["dataset_fingerprint"] = r.dataset_fingerprint;
  j["attack"] = r.attack;
  j["effectiveness"] = effectiveness_json(r.effectiveness);
  ordered_json ops = ordered_json::array();
  for (const auto& op : r.tpr_at_fpr) {
    ops.push_back({{"alpha", op.alpha}, {"tpr", to_json(op.tpr)}, {"resolution_limited", op.resolution_limited}});
  }
  j["tpr_at_fpr"] = std::move(ops);
  j["asr"] = r.asr ? ordered_json(to_json(*r.asr)) : ordered_json(nullptr);
  ordered_json eff;
  eff["n"] = r.efficiency.n;
  eff["wall_seconds"] = r.efficiency.wall_seconds;
  eff["throughput_per_s"] = to_json(r.efficiency.throughput_per_s);
  eff["mean_latency_ms"] = to_json(r.efficiency.mean_latency_ms);
  j["efficiency"] = std::move(eff);
  ordered_json slices = ordered_json::object();
  for (const auto& [key, groups] : r.slices) {
    ordered_json g = ordered_json::object();
    for (const auto& [name, s] : groups) {
      g[name] = {{"n", s.n}, {"low_confidence", s.low_confidence}, {"metrics", effectiveness_json(s.metrics)}};
    }
    slices[key] = std::move(g);
  }
  j["slices"] = std::move(slices);
  j["gpu_peak_gib"] = r.gpu_peak_gib ? ordered_json(*r.gpu_peak_gib) : ordered_json(nullptr);
  return j;
}

EvalReport eval_report_from_json(const json& j) {
  try {
    EvalReport r;
    r.detector = j.at("detector").get<std::string>();
    r.dataset_fingerprint = j.at("dataset_fingerprint").get<std::string>();
    r.attack = j.at("attack").get<std::string>();
    r.effectiveness = effectiveness_from_json(j.at("effectiveness"));
    for (const auto& op : j.at("tpr_at_fpr")) {
      r.tpr_at_fpr.push_back(
          {op.at("alpha").get<double>(), metric_from_json(op.at("tpr")), op.at("resolution_limited").get<bool>()});
    }
    if (!j.at("asr").is_null()) r.asr = metric_from_json(j.at("asr"));
    const auto& eff = j.at("efficiency");
    r.efficiency.n = eff.at("n").get<std::size_t>();
    r.efficiency.wall_seconds = eff.at("wall_seconds").get<double>();
    r.efficiency.throughput_per_s = metric_from_json(eff.at("throughput_per_s"));
    r.efficiency.mean_latency_ms = metric_from_json(eff.at("mean_latency_ms"));
    for (const auto& [key, groups] : j.at("slices").items()) {
      for (const auto& [name, s] : groups.items()) {
        r.slices[key][name] = {s.at("n").get<std::size_t>(), s.at("low_confidence").get<bool>(),
                               effectiveness_from_json(s.at("metrics"))};
      }
    }
    if (!j.at("gpu_peak_gib").is_null()) r.gpu_peak_gib = j.at("gpu_peak_gib").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
}

EvalReport evaluate_predictions(const std::string& detector, const std::string& dataset_fingerprint,
                                std::span<const Prediction> predictions, const EfficiencyTrace& trace,
                                std::span<const SliceKey> slice_keys) {
  EvalReport r;
  r.detector = detector;
  r.dataset_fingerprint = dataset_fingerprint;
  r.effectiveness = effectiveness(predictions);
  for (double alpha : kDefaultFprLevels) r.tpr_at_fpr.push_back(tpr_at_fpr(predictions, alpha));
  r.efficiency = efficiency(trace);
  for (SliceKey key : slice_keys) r.slices[to_string(key)] = slice(predictions, key);
  return r;
}

}  // namespace forgeval
