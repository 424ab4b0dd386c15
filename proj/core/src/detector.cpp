#include "forgeval/detector.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <thread>

#include "forgeval/errors.hpp"

using nlohmann::json;

namespace forgeval {

const char* to_string(DetectorKind kind) {
  switch (kind) {
    case DetectorKind::builtin_metric:
      return "builtin_metric";
    case DetectorKind::external_process:
      return "external_process";
    case DetectorKind::external_http:
      return "external_http";
  }
  return "builtin_metric";
}

json to_json(const DetectorHandle& h) {
  return {{"name", h.name}, {"kind", to_string(h.kind)}, {"sign", to_string(h.sign)}, {"config", h.config}};
}

namespace stats {
namespace {

double mean_of(std::span<const TokenScore> tokens, double (*f)(const TokenScore&)) {
  if (tokens.empty()) throw DataError("no tokens to score");
  double sum = 0.0;
  for (const auto& t : tokens) sum += f(t);
  return sum / static_cast<double>(tokens.size());
}

}  // namespace

double likelihood(std::span<const TokenScore> tokens) {
  return mean_of(tokens, [](const TokenScore& t) { return t.logprob; });
}

double rank(std::span<const TokenScore> tokens) {
  return -mean_of(tokens, [](const TokenScore& t) { return static_cast<double>(t.rank); });
}

double logrank(std::span<const TokenScore> tokens) {
  return -mean_of(tokens, [](const TokenScore& t) { return std::log(static_cast<double>(t.rank)); });
}

double entropy(std::span<const TokenScore> tokens) {
  return mean_of(tokens, [](const TokenScore& t) { return t.entropy; });
}

std::array<std::size_t, 4> gltr_histogram(std::span<const TokenScore> tokens) {
  std::array<std::size_t, 4> h{};
  for (const auto& t : tokens) {
    if (t.rank <= 10) {
      ++h[0];
    } else if (t.rank <= 100) {
      ++h[1];
    } else if (t.rank <= 1000) {
      ++h[2];
    } else {
      ++h[3];
    }
  }
  return h;
}

double gltr(std::span<const TokenScore> tokens) {
  if (tokens.empty()) throw DataError("no tokens to score");
  return static_cast<double>(gltr_histogram(tokens)[0]) / static_cast<double>(tokens.size());
}

LrrValue lrr(std::span<const TokenScore> tokens) {
  const double num = likelihood(tokens);
  const double den = logrank(tokens);
  if (den == 0.0) return {0.0, true};
  return {num / den, false};
}

}  // namespace stats

namespace {

enum class Statistic { likelihood, rank, logrank, entropy, gltr, lrr };

class MetricDetector final : public Detector {
 public:
  MetricDetector(DetectorHandle handle, Statistic stat, std::shared_ptr<const TokenScorer> scorer)
      : Detector(std::move(handle)), stat_(stat), scorer_(std::move(scorer)) {
    if (!scorer_) throw UsageError("detector '" + this->handle().name + "' requires a scoring backend (--lm)");
  }

  DetectorOutput evaluate(const std::string&, const std::string& text) const override {
    const std::vector<TokenScore> tokens = scorer_->score_text(text);
    DetectorOutput out;
    switch (stat_) {
      case Statistic::likelihood:
        out.score = stats::likelihood(tokens);
        break;
      case Statistic::rank:
        out.score = stats::rank(tokens);
        break;
      case Statistic::logrank:
        out.score = stats::logrank(tokens);
        break;
      case Statistic::entropy:
        out.score = stats::entropy(tokens);
        break;
      case Statistic::gltr: {
        const auto h = stats::gltr_histogram(tokens);
        out.score = static_cast<double>(h[0]) / static_cast<double>(tokens.size());
        out.metadata["gltr_buckets"] = h;
        break;
      }
      case Statistic::lrr: {
        const auto v = stats::lrr(tokens);
        out.score = v.value;
        if (v.zero_denominator) out.flags.push_back("lrr_zero_denominator");
        break;
      }
    }
    return out;
  }

 private:
  Statistic stat_;
  std::shared_ptr<const TokenScorer> scorer_;
};

class ExternalDetector final : public Detector {
 public:
  ExternalDetector(DetectorHandle handle, std::shared_ptr<Channel> channel)
      : Detector(std::move(handle)), channel_(std::move(channel)) {}

  DetectorOutput evaluate(const std::string& record_id, const std::string& text) const override {
    const std::string line = channel_->exchange(make_request("score", record_id, text));
    const ScoreReply reply = parse_score_reply(line, record_id);
    if (!reply.error.empty()) throw BackendError("detector error: " + reply.error);
    DetectorOutput out;
    out.score = *reply.score;
    out.gpu_peak_gib = reply.gpu_peak_gib;
    return out;
  }

 private:
  std::shared_ptr<Channel> channel_;
};

}  // namespace

RawScore score(const Detector& detector, const Record& record) {
  if (record.text.empty()) throw DataError("record '" + record.id + "' has empty text");
  const auto started = std::chrono::steady_clock::now();
  DetectorOutput out = detector.evaluate(record.id, record.text);
  const auto finished = std::chrono::steady_clock::now();
  if (!std::isfinite(out.score)) {
    throw ProtocolError("detector '" + detector.handle().name + "' produced a non-finite score for '" +
                        record.id + "'");
  }
  RawScore s;
  s.record_id = record.id;
  s.score = out.score;
  s.latency_ms = std::chrono::duration<double, std::milli>(finished - started).count();
  s.flags = std::move(out.flags);
  s.metadata = std::move(out.metadata);
  s.gpu_peak_gib = out.gpu_peak_gib;
  return s;
}

std::optional<double> EfficiencyTrace::throughput() const {
  if (latencies_ms.empty() || !(wall_seconds > 0)) return std::nullopt;
  return static_cast<double>(latencies_ms.size()) / wall_seconds;
}

std::size_t BatchScores::failures() const {
  return static_cast<std::size_t>(
      std::count_if(outcomes.begin(), outcomes.end(), [](const ScoreOutcome& o) { return !o.ok(); }));
}

BatchScores batch_score(const Detector& detector, std::span<const Record> records,
                        std::size_t parallelism) {
  if (parallelism == 0) throw UsageError("parallelism must be >= 1");
  BatchScores out;
  out.outcomes.resize(records.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < records.size(); i = next++) {
      try {
        out.outcomes[i].score = score(detector, records[i]);
      } catch (const std::exception& e) {
        out.outcomes[i].error = e.what();
      }
    }
  };
  const auto started = std::chrono::steady_clock::now();
  const std::size_t n_threads = std::min(parallelism, records.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  out.trace.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  for (const auto& o : out.outcomes) {
    if (o.ok()) out.trace.latencies_ms.push_back(o.score->latency_ms);
  }
  return out;
}

void DetectorRegistry::add(DetectorHandle handle, Factory factory) {
  std::unique_lock lock(mu_);
  for (const auto& e : entries_) {
    if (e.handle.name == handle.name) throw UsageError("detector '" + handle.name + "' is already registered");
  }
  entries_.push_back({std::move(handle), std::move(factory)});
}

std::vector<DetectorHandle> DetectorRegistry::list() const {
  std::shared_lock lock(mu_);
  std::vector<DetectorHandle> out;
  for (const auto& e : entries_) out.push_back(e.handle);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  return out;
}

DetectorHandle DetectorRegistry::resolve(const std::string& name) const {
  std::shared_lock lock(mu_);
  for (const auto& e : entries_) {
    if (e.handle.name == name) return e.handle;
  }
  throw UsageError("unknown detector '" + name + "'");
}

bool DetectorRegistry::contains(const std::string& name) const {
  std::shared_lock lock(mu_);
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.handle.name == name; });
}

std::unique_ptr<Detector> DetectorRegistry::create(const std::string& name,
                                                   std::shared_ptr<const TokenScorer> scorer) const {
  Entry entry;
  {
    std::shared_lock lock(mu_);
    const auto it = std::find_if(entries_.begin(), entries_.end(),
                                 [&](const Entry& e) { return e.handle.name == name; });
    if (it == entries_.end()) throw UsageError("unknown detector '" + name + "'");
    entry = *it;
  }
  return entry.factory(entry.handle, std::move(scorer));
}

DetectorRegistry DetectorRegistry::with_builtins() {
  DetectorRegistry registry;
  struct Builtin {
    const char* name;
    Statistic stat;
    Sign sign;
  };
  // Machine text is predictable: high likelihood, low ranks, low entropy.
  static constexpr Builtin kBuiltins[] = {
      {"likelihood", Statistic::likelihood, Sign::higher_is_machine},
      {"rank", Statistic::rank, Sign::higher_is_machine},
      {"logrank", Statistic::logrank, Sign::higher_is_machine},
      {"entropy", Statistic::entropy, Sign::lower_is_machine},
      {"gltr", Statistic::gltr, Sign::higher_is_machine},
      {"lrr", Statistic::lrr, Sign::higher_is_machine},
  };
  for (const auto& b : kBuiltins) {
    DetectorHandle h;
    h.name = b.name;
    h.kind = DetectorKind::builtin_metric;
    h.sign = b.sign;
    h.config = {{"statistic", b.name}};
    const Statistic stat = b.stat;
    registry.add(std::move(h), [stat](const DetectorHandle& handle, std::shared_ptr<const TokenScorer> scorer) {
      return std::make_unique<MetricDetector>(handle, stat, std::move(scorer));
    });
  }
  return registry;
}

DetectorHandle register_external(DetectorRegistry& registry, DetectorKind kind, const std::string& target,
                                 int timeout_ms) {
  std::shared_ptr<Channel> channel;
  switch (kind) {
    case DetectorKind::external_process:
      channel = std::make_shared<ProcessChannel>(target, timeout_ms);
      break;
    case DetectorKind::external_http:
      channel = std::make_shared<HttpChannel>(target, timeout_ms);
      break;
    case DetectorKind::builtin_metric:
      throw UsageError("register_external needs an external detector kind");
  }
  DetectorHandle h;
  h.name = channel->handshake().name;
  h.kind = kind;
  h.sign = channel->handshake().sign;
  h.config = {{kind == DetectorKind::external_process ? "command" : "url", target},
              {"timeout_ms", timeout_ms}};
  registry.add(h, [channel](const DetectorHandle& handle, std::shared_ptr<const TokenScorer>) {
    return std::make_unique<ExternalDetector>(handle, channel);
  });
  return h;
}

json config_schema(const DetectorHandle& handle) {
  json schema = json::object();
  switch (handle.kind) {
    case DetectorKind::builtin_metric:
      schema["lm"] = "path to a character n-gram model artifact (required)";
      break;
    case DetectorKind::external_process:
      schema["command"] = "shell command speaking the forgeval/1 line protocol";
      schema["timeout_ms"] = "per-request timeout";
      break;
    case DetectorKind::external_http:
      schema["url"] = "base URL serving /v1/handshake and /v1/score";
      schema["timeout_ms"] = "per-request timeout";
      break;
  }
  for (const char* key : kReservedConfigKeys) schema[key] = "reserved for perturbation-based external detectors";
  return schema;
}

}  // namespace forgeval
