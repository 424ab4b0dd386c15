#include "forgeval/generator.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "forgeval/errors.hpp"
#include "forgeval/fingerprint.hpp"
#include "forgeval/rng.hpp"
#include "forgeval/text.hpp"

using nlohmann::json;

namespace forgeval {
namespace {

struct Url {
  std::string scheme_host_port;
  std::string path_prefix;
};

Url split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw UsageError("base_url must include a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  Url out;
  out.scheme_host_port = url.substr(0, path_start);
  out.path_prefix = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!out.path_prefix.empty() && out.path_prefix.back() == '/') out.path_prefix.pop_back();
  return out;
}

GenerationResult stub_generate(const GenerationConfig& config, const std::string& input) {
  const auto started = std::chrono::steady_clock::now();
  const std::u32string u = text::to_u32(input);
  std::vector<std::string> words;
  for (const auto& span : text::word_spans(u)) {
    words.push_back(text::to_utf8(std::u32string_view(u).substr(span.begin, span.size())));
  }
  Rng rng(hash64(config.fingerprint() + "\n" + input));
  rng.shuffle(words);
  std::string out;
  for (const auto& w : words) {
    out += w;
    out += ' ';
  }
  out += kStubSuffix;
  GenerationResult result;
  result.text = std::move(out);
  result.model = config.model;
  result.config_fingerprint = config.fingerprint();
  result.latency_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  return result;
}

GenerationResult http_generate(const GenerationConfig& config, const std::string& input,
                               RequestLog* log) {
  const Url url = split_url(*config.base_url);
  const std::string path = url.path_prefix + "/chat/completions";

  json body;
  body["model"] = config.model;
  body["messages"] = json::array({{{"role", "user"}, {"content", config.instantiate(input)}}});
  body["temperature"] = config.temperature;
  body["max_tokens"] = config.max_tokens;
  body["seed"] = config.seed;
  if (config.top_p) body["top_p"] = *config.top_p;
  if (config.top_k && config.send_top_k) body["top_k"] = *config.top_k;
  const std::string payload = body.dump();

  httplib::Headers headers;
  if (const char* token = std::getenv(config.api_key_env.c_str()); token && *token) {
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }

  httplib::Client client(url.scheme_host_port);
  const auto timeout = std::chrono::milliseconds(config.timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);

  RequestLogEntry entry{url.scheme_host_port + path, config.model, 0, 0, false};
  std::string last_error;
  const auto started = std::chrono::steady_clock::now();
  for (int attempt = 0; attempt <= config.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(
          static_cast<long long>(config.retry_backoff_ms) * (1LL << (attempt - 1))));
    }
    ++entry.attempts;
    auto res = client.Post(path, headers, payload, "application/json");
    if (!res) {
      last_error = "request failed: " + httplib::to_string(res.error());
      continue;
    }
    entry.status = res->status;
    if (res->status < 200 || res->status >= 300) {
      last_error = "HTTP status " + std::to_string(res->status);
      continue;
    }
    std::string content;
    try {
      const json reply = json::parse(res->body);
      const json& message = reply.at("choices").at(0).at("message");
      if (message.contains("content") && message["content"].is_string()) {
        content = message["content"].get<std::string>();
      }
    } catch (const json::exception& e) {
      last_error = std::string("malformed completion body: ") + e.what();
      continue;
    }
    entry.ok = !content.empty();
    if (log) log->add(entry);
    if (content.empty()) throw BackendError("empty completion from " + config.model);
    GenerationResult result;
    result.text = std::move(content);
    result.model = config.model;
    result.config_fingerprint = config.fingerprint();
    result.latency_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    return result;
  }
  if (log) log->add(entry);
  throw BackendError(config.model + ": " + last_error + " after " + std::to_string(entry.attempts) +
                     " attempt(s)");
}

}  // namespace

void GenerationConfig::validate() const {
  const auto first = prompt_template.find("{text}");
  if (first == std::string::npos || prompt_template.find("{text}", first + 1) != std::string::npos) {
    throw UsageError("prompt_template: must contain {text} exactly once");
  }
  if (backend == Backend::http_chat && (!base_url || base_url->empty())) {
    throw UsageError("base_url: required for the http_chat backend");
  }
  if (model.empty()) throw UsageError("model: must not be empty");
  if (!(temperature >= 0) || !std::isfinite(temperature)) throw UsageError("temperature: must be >= 0");
  if (top_k && *top_k <= 0) throw UsageError("top_k: must be a positive integer");
  if (top_p && !(*top_p > 0 && *top_p <= 1)) throw UsageError("top_p: must lie in (0, 1]");
  if (max_tokens <= 0) throw UsageError("max_tokens: must be positive");
  if (timeout_ms <= 0) throw UsageError("timeout_ms: must be positive");
  if (max_retries < 0 || max_retries > 10) throw UsageError("max_retries: must be in [0, 10]");
  if (retry_backoff_ms < 0) throw UsageError("retry_backoff_ms: must be >= 0");
}

std::string GenerationConfig::fingerprint() const {
  json j;
  j["backend"] = backend == Backend::stub ? "stub" : "http_chat";
  j["base_url"] = base_url ? json(*base_url) : json(nullptr);
  j["model"] = model;
  j["prompt_template"] = prompt_template;
  j["temperature"] = temperature;
  j["top_k"] = top_k && (send_top_k || backend == Backend::stub) ? json(*top_k) : json(nullptr);
  j["top_p"] = top_p ? json(*top_p) : json(nullptr);
  j["max_tokens"] = max_tokens;
  j["seed"] = seed;
  return json_fingerprint(j);
}

std::string GenerationConfig::instantiate(const std::string& input_text) const {
  std::string out = prompt_template;
  const auto pos = out.find("{text}");
  if (pos != std::string::npos) out.replace(pos, 6, input_text);
  return out;
}

json to_json(const GenerationConfig& c) {
  json j;
  j["backend"] = c.backend == Backend::stub ? "stub" : "http_chat";
  if (c.base_url) j["base_url"] = *c.base_url;
  j["model"] = c.model;
  j["prompt_template"] = c.prompt_template;
  j["temperature"] = c.temperature;
  if (c.top_k) j["top_k"] = *c.top_k;
  if (c.top_p) j["top_p"] = *c.top_p;
  j["max_tokens"] = c.max_tokens;
  j["seed"] = c.seed;
  j["timeout_ms"] = c.timeout_ms;
  j["max_retries"] = c.max_retries;
  j["retry_backoff_ms"] = c.retry_backoff_ms;
  j["api_key_env"] = c.api_key_env;
  j["send_top_k"] = c.send_top_k;
  return j;
}

GenerationConfig generation_config_from_json(const json& j) {
  if (!j.is_object()) throw UsageError("generator: expected an object");
  GenerationConfig c;
  const std::string* field = nullptr;
  try {
    for (const auto& [key, value] : j.items()) {
      field = &key;
      if (key == "backend") {
        const auto b = value.get<std::string>();
        if (b == "stub") {
          c.backend = Backend::stub;
        } else if (b == "http_chat") {
          c.backend = Backend::http_chat;
        } else {
          throw UsageError("backend: unknown backend '" + b + "'");
        }
      } else if (key == "base_url") {
        c.base_url = value.get<std::string>();
      } else if (key == "model") {
        c.model = value.get<std::string>();
      } else if (key == "prompt_template") {
        c.prompt_template = value.get<std::string>();
      } else if (key == "temperature") {
        c.temperature = value.get<double>();
      } else if (key == "top_k") {
        c.top_k = value.get<int>();
      } else if (key == "top_p") {
        c.top_p = value.get<double>();
      } else if (key == "max_tokens") {
        c.max_tokens = value.get<int>();
      } else if (key == "seed") {
        c.seed = value.get<std::uint64_t>();
      } else if (key == "timeout_ms") {
        c.timeout_ms = value.get<int>();
      } else if (key == "max_retries") {
        c.max_retries = value.get<int>();
      } else if (key == "retry_backoff_ms") {
        c.retry_backoff_ms = value.get<int>();
      } else if (key == "api_key_env") {
        c.api_key_env = value.get<std::string>();
      } else if (key == "send_top_k") {
        c.send_top_k = value.get<bool>();
      } else {
        throw UsageError(key + ": unknown generator field");
      }
    }
  } catch (const json::exception& e) {
    throw UsageError((field ? *field : std::string("generator")) + ": " + e.what());
  }
  return c;
}

void RequestLog::add(RequestLogEntry entry) {
  std::lock_guard lock(mu_);
  entries_.push_back(std::move(entry));
}

std::vector<RequestLogEntry> RequestLog::entries() const {
  std::lock_guard lock(mu_);
  return entries_;
}

json RequestLog::to_json() const {
  json arr = json::array();
  for (const auto& e : entries()) {
    arr.push_back({{"url", e.url}, {"model", e.model}, {"status", e.status}, {"attempts", e.attempts},
                   {"ok", e.ok}});
  }
  return arr;
}

GenerationResult generate(const GenerationConfig& config, const std::string& input_text,
                          RequestLog* log) {
  config.validate();
  GenerationResult result = config.backend == Backend::stub ? stub_generate(config, input_text)
                                                             : http_generate(config, input_text, log);
  if (result.text.empty()) throw BackendError("empty completion from " + config.model);
  return result;
}

std::vector<GenerationOutcome> batch_generate(const GenerationConfig& config,
                                              const std::vector<std::string>& inputs,
                                              std::size_t parallelism, RequestLog* log) {
  if (parallelism == 0) throw UsageError("parallelism must be >= 1");
  config.validate();
  std::vector<GenerationOutcome> out(inputs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < inputs.size(); i = next++) {
      try {
        out[i].result = generate(config, inputs[i], log);
      } catch (const std::exception& e) {
        out[i].error = e.what();
      }
    }
  };
  const std::size_t n_threads = std::min(parallelism, inputs.size());
  if (n_threads <= 1) {
    worker();
    return out;
  }
  std::vector<std::thread> threads;
  threads.reserve(n_threads);
  for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  return out;
}

}  // namespace forgeval
