#pragma once

#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace forgeval {

enum class Backend { http_chat, stub };

struct GenerationConfig {
  Backend backend = Backend::stub;
  std::optional<std::string> base_url;
  std::string model = "stub";
  std::string prompt_template = "{text}";
  double temperature = 1.0;
  std::optional<int> top_k;
  std::optional<double> top_p;
  int max_tokens = 256;
  std::uint64_t seed = 0;
  int timeout_ms = 30000;
  int max_retries = 3;
  int retry_backoff_ms = 250;
  // Environment variable holding the bearer token.
  std::string api_key_env = "FORGEVAL_API_TOKEN";
  // The standard chat-completions API has no top_k; send it only when the
  // endpoint is known to accept it.
  bool send_top_k = false;

  // Throws UsageError naming the offending field.
  void validate() const;
  // Hash over the fields that influence generated text.
  std::string fingerprint() const;
  std::string instantiate(const std::string& input_text) const;
};

nlohmann::json to_json(const GenerationConfig& config);
// Missing keys keep their defaults. Throws UsageError on bad types/values.
GenerationConfig generation_config_from_json(const nlohmann::json& object);

struct GenerationResult {
  std::string text;
  std::string model;
  std::string config_fingerprint;
  double latency_ms = 0.0;
};

struct GenerationOutcome {
  std::optional<GenerationResult> result;
  std::string error;
  bool ok() const { return result.has_value(); }
};

// Request metadata for the run manifest; never carries the token.
struct RequestLogEntry {
  std::string url;
  std::string model;
  int status = 0;
  int attempts = 0;
  bool ok = false;
};

class RequestLog {
 public:
  void add(RequestLogEntry entry);
  std::vector<RequestLogEntry> entries() const;
  nlohmann::json to_json() const;

 private:
  mutable std::mutex mu_;
  std::vector<RequestLogEntry> entries_;
};

inline constexpr const char* kStubSuffix = "(generated offline)";

// Throws BackendError on timeout, non-success status after retries, or an
// empty completion.
GenerationResult generate(const GenerationConfig& config, const std::string& input_text,
                          RequestLog* log = nullptr);

// Results are aligned with `inputs`; at most `parallelism` requests run at once.
std::vector<GenerationOutcome> batch_generate(const GenerationConfig& config,
                                              const std::vector<std::string>& inputs,
                                              std::size_t parallelism, RequestLog* log = nullptr);

}  // namespace forgeval
