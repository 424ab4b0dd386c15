#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "forgeval/scoring.hpp"

namespace forgeval {

inline constexpr const char* kProtocolVersion = "forgeval/1";

enum class Sign { higher_is_machine, lower_is_machine };
const char* to_string(Sign sign);
Sign parse_sign(const std::string& name);

struct Handshake {
  std::string name;
  Sign sign = Sign::higher_is_machine;
};

// Request line for `method` ("score" or "score_tokens"); keys in wire order.
std::string make_request(const std::string& method, const std::string& id, const std::string& text);

// Throws ProtocolError unless `line` is a valid handshake object.
Handshake parse_handshake(const std::string& line);

struct ScoreReply {
  std::optional<double> score;
  std::string error;  // detector-reported per-item error
  std::optional<double> gpu_peak_gib;
};

// Throws ProtocolError on malformed JSON, id mismatch, or a missing or
// non-finite score. A well-formed {"id","error"} reply is returned with
// `error` set.
ScoreReply parse_score_reply(const std::string& line, const std::string& expected_id);

struct TokenReply {
  std::vector<TokenScore> tokens;
  std::string error;
};
TokenReply parse_token_reply(const std::string& line, const std::string& expected_id);

// A request/response transport to one external process or service.
class Channel {
 public:
  virtual ~Channel() = default;
  virtual const Handshake& handshake() const = 0;
  // Sends one request line and returns the reply line. Throws BackendError on
  // timeout or a dead transport.
  virtual std::string exchange(const std::string& request_line) = 0;
};

// Child process spoken to over stdin/stdout. `command` runs under /bin/sh -c.
// The handshake line is read during construction.
class ProcessChannel final : public Channel {
 public:
  ProcessChannel(const std::string& command, int timeout_ms);
  ~ProcessChannel() override;
  ProcessChannel(const ProcessChannel&) = delete;
  ProcessChannel& operator=(const ProcessChannel&) = delete;

  const Handshake& handshake() const override { return handshake_; }
  std::string exchange(const std::string& request_line) override;

 private:
  std::string read_line_locked();
  void write_locked(const std::string& data);

  std::mutex mu_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  int timeout_ms_;
  bool broken_ = false;
  std::string buffer_;
  Handshake handshake_;
};

// HTTP service: GET {base}/v1/handshake, POST {base}/v1/score (one request
// object per body).
class HttpChannel final : public Channel {
 public:
  HttpChannel(const std::string& base_url, int timeout_ms);

  const Handshake& handshake() const override { return handshake_; }
  std::string exchange(const std::string& request_line) override;

 private:
  std::string scheme_host_port_;
  std::string prefix_;
  int timeout_ms_;
  Handshake handshake_;
};

// TokenScorer backed by the "score_tokens" method of an external process.
class ExternalTokenScorer final : public TokenScorer {
 public:
  explicit ExternalTokenScorer(std::shared_ptr<Channel> channel) : channel_(std::move(channel)) {}
  std::vector<TokenScore> score_text(std::string_view text) const override;
  std::string fingerprint() const override;

 private:
  std::shared_ptr<Channel> channel_;
};

}  // namespace forgeval
