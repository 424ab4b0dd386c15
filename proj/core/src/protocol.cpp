#include "forgeval/protocol.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstring>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include <httplib.h>

#include "forgeval/errors.hpp"
#include "forgeval/fingerprint.hpp"

using nlohmann::json;
using nlohmann::ordered_json;

namespace forgeval {
namespace {

json parse_line(const std::string& line, const char* what) {
  try {
    json j = json::parse(line);
    if (!j.is_object()) throw ProtocolError(std::string(what) + " is not an object");
    return j;
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed ") + what + ": " + e.what());
  }
}

void check_id(const json& j, const std::string& expected_id) {
  const auto it = j.find("id");
  if (it == j.end() || !it->is_string()) throw ProtocolError("reply without string id");
  if (it->get<std::string>() != expected_id) {
    throw ProtocolError("reply id '" + it->get<std::string>() + "' does not match request '" + expected_id + "'");
  }
}

void ignore_sigpipe() {
  static std::once_flag once;
  std::call_once(once, [] { std::signal(SIGPIPE, SIG_IGN); });
}

}  // namespace

const char* to_string(Sign sign) {
  return sign == Sign::higher_is_machine ? "higher_is_machine" : "lower_is_machine";
}

Sign parse_sign(const std::string& name) {
  if (name == "higher_is_machine") return Sign::higher_is_machine;
  if (name == "lower_is_machine") return Sign::lower_is_machine;
  throw UsageError("unknown sign '" + name + "'");
}

std::string make_request(const std::string& method, const std::string& id, const std::string& text) {
  ordered_json j;
  j["jsonrpc-like"] = kProtocolVersion;
  j["method"] = method;
  j["id"] = id;
  j["text"] = text;
  return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

Handshake parse_handshake(const std::string& line) {
  const json j = parse_line(line, "handshake");
  if (j.value("protocol", std::string{}) != kProtocolVersion) {
    throw ProtocolError("handshake protocol must be \"" + std::string(kProtocolVersion) + "\"");
  }
  Handshake h;
  const auto name = j.find("name");
  if (name == j.end() || !name->is_string() || name->get<std::string>().empty()) {
    throw ProtocolError("handshake without detector name");
  }
  h.name = name->get<std::string>();
  const auto sign = j.find("sign");
  if (sign == j.end() || !sign->is_string()) throw ProtocolError("handshake without sign");
  try {
    h.sign = parse_sign(sign->get<std::string>());
  } catch (const UsageError& e) {
    throw ProtocolError(std::string("handshake: ") + e.what());
  }
  return h;
}

ScoreReply parse_score_reply(const std::string& line, const std::string& expected_id) {
  const json j = parse_line(line, "reply");
  check_id(j, expected_id);
  ScoreReply reply;
  if (const auto err = j.find("error"); err != j.end()) {
    reply.error = err->is_string() ? err->get<std::string>() : err->dump();
    if (reply.error.empty()) reply.error = "unspecified detector error";
    return reply;
  }
  const auto score = j.find("score");
  if (score == j.end() || !score->is_number()) throw ProtocolError("reply without numeric score");
  const double s = score->get<double>();
  if (!std::isfinite(s)) throw ProtocolError("non-finite score");
  reply.score = s;
  if (const auto gpu = j.find("gpu_peak_gib"); gpu != j.end() && gpu->is_number()) {
    reply.gpu_peak_gib = gpu->get<double>();
  }
  return reply;
}

TokenReply parse_token_reply(const std::string& line, const std::string& expected_id) {
  const json j = parse_line(line, "reply");
  check_id(j, expected_id);
  TokenReply reply;
  if (const auto err = j.find("error"); err != j.end()) {
    reply.error = err->is_string() ? err->get<std::string>() : err->dump();
    return reply;
  }
  const auto tokens = j.find("tokens");
  if (tokens == j.end() || !tokens->is_array()) throw ProtocolError("reply without tokens array");
  for (const auto& t : *tokens) reply.tokens.push_back(token_score_from_json(t));
  return reply;
}

ProcessChannel::ProcessChannel(const std::string& command, int timeout_ms) : timeout_ms_(timeout_ms) {
  ignore_sigpipe();
  int in_pipe[2];
  int out_pipe[2];
  if (pipe(in_pipe) != 0) throw BackendError("pipe() failed");
  if (pipe(out_pipe) != 0) {
    close(in_pipe[0]);
    close(in_pipe[1]);
    throw BackendError("pipe() failed");
  }
  pid_ = fork();
  if (pid_ < 0) throw BackendError("fork() failed");
  if (pid_ == 0) {
    dup2(in_pipe[0], STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    close(in_pipe[0]);
    close(in_pipe[1]);
    close(out_pipe[0]);
    close(out_pipe[1]);
    execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  close(in_pipe[0]);
  close(out_pipe[1]);
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  fcntl(to_child_, F_SETFD, FD_CLOEXEC);
  fcntl(from_child_, F_SETFD, FD_CLOEXEC);

  std::lock_guard lock(mu_);
  handshake_ = parse_handshake(read_line_locked());
}

ProcessChannel::~ProcessChannel() {
  if (to_child_ >= 0) close(to_child_);
  if (from_child_ >= 0) close(from_child_);
  if (pid_ > 0) {
    int status = 0;
    for (int i = 0; i < 50; ++i) {
      if (waitpid(pid_, &status, WNOHANG) != 0) return;
      usleep(10000);
    }
    kill(pid_, SIGKILL);
    waitpid(pid_, &status, 0);
  }
}

std::string ProcessChannel::read_line_locked() {
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms_);
  while (true) {
    const auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return line;
    }
    const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (remaining.count() <= 0) {
      broken_ = true;
      throw BackendError("external detector timed out after " + std::to_string(timeout_ms_) + " ms");
    }
    pollfd pfd{from_child_, POLLIN, 0};
    const int rc = poll(&pfd, 1, static_cast<int>(remaining.count()));
    if (rc < 0) {
      if (errno == EINTR) continue;
      broken_ = true;
      throw BackendError("poll() failed on external detector pipe");
    }
    if (rc == 0) continue;
    char chunk[4096];
    const ssize_t n = read(from_child_, chunk, sizeof(chunk));
    if (n < 0) {
      if (errno == EINTR) continue;
      broken_ = true;
      throw BackendError("read from external detector failed");
    }
    if (n == 0) {
      broken_ = true;
      throw BackendError("external detector closed its output");
    }
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

void ProcessChannel::write_locked(const std::string& data) {
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = write(to_child_, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      broken_ = true;
      throw BackendError(std::string("write to external detector failed: ") + std::strerror(errno));
    }
    off += static_cast<std::size_t>(n);
  }
}

std::string ProcessChannel::exchange(const std::string& request_line) {
  std::lock_guard lock(mu_);
  if (broken_) throw BackendError("external detector channel is unusable after an earlier failure");
  write_locked(request_line + "\n");
  return read_line_locked();
}

HttpChannel::HttpChannel(const std::string& base_url, int timeout_ms) : timeout_ms_(timeout_ms) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) throw UsageError("url must include a scheme: " + base_url);
  const auto path_start = base_url.find('/', scheme_end + 3);
  scheme_host_port_ = base_url.substr(0, path_start);
  prefix_ = path_start == std::string::npos ? "" : base_url.substr(path_start);
  while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();

  httplib::Client client(scheme_host_port_);
  client.set_connection_timeout(std::chrono::milliseconds(timeout_ms_));
  client.set_read_timeout(std::chrono::milliseconds(timeout_ms_));
  auto res = client.Get(prefix_ + "/v1/handshake");
  if (!res) throw BackendError("external detector unreachable: " + httplib::to_string(res.error()));
  if (res->status != 200) throw ProtocolError("handshake returned HTTP " + std::to_string(res->status));
  std::string body = res->body;
  while (!body.empty() && (body.back() == '\n' || body.back() == '\r')) body.pop_back();
  handshake_ = parse_handshake(body);
}

std::string HttpChannel::exchange(const std::string& request_line) {
  httplib::Client client(scheme_host_port_);
  client.set_connection_timeout(std::chrono::milliseconds(timeout_ms_));
  client.set_read_timeout(std::chrono::milliseconds(timeout_ms_));
  auto res = client.Post(prefix_ + "/v1/score", request_line, "application/json");
  if (!res) throw BackendError("external detector request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw BackendError("external detector returned HTTP " + std::to_string(res->status));
  std::string body = res->body;
  while (!body.empty() && (body.back() == '\n' || body.back() == '\r')) body.pop_back();
  return body;
}

std::vector<TokenScore> ExternalTokenScorer::score_text(std::string_view text) const {
  static std::atomic<unsigned long long> counter{0};
  const std::string id = "tok-" + std::to_string(counter++);
  const std::string line = channel_->exchange(make_request("score_tokens", id, std::string(text)));
  TokenReply reply = parse_token_reply(line, id);
  if (!reply.error.empty()) throw BackendError("external scorer: " + reply.error);
  if (reply.tokens.empty()) throw ProtocolError("external scorer returned no tokens");
  return std::move(reply.tokens);
}

std::string ExternalTokenScorer::fingerprint() const {
  return sha256_hex(std::string("external:") + channel_->handshake().name);
}

}  // namespace forgeval
