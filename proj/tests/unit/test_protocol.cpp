#include <gtest/gtest.h>

#include <chrono>
#include <csignal>
#include <thread>

#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include "forgeval/errors.hpp"
#include "forgeval/protocol.hpp"
#include "support.hpp"

using namespace forgeval;
using nlohmann::json;

namespace {

std::string toy(const std::string& args = "") {
  return "'" + testing_support::toy_detector_binary().string() + "'" + (args.empty() ? "" : " " + args);
}

int free_port() {
  const int fd = socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
  socklen_t len = sizeof(addr);
  getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  close(fd);
  return ntohs(addr.sin_port);
}

// Toy detector serving HTTP for the lifetime of the object.
class HttpToy {
 public:
  HttpToy() : port_(free_port()) {
    pid_ = fork();
    if (pid_ == 0) {
      const std::string bin = testing_support::toy_detector_binary().string();
      const std::string port = std::to_string(port_);
      execl(bin.c_str(), bin.c_str(), "--http", port.c_str(), "--name", "toy-http", static_cast<char*>(nullptr));
      _exit(127);
    }
  }
  ~HttpToy() {
    kill(pid_, SIGTERM);
    int status = 0;
    waitpid(pid_, &status, 0);
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

  std::unique_ptr<HttpChannel> connect() const {
    for (int attempt = 0;; ++attempt) {
      try {
        return std::make_unique<HttpChannel>(url(), 2000);
      } catch (const BackendError&) {
        if (attempt > 100) throw;
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
      }
    }
  }

 private:
  int port_;
  pid_t pid_ = -1;
};

}  // namespace

TEST(Wire, RequestKeysInOrder) {
  EXPECT_EQ(make_request("score", "r1", "hi \"x\""),
            R"({"jsonrpc-like":"forgeval/1","method":"score","id":"r1","text":"hi \"x\""})");
}

TEST(Wire, Handshake) {
  const auto h = parse_handshake(R"({"protocol":"forgeval/1","name":"d","sign":"lower_is_machine"})");
  EXPECT_EQ(h.name, "d");
  EXPECT_EQ(h.sign, Sign::lower_is_machine);
  EXPECT_THROW(parse_handshake(R"({"protocol":"forgeval/2","name":"d","sign":"higher_is_machine"})"),
               ProtocolError);
  EXPECT_THROW(parse_handshake(R"({"protocol":"forgeval/1","sign":"higher_is_machine"})"), ProtocolError);
  EXPECT_THROW(parse_handshake(R"({"protocol":"forgeval/1","name":"d","sign":"sideways"})"), ProtocolError);
  EXPECT_THROW(parse_handshake("[1]"), ProtocolError);
  EXPECT_THROW(parse_handshake("hello"), ProtocolError);
}

TEST(Wire, ScoreReply) {
  const auto ok = parse_score_reply(R"({"id":"a","score":-1.5,"gpu_peak_gib":2.0})", "a");
  EXPECT_EQ(ok.score, -1.5);
  EXPECT_EQ(ok.gpu_peak_gib, 2.0);
  EXPECT_TRUE(ok.error.empty());
  const auto err = parse_score_reply(R"({"id":"a","error":"boom"})", "a");
  EXPECT_FALSE(err.score.has_value());
  EXPECT_EQ(err.error, "boom");
  EXPECT_THROW(parse_score_reply(R"({"id":"b","score":1})", "a"), ProtocolError);
  EXPECT_THROW(parse_score_reply(R"({"id":"a","score":NaN})", "a"), ProtocolError);
  EXPECT_THROW(parse_score_reply(R"({"id":"a","score":"1"})", "a"), ProtocolError);
  EXPECT_THROW(parse_score_reply(R"({"id":"a"})", "a"), ProtocolError);
  EXPECT_THROW(parse_score_reply(R"({"score":1})", "a"), ProtocolError);
  EXPECT_THROW(parse_score_reply("1e999", "a"), ProtocolError);
  EXPECT_THROW(parse_score_reply(R"({"id":"a","score":1e999})", "a"), ProtocolError);
}

TEST(Wire, TokenReply) {
  const auto r = parse_token_reply(R"({"id":"t","tokens":[{"token":"a","logprob":-1,"rank":2,"entropy":0.5}]})", "t");
  ASSERT_EQ(r.tokens.size(), 1u);
  EXPECT_EQ(r.tokens[0], (TokenScore{"a", -1.0, 2, 0.5}));
  EXPECT_THROW(parse_token_reply(R"({"id":"t"})", "t"), ProtocolError);
  EXPECT_THROW(parse_token_reply(R"({"id":"t","tokens":[{"token":"a","logprob":1,"rank":2,"entropy":0}]})", "t"),
               ProtocolError);
}

TEST(Process, ScoresAndStaysInSyncAfterBadReplies) {
  ProcessChannel channel(toy("--name toy-a"), 5000);
  EXPECT_EQ(channel.handshake().name, "toy-a");
  EXPECT_EQ(channel.handshake().sign, Sign::higher_is_machine);
  EXPECT_EQ(parse_score_reply(channel.exchange(make_request("score", "1", "h\xC3\xA9llo")), "1").score, 5.0);
  EXPECT_THROW(parse_score_reply(channel.exchange(make_request("score", "2", "__malformed__")), "2"), ProtocolError);
  EXPECT_THROW(parse_score_reply(channel.exchange(make_request("score", "3", "__nan__")), "3"), ProtocolError);
  EXPECT_EQ(parse_score_reply(channel.exchange(make_request("score", "4", "__error__")), "4").error,
            "injected error");
  EXPECT_EQ(parse_score_reply(channel.exchange(make_request("score", "5", "abc")), "5").score, 3.0);
}

TEST(Process, TimeoutBreaksChannel) {
  ProcessChannel channel(toy("--delay-ms 400"), 100);
  EXPECT_THROW(channel.exchange(make_request("score", "1", "x")), BackendError);
  try {
    channel.exchange(make_request("score", "2", "x"));
    FAIL() << "expected BackendError";
  } catch (const BackendError& e) {
    EXPECT_NE(std::string(e.what()).find("unusable"), std::string::npos);
  }
}

TEST(Process, StartupFailures) {
  EXPECT_THROW(ProcessChannel("true", 2000), BackendError);
  EXPECT_THROW(ProcessChannel("echo not-a-handshake", 2000), ProtocolError);
  EXPECT_THROW(ProcessChannel("sleep 2", 100), BackendError);
}

TEST(Process, ExternalTokenScorer) {
  auto channel = std::make_shared<ProcessChannel>(toy(), 5000);
  const ExternalTokenScorer scorer(channel);
  const auto tokens = scorer.score_text("ab\xC3\xA9");
  ASSERT_EQ(tokens.size(), 3u);
  EXPECT_EQ(tokens[2].token, "\xC3\xA9");
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    EXPECT_EQ(tokens[i].logprob, -0.25 * static_cast<double>(tokens[i].rank));
  }
  EXPECT_EQ(tokens[0].rank, 1u + ('a' + 0) % 7);
  EXPECT_EQ(scorer.fingerprint(), ExternalTokenScorer(channel).fingerprint());
  EXPECT_THROW(scorer.score_text("__error__"), BackendError);
}

TEST(Http, HandshakeAndScore) {
  HttpToy server;
  const auto channel = server.connect();
  EXPECT_EQ(channel->handshake().name, "toy-http");
  EXPECT_EQ(parse_score_reply(channel->exchange(make_request("score", "q", "four")), "q").score, 4.0);
  EXPECT_EQ(parse_score_reply(channel->exchange(make_request("score", "e", "__error__")), "e").error,
            "injected error");
  EXPECT_THROW(parse_score_reply(channel->exchange(make_request("score", "m", "__malformed__")), "m"),
               ProtocolError);
}

TEST(Http, UnreachableAndBadUrl) {
  EXPECT_THROW(HttpChannel("http://127.0.0.1:" + std::to_string(free_port()), 500), BackendError);
  EXPECT_THROW(HttpChannel("127.0.0.1:80", 500), UsageError);
}
