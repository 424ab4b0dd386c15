// Toy external detector: scores a text by its length in code points.
// Speaks the line protocol on stdin/stdout, or HTTP with --http PORT.
//   text "__error__"     -> per-item error reply
//   text "__nan__"       -> non-finite score (a protocol violation)
//   text "__malformed__" -> a reply that is not JSON
#include <httplib.h>

#include <CLI11.hpp>
#include <chrono>
#include <iostream>
#include <thread>

#include <json.hpp>

using nlohmann::ordered_json;

namespace {

std::size_t codepoints(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80 ? 1 : 0;
  return n;
}

std::string reply(const std::string& line, int delay_ms) {
  nlohmann::json req;
  try {
    req = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    return R"({"id":null,"error":"request is not JSON"})";
  }
  const std::string id = req.value("id", "");
  const std::string method = req.value("method", "score");
  const std::string text = req.value("text", "");
  if (delay_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
  ordered_json out;
  out["id"] = id;
  if (text == "__error__") {
    out["error"] = "injected error";
    return out.dump();
  }
  if (text == "__nan__") return R"({"id":")" + id + R"(","score":NaN})";
  if (text == "__malformed__") return "not a reply";
  if (method == "score") {
    out["score"] = codepoints(text);
  } else if (method == "score_tokens") {
    ordered_json tokens = ordered_json::array();
    std::size_t i = 0;
    for (std::size_t b = 0; b < text.size(); ++i) {
      std::size_t e = b + 1;
      while (e < text.size() && (static_cast<unsigned char>(text[e]) & 0xC0) == 0x80) ++e;
      const std::uint64_t rank = 1 + (static_cast<unsigned char>(text[b]) + i) % 7;
      tokens.push_back({{"token", text.substr(b, e - b)},
                        {"logprob", -0.25 * static_cast<double>(rank)},
                        {"rank", rank},
                        {"entropy", 1.0}});
      b = e;
    }
    out["tokens"] = tokens;
  } else {
    out["error"] = "unknown method '" + method + "'";
  }
  return out.dump();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"toy external detector scoring texts by length"};
  std::string name = "toy-length";
  int port = 0;
  int delay_ms = 0;
  app.add_option("--name", name, "name announced in the handshake")->capture_default_str();
  app.add_option("--http", port, "serve HTTP on this port instead of stdin/stdout");
  app.add_option("--delay-ms", delay_ms, "sleep before every reply");
  CLI11_PARSE(app, argc, argv);

  ordered_json handshake;
  handshake["protocol"] = "forgeval/1";
  handshake["name"] = name;
  handshake["sign"] = "higher_is_machine";

  if (port > 0) {
    httplib::Server server;
    server.Get("/v1/handshake", [&](const httplib::Request&, httplib::Response& res) {
      res.set_content(handshake.dump(), "application/json");
    });
    server.Post("/v1/score", [&](const httplib::Request& req, httplib::Response& res) {
      res.set_content(reply(req.body, delay_ms), "application/json");
    });
    std::cerr << "toy detector on http://127.0.0.1:" << port << "\n";
    return server.listen("127.0.0.1", port) ? 0 : 1;
  }

  std::cout << handshake.dump() << std::endl;
  std::string line;
  while (std::getline(std::cin, line)) {
    if (line.empty()) continue;
    std::cout << reply(line, delay_ms) << std::endl;
  }
  return 0;
}
