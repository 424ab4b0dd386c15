#include "forgeval/config.hpp"

#include <sstream>

#include "forgeval/errors.hpp"
#include "io.hpp"

using nlohmann::json;

namespace forgeval {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool valid_key(const std::string& key) {
  if (key.empty()) return false;
  for (char c : key) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
  }
  return true;
}

json parse_value(const std::string& raw, std::size_t line_no) {
  const auto fail = [&](const std::string& why) {
    return UsageError("config line " + std::to_string(line_no) + ": " + why);
  };
  if (raw.empty()) throw fail("missing value");
  const char c = raw.front();
  if (c == '"' || c == '[' || c == '{') {
    // Longest prefix that parses as JSON, so trailing comments are allowed.
    try {
      return json::parse(raw);
    } catch (const json::exception&) {
    }
    for (std::size_t hash = raw.rfind('#'); hash != std::string::npos && hash > 0; hash = raw.rfind('#', hash - 1)) {
      try {
        return json::parse(trim(raw.substr(0, hash)));
      } catch (const json::exception&) {
      }
    }
    throw fail("malformed value " + raw);
  }
  std::string v = raw;
  if (const auto hash = v.find(" #"); hash != std::string::npos) v = trim(v.substr(0, hash));
  if (v == "true") return true;
  if (v == "false") return false;
  if (v == "null") return nullptr;
  if (std::isdigit(static_cast<unsigned char>(v[0])) || ((v[0] == '-' || v[0] == '+' || v[0] == '.') && v.size() > 1)) {
    try {
      const json number = json::parse(v[0] == '+' ? v.substr(1) : v);
      if (number.is_number()) return number;
    } catch (const json::exception&) {
    }
  }
  return v;
}

}  // namespace

json parse_config(const std::string& content) {
  const auto first = content.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && content[first] == '{') {
    try {
      json j = json::parse(content);
      if (!j.is_object()) throw UsageError("config must be an object");
      return j;
    } catch (const json::exception& e) {
      throw UsageError(std::string("config: ") + e.what());
    }
  }
  json root = json::object();
  json* target = &root;
  std::istringstream in(content);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.rfind("[[", 0) == 0) {
      if (t.size() < 5 || t.substr(t.size() - 2) != "]]") {
        throw UsageError("config line " + std::to_string(line_no) + ": malformed [[section]]");
      }
      const std::string name = trim(t.substr(2, t.size() - 4));
      if (!valid_key(name)) throw UsageError("config line " + std::to_string(line_no) + ": bad section name");
      json& arr = root[name];
      if (arr.is_null()) arr = json::array();
      if (!arr.is_array()) throw UsageError("config line " + std::to_string(line_no) + ": '" + name + "' is not an array");
      arr.push_back(json::object());
      target = &arr.back();
      continue;
    }
    if (t[0] == '[') {
      if (t.back() != ']') throw UsageError("config line " + std::to_string(line_no) + ": malformed [section]");
      const std::string name = trim(t.substr(1, t.size() - 2));
      if (!valid_key(name)) throw UsageError("config line " + std::to_string(line_no) + ": bad section name");
      json& obj = root[name];
      if (obj.is_null()) obj = json::object();
      if (!obj.is_object()) throw UsageError("config line " + std::to_string(line_no) + ": '" + name + "' is not a table");
      target = &obj;
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw UsageError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    if (!valid_key(key)) throw UsageError("config line " + std::to_string(line_no) + ": bad key '" + key + "'");
    if (target->contains(key)) throw UsageError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    (*target)[key] = parse_value(trim(t.substr(eq + 1)), line_no);
  }
  return root;
}

json load_config(const std::filesystem::path& path) {
  std::string content;
  try {
    content = io::read_file(path);
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  return parse_config(content);
}

}  // namespace forgeval
