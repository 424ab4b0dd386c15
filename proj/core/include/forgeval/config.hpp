#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

namespace forgeval {

// Parses configuration text into a JSON object. Text starting with '{' is
// read as JSON. Anything else uses a TOML-like subset:
//   key = value        value: "string", number, true/false, [inline JSON], bare text
//   [table]            following keys go into object `table`
//   [[name]]           appends a new object to array `name`
//   # comment
// Throws UsageError with the line number on malformed input.
nlohmann::json parse_config(const std::string& content);
nlohmann::json load_config(const std::filesystem::path& path);

}  // namespace forgeval
