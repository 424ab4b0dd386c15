#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <json.hpp>

namespace forgeval {

// Lowercase hex SHA-256 of the given bytes.
std::string sha256_hex(std::string_view bytes);

// SHA-256 of the compact serialization of `value`. Object keys are emitted in
// sorted order, so logically equal objects hash equally.
std::string json_fingerprint(const nlohmann::json& value);

// First 8 bytes of SHA-256, big-endian. Used to key RNG streams.
std::uint64_t hash64(std::string_view bytes);

}  // namespace forgeval
