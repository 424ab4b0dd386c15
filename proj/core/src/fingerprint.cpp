#include "forgeval/fingerprint.hpp"

#include <array>
#include <stdexcept>

#include <openssl/evp.h>

namespace forgeval {
namespace {

std::array<unsigned char, 32> sha256_raw(std::string_view bytes) {
  std::array<unsigned char, 32> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != digest.size()) {
    throw std::runtime_error("sha256 digest failed");
  }
  return digest;
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  static constexpr char kHex[] = "0123456789abcdef";
  const auto digest = sha256_raw(bytes);
  std::string out;
  out.reserve(64);
  for (unsigned char b : digest) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0xF]);
  }
  return out;
}

std::string json_fingerprint(const nlohmann::json& value) {
  // nlohmann::json (not ordered_json) stores objects in a std::map, so dump()
  // is already key-sorted.
  return sha256_hex(value.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace));
}

std::uint64_t hash64(std::string_view bytes) {
  const auto digest = sha256_raw(bytes);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | digest[i];
  return v;
}

}  // namespace forgeval
