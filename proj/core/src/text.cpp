#include "forgeval/text.hpp"

#include <charconv>
#include <cmath>
#include <stdexcept>
#include <system_error>

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "forgeval/errors.hpp"

namespace forgeval::text {

std::string canonicalize(std::string_view utf8) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw std::runtime_error("ICU NFC normalizer unavailable");

  const icu::UnicodeString src = icu::UnicodeString::fromUTF8(
      icu::StringPiece(utf8.data(), static_cast<int32_t>(utf8.size())));
  icu::UnicodeString normalized = nfc->normalize(src, status);
  if (U_FAILURE(status)) throw std::runtime_error("NFC normalization failed");

  int32_t begin = 0;
  int32_t end = normalized.length();
  while (begin < end) {
    const UChar32 c = normalized.char32At(begin);
    if (!u_isUWhiteSpace(c)) break;
    begin = normalized.moveIndex32(begin, 1);
  }
  while (end > begin) {
    const int32_t prev = normalized.moveIndex32(end, -1);
    if (!u_isUWhiteSpace(normalized.char32At(prev))) break;
    end = prev;
  }
  std::string out;
  normalized.tempSubStringBetween(begin, end).toUTF8String(out);
  return out;
}

std::u32string to_u32(std::string_view utf8) {
  const icu::UnicodeString s = icu::UnicodeString::fromUTF8(
      icu::StringPiece(utf8.data(), static_cast<int32_t>(utf8.size())));
  std::u32string out;
  out.reserve(static_cast<std::size_t>(s.length()));
  for (int32_t i = 0; i < s.length(); i = s.moveIndex32(i, 1)) {
    out.push_back(static_cast<char32_t>(s.char32At(i)));
  }
  return out;
}

std::string to_utf8(std::u32string_view codepoints) {
  const icu::UnicodeString s = icu::UnicodeString::fromUTF32(
      reinterpret_cast<const UChar32*>(codepoints.data()), static_cast<int32_t>(codepoints.size()));
  std::string out;
  s.toUTF8String(out);
  return out;
}

bool is_space(char32_t c) { return u_isUWhiteSpace(static_cast<UChar32>(c)); }

std::size_t codepoint_length(std::string_view utf8) { return to_u32(utf8).size(); }

std::vector<Span> word_spans(std::u32string_view text) {
  std::vector<Span> spans;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    if (i == text.size()) break;
    const std::size_t begin = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    spans.push_back({begin, i});
  }
  return spans;
}

std::string format_double(double value) {
  if (!std::isfinite(value)) {
    if (std::isnan(value)) return "nan";
    return value > 0 ? "inf" : "-inf";
  }
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc{}) throw std::runtime_error("double formatting failed");
  return std::string(buf, ptr);
}

double parse_double(std::string_view s) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw DataError("not a number: '" + std::string(s) + "'");
  }
  return value;
}

}  // namespace forgeval::text
