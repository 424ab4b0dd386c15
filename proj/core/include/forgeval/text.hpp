#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace forgeval::text {

// Canonical text form: Unicode NFC, then leading/trailing White_Space removed.
// Invalid UTF-8 sequences are replaced with U+FFFD.
std::string canonicalize(std::string_view utf8);

std::u32string to_u32(std::string_view utf8);
std::string to_utf8(std::u32string_view codepoints);

bool is_space(char32_t c);

// Number of Unicode scalar values.
std::size_t codepoint_length(std::string_view utf8);

// Half-open codepoint ranges of maximal non-whitespace runs.
struct Span {
  std::size_t begin;
  std::size_t end;
  std::size_t size() const { return end - begin; }
};
std::vector<Span> word_spans(std::u32string_view text);

// Shortest decimal form that round-trips to the same double.
std::string format_double(double value);
double parse_double(std::string_view s);

}  // namespace forgeval::text
