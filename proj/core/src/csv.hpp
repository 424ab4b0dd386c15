#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace forgeval::csv {

// RFC 4180 reader: quoted fields may contain separators, doubled quotes and
// newlines. Accepts LF and CRLF line endings. Throws DataError on an
// unterminated quoted field.
std::vector<std::vector<std::string>> parse(std::string_view content);

// Quotes a field when it contains a comma, quote, CR or LF.
std::string escape(std::string_view field);

}  // namespace forgeval::csv
