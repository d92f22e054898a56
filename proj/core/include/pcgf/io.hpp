#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace pcgf {

/// Shortest decimal text that parses back to exactly `value` ("nan",
/// "inf", "-inf" for non-finite values).
std::string format_double(double value);

/// Strict inverse of format_double; throws ConfigurationError on junk.
double parse_double(std::string_view text);

/// Splits one CSV record on commas (no quoting: every field we write is
/// numeric or a bare identifier).
std::vector<std::string> split_csv_line(std::string_view line);

}  // namespace pcgf
