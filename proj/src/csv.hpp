#pragma once

// Minimal comma-separated reader/writer helpers shared by the ingestion and
// output code. No quoting support: none of our tables carry free text.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace gmed::csv {

std::vector<std::string> split_line(std::string_view line);

/// Non-empty lines of a file, with trailing '\r' removed.
std::vector<std::string> read_lines(const std::filesystem::path& path);

/// Parses a double; `where` is used in the error message. Throws
/// Error(MalformedInput) on garbage and Error(NonFiniteValue) on NaN/Inf.
double parse_real(std::string_view token, const std::string& where);

/// 17 significant digits, enough to round-trip any double.
std::string format_real(double value);

}  // namespace gmed::csv
