#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tokenlab::textio {

// Shortest decimal representation that round-trips through parse_double.
std::string format_double(double x);
std::string format_u64(std::uint64_t x);
std::string format_i64(std::int64_t x);

// Strict parsers: the whole field must be consumed, no leading whitespace.
std::optional<double> parse_double(std::string_view field);
std::optional<std::int64_t> parse_i64(std::string_view field);
std::optional<std::uint64_t> parse_u64(std::string_view field);

std::vector<std::string_view> split(std::string_view line, char sep);
std::string to_lower(std::string_view s);

// Lowercased alphanumeric runs; everything else is a separator.
std::vector<std::string> tokenize_words(std::string_view text);

std::string read_file(const std::string& path);           // throws on failure
void write_file(const std::string& path, std::string_view content);
bool file_exists(const std::string& path);

}  // namespace tokenlab::textio
