#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace bamd::io {

// Shortest decimal representation that parses back to the identical double.
std::string format_double(double x);
double parse_double(std::string_view text, std::string_view context);
long long parse_int(std::string_view text, std::string_view context);

std::vector<std::string> split(std::string_view line, char sep = ',');
std::string_view trim(std::string_view s);

// Comma-separated table. Lines starting with '#' and blank lines are skipped,
// so files carrying a manifest header read back transparently.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const std::filesystem::path& path);
CsvTable parse_csv(std::string_view text, std::string_view source);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

// Hex SHA-256 digest of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace bamd::io
