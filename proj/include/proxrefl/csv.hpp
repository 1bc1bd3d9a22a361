#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace proxrefl::csv {

// Shortest decimal representation that round-trips to the same double.
std::string format_double(double value);

// Strict decimal parse of the whole field; throws DataError naming `context` on failure.
double parse_double(std::string_view field, std::string_view context);
long long parse_int(std::string_view field, std::string_view context);

std::vector<std::string> split_fields(std::string_view line);

struct Row {
  std::size_t line = 0;  // 1-based line number in the source file
  std::vector<std::string> fields;
};

struct Table {
  std::vector<std::string> header;
  std::vector<Row> rows;
};

// Reads a comma-separated file with a header line. Blank lines are skipped.
// Throws DataError if the file cannot be opened or a row has the wrong field count.
Table read_file(const std::filesystem::path& path);

// Writes text to `path` atomically (write to a sibling temp file, then rename).
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

std::string join(const std::vector<std::string>& fields, char sep = ',');

}  // namespace proxrefl::csv
