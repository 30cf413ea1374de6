#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace carbon::csv {

/// A parsed comma-separated file: header names plus data rows. Values are
/// unquoted; this is the plain numeric/label dialect all interchange files use.
struct Table {
  std::filesystem::path path;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based source line of each row

  /// Column position by name, or nullopt.
  std::optional<std::size_t> column(std::string_view name) const;
  /// Column position by name; throws ValidationError naming the file.
  std::size_t require_column(std::string_view name) const;
};

/// Reads a file. Blank lines are skipped, fields are whitespace-trimmed, a
/// UTF-8 byte-order mark is ignored. Rows whose field count differs from the
/// header raise ParseError naming the line.
Table read(const std::filesystem::path& path);

/// Parses a decimal number; empty string gives nullopt. Throws ParseError.
std::optional<double> parse_number(const Table& table, std::size_t row, std::size_t col);

/// Shortest representation that reads back to the same double; NaN becomes "".
std::string format_number(double value);

/// Writes `content` atomically enough for our purposes (truncate + write).
void write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace carbon::csv
