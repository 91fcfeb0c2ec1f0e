#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace mdl::csv {

using Row = std::vector<std::string>;

/// Plain comma-separated rows; fields may not contain commas or newlines.
struct Table {
  Row header;
  std::vector<Row> rows;

  /// Column index by name; throws std::out_of_range if absent.
  std::size_t column(const std::string& name) const;
};

Table read(const std::filesystem::path& path);
void write(const Table& table, const std::filesystem::path& path);

/// Shortest round-trippable decimal form of a double.
std::string format(double value);

}  // namespace mdl::csv
