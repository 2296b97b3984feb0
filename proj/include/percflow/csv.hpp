#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace percflow {

// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);

// Minimal reader for the comma-separated files this project writes
// (header row, no quoting).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of `name`; throws IoError naming the missing column.
  std::size_t column(const std::string& name) const;
  std::vector<double> numeric_column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

}  // namespace percflow
