#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace batchconf {

// Parse failure carrying the source and 1-based line of the offending row.
class CsvError : public std::runtime_error {
 public:
  CsvError(const std::string& source, std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct CsvTable {
  std::string source;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;  // source line of each row

  // Throws CsvError when the column is absent.
  std::size_t Column(std::string_view name) const;
  // Every cell of the column parsed as a number; empty or non-numeric cells throw.
  std::vector<double> Numeric(std::string_view name) const;
  std::vector<double> NumericRow(std::size_t row, const std::vector<std::size_t>& columns) const;
};

CsvTable ParseCsv(std::string_view text, const std::string& source = "<memory>");
// Throws std::runtime_error when the file cannot be opened.
CsvTable ReadCsv(const std::string& path);

// Locale-independent number parsing; throws CsvError on anything but a finite number.
double ParseNumber(std::string_view cell, const std::string& source, std::size_t line);

}  // namespace batchconf
