#include "batchconf/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace batchconf {

namespace {

std::string_view Trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string> SplitRecord(std::string_view line, const std::string& source, std::size_t number) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"' && Trim(field).empty()) {
      field.clear();
      quoted = true;
      was_quoted = true;
    } else if (c == ',') {
      fields.emplace_back(was_quoted ? field : std::string(Trim(field)));
      field.clear();
      was_quoted = false;
    } else {
      field.push_back(c);
    }
  }
  if (quoted) throw CsvError(source, number, "unterminated quoted field");
  fields.emplace_back(was_quoted ? field : std::string(Trim(field)));
  return fields;
}

}  // namespace

CsvError::CsvError(const std::string& source, std::size_t line, const std::string& what)
    : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

std::size_t CsvTable::Column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw CsvError(source, 1, "no column named '" + std::string(name) + "'");
}

std::vector<double> CsvTable::Numeric(std::string_view name) const {
  const std::size_t col = Column(name);
  std::vector<double> out;
  out.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) out.push_back(ParseNumber(rows[r][col], source, lines[r]));
  return out;
}

std::vector<double> CsvTable::NumericRow(std::size_t row, const std::vector<std::size_t>& columns) const {
  std::vector<double> out;
  out.reserve(columns.size());
  for (std::size_t c : columns) out.push_back(ParseNumber(rows[row][c], source, lines[row]));
  return out;
}

double ParseNumber(std::string_view cell, const std::string& source, std::size_t line) {
  const std::string_view s = Trim(cell);
  if (s.empty()) throw CsvError(source, line, "missing value");
  std::string_view digits = s;
  if (digits.front() == '+') digits.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
  if (ec != std::errc() || ptr != digits.data() + digits.size() || !std::isfinite(value)) {
    throw CsvError(source, line, "not a finite number: '" + std::string(s) + "'");
  }
  return value;
}

CsvTable ParseCsv(std::string_view text, const std::string& source) {
  CsvTable table;
  table.source = source;
  std::size_t number = 0;
  bool have_header = false;
  while (!text.empty()) {
    const auto end = text.find('\n');
    const std::string_view line = text.substr(0, end);
    text = end == std::string_view::npos ? std::string_view() : text.substr(end + 1);
    ++number;
    if (Trim(line).empty()) continue;
    auto fields = SplitRecord(line, source, number);
    if (!have_header) {
      table.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw CsvError(source, number, "expected " + std::to_string(table.header.size()) + " fields, found " +
                                         std::to_string(fields.size()));
    }
    table.rows.push_back(std::move(fields));
    table.lines.push_back(number);
  }
  if (!have_header) throw CsvError(source, 1, "missing header row");
  return table;
}

CsvTable ReadCsv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return ParseCsv(buf.str(), path);
}

}  // namespace batchconf
