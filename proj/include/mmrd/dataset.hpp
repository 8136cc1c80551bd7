#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mmrd/types.hpp"

namespace mmrd {

/// Column-name mapping from a CSV header onto the model quantities.
struct ColumnSchema {
  std::vector<std::string> x;        ///< 1 or 2 running-variable columns
  std::string y;                     ///< outcome column
  std::optional<std::string> w;      ///< observed treatment indicator (optional)
  std::optional<std::string> count;  ///< replication count (optional, default 1)
  std::vector<std::string> z;        ///< balance covariates (optional)
};

/// Raw parse result: the sample plus balance covariates, before any
/// validation against a rule/estimand.
struct LoadedData {
  Dataset data;
  Mat z;            // n x z.size()
  bool has_w = false;
};

namespace detail {

/// Splits one CSV record. Fields may be double-quoted; embedded quotes are
/// escaped by doubling. Unquoted fields are trimmed of surrounding blanks.
inline std::vector<std::string> split_csv_record(const std::string& line, std::size_t line_no) {
  std::vector<std::string> out;
  std::string field;
  bool in_quotes = false, was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char ch = line[i];
    if (in_quotes) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field += ch;
      }
    } else if (ch == '"' && field.empty()) {
      in_quotes = true;
      was_quoted = true;
    } else if (ch == ',') {
      if (!was_quoted) {
        auto b = field.find_first_not_of(" \t");
        auto e = field.find_last_not_of(" \t");
        field = (b == std::string::npos) ? std::string() : field.substr(b, e - b + 1);
      }
      out.push_back(field);
      field.clear();
      was_quoted = false;
    } else {
      field += ch;
    }
  }
  if (in_quotes)
    fail_parse("unterminated quoted field on line " + std::to_string(line_no));
  if (!was_quoted) {
    auto b = field.find_first_not_of(" \t");
    auto e = field.find_last_not_of(" \t");
    field = (b == std::string::npos) ? std::string() : field.substr(b, e - b + 1);
  }
  out.push_back(field);
  return out;
}

inline double parse_cell(const std::string& cell, std::size_t row, const std::string& col) {
  if (cell.empty())
    fail_parse("empty cell at data row " + std::to_string(row) + ", column '" + col + "'");
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(cell, &used);
  } catch (const std::exception&) {
    fail_parse("non-numeric value '" + cell + "' at data row " + std::to_string(row) +
               ", column '" + col + "'");
  }
  while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
  if (used != cell.size())
    fail_parse("non-numeric value '" + cell + "' at data row " + std::to_string(row) +
               ", column '" + col + "'");
  if (!std::isfinite(v))
    fail_parse("non-finite value '" + cell + "' at data row " + std::to_string(row) +
               ", column '" + col + "'");
  return v;
}

}  // namespace detail

/// Reads a UTF-8 CSV with a header row into a Dataset.  Every referenced cell
/// must be a finite number; the treatment column must be exactly 0 or 1 and
/// counts must be positive.  Structural problems raise parse errors carrying
/// row/column context.
inline LoadedData load_dataset(const std::string& path, const ColumnSchema& schema) {
  if (schema.x.empty() || schema.x.size() > 2)
    fail_design("schema must name 1 or 2 running-variable columns, got " +
                std::to_string(schema.x.size()));
  if (schema.y.empty()) fail_design("schema must name an outcome column");

  std::ifstream in(path, std::ios::binary);
  if (!in) fail_parse("cannot open input file '" + path + "'");
  std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  // Normalize line endings and split.
  std::vector<std::string> lines;
  {
    std::string cur;
    for (char ch : contents) {
      if (ch == '\n') {
        if (!cur.empty() && cur.back() == '\r') cur.pop_back();
        lines.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
    if (!cur.empty()) {
      if (cur.back() == '\r') cur.pop_back();
      lines.push_back(cur);
    }
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) fail_parse("input file '" + path + "' is empty");

  const auto header = detail::split_csv_record(lines[0], 1);
  auto find_col = [&](const std::string& name) -> int {
    int found = -1;
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (header[j] == name) {
        if (found >= 0) fail_parse("column '" + name + "' appears more than once in the header");
        found = static_cast<int>(j);
      }
    }
    if (found < 0) fail_parse("column '" + name + "' not found in the header");
    return found;
  };

  std::vector<int> xi;
  for (const auto& n : schema.x) xi.push_back(find_col(n));
  const int yi = find_col(schema.y);
  const int wi = schema.w ? find_col(*schema.w) : -1;
  const int ci = schema.count ? find_col(*schema.count) : -1;
  std::vector<int> zi;
  for (const auto& n : schema.z) zi.push_back(find_col(n));

  const Eigen::Index n = static_cast<Eigen::Index>(lines.size()) - 1;
  if (n == 0) fail_parse("input file '" + path + "' has a header but no data rows");

  LoadedData out;
  out.data.dim = static_cast<int>(schema.x.size());
  out.data.x.resize(n, out.data.dim);
  out.data.y.resize(n);
  out.data.w.resize(n);
  out.data.count = Vec::Ones(n);
  out.data.ss = Vec::Zero(n);
  out.z.resize(n, static_cast<Eigen::Index>(zi.size()));
  out.has_w = wi >= 0;

  for (Eigen::Index r = 0; r < n; ++r) {
    const std::size_t data_row = static_cast<std::size_t>(r) + 1;  // 1-based, header excluded
    const auto fields = detail::split_csv_record(lines[r + 1], data_row + 1);
    if (fields.size() != header.size())
      fail_parse("data row " + std::to_string(data_row) + " has " +
                 std::to_string(fields.size()) + " fields, header has " +
                 std::to_string(header.size()));
    for (int j = 0; j < out.data.dim; ++j)
      out.data.x(r, j) = detail::parse_cell(fields[xi[j]], data_row, schema.x[j]);
    out.data.y[r] = detail::parse_cell(fields[yi], data_row, schema.y);
    if (wi >= 0) {
      const double wv = detail::parse_cell(fields[wi], data_row, *schema.w);
      if (wv != 0.0 && wv != 1.0)
        fail_parse("treatment value must be 0 or 1 at data row " + std::to_string(data_row) +
                   ", column '" + *schema.w + "'");
      out.data.w[r] = static_cast<int>(wv);
    } else {
      out.data.w[r] = 0;
    }
    if (ci >= 0) {
      const double cv = detail::parse_cell(fields[ci], data_row, *schema.count);
      if (cv <= 0)
        fail_parse("count must be positive at data row " + std::to_string(data_row) +
                   ", column '" + *schema.count + "'");
      out.data.count[r] = cv;
    }
    for (std::size_t j = 0; j < zi.size(); ++j)
      out.z(r, static_cast<Eigen::Index>(j)) = detail::parse_cell(fields[zi[j]], data_row, schema.z[j]);
  }
  return out;
}

}  // namespace mmrd
