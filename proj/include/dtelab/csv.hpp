#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dtelab/core_model.hpp"

namespace dtelab {

// Shortest representation that round-trips; "NA" for NaN.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "NA";
  if (v == 0.0) return "0";  // folds -0
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc()) throw Error("number formatting failed");
  return std::string(buf.data(), ptr);
}

namespace detail {

// Splits one record. Supports double-quoted fields with "" escapes.
inline std::vector<std::string> split_csv_record(std::string_view line, std::size_t line_no, const std::string& source) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char c = line[k];
    if (quoted) {
      if (c == '"') {
        if (k + 1 < line.size() && line[k + 1] == '"') {
          field += '"';
          ++k;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"' && field.empty() && !was_quoted) {
      quoted = true;
      was_quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
      was_quoted = false;
    } else {
      field += c;
    }
  }
  if (quoted) throw Error(source + ":" + std::to_string(line_no) + ": unterminated quoted field");
  out.push_back(std::move(field));
  return out;
}

}  // namespace detail

inline RawTable parse_csv(std::string_view text, const std::string& source = "<csv>") {
  RawTable table;
  table.source = source;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  bool have_header = false;
  if (text.starts_with("\xEF\xBB\xBF")) pos = 3;  // UTF-8 BOM
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    auto fields = detail::split_csv_record(line, line_no, source);
    if (!have_header) {
      for (auto& f : fields) {
        while (!f.empty() && f.front() == ' ') f.erase(f.begin());
        while (!f.empty() && f.back() == ' ') f.pop_back();
      }
      table.header = std::move(fields);
      have_header = true;
      continue;
    }
    table.rows.push_back(std::move(fields));
    table.lines.push_back(line_no);
  }
  if (!have_header) throw Error(source + ": missing header row");
  return table;
}

inline RawTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open input file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), path);
}

// Writes the standard input schema: d, y, then covariates.
inline std::string dataset_to_csv(const ExperimentDataset& ds) {
  std::string out = "d,y";
  for (const auto& name : ds.covariate_names()) out += "," + name;
  out += '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out += ds.treatment()[i] ? '1' : '0';
    out += ',';
    out += format_number(ds.outcome()[i]);
    for (double v : ds.covariates().row(i)) {
      out += ',';
      out += format_number(v);
    }
    out += '\n';
  }
  return out;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  out << content;
  if (!out) throw Error("failed writing '" + path + "'");
}

}  // namespace dtelab
