#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "cola/error.hpp"

namespace cola::csv {

using Record = std::vector<std::string>;

struct Table {
  Record header;
  std::vector<Record> rows;
};

// Splits one CSV line. Double-quoted fields may contain commas and "" escapes;
// embedded newlines are not supported.
inline Record split_line(std::string_view line, std::size_t line_no) {
  Record out;
  std::string field;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(ch);
      }
    } else if (ch == '"' && field.empty() && !was_quoted) {
      quoted = true;
      was_quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(field));
      field.clear();
      was_quoted = false;
    } else {
      field.push_back(ch);
    }
  }
  if (quoted) fail("line " + std::to_string(line_no) + ": unterminated quoted field");
  out.push_back(std::move(field));
  return out;
}

inline Table parse(std::istream& in, const std::string& source) {
  Table table;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
    if (line.empty()) continue;
    Record rec = split_line(line, line_no);
    if (!have_header) {
      table.header = std::move(rec);
      have_header = true;
      continue;
    }
    if (rec.size() != table.header.size()) {
      fail(source + ": line " + std::to_string(line_no) + " has " +
           std::to_string(rec.size()) + " fields, header has " +
           std::to_string(table.header.size()));
    }
    table.rows.push_back(std::move(rec));
  }
  if (!have_header) fail(source + ": missing header row");
  return table;
}

inline Table read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open file: " + path);
  return parse(in, path);
}

inline std::string quote(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

inline void write_record(std::ostream& out, const Record& rec) {
  for (std::size_t i = 0; i < rec.size(); ++i) {
    if (i) out << ',';
    out << quote(rec[i]);
  }
  out << '\n';
}

// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) fail_internal("number formatting failed");
  return std::string(buf, end);
}

inline std::optional<double> parse_double(std::string_view text) {
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  while (!text.empty() && text.back() == ' ') text.remove_suffix(1);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
    return std::nullopt;
  }
  return v;
}

}  // namespace cola::csv
