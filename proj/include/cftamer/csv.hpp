#pragma once

// Minimal RFC 4180 reading and writing: CRLF or LF line ends, quoted fields
// with doubled quotes.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cftamer::csv {

class SchemaError : public std::runtime_error {
 public:
  SchemaError(std::size_t row, std::size_t column, const std::string& what)
      : std::runtime_error("row " + std::to_string(row) + ", column " + std::to_string(column) + ": " + what),
        row_(row),
        column_(column) {}
  std::size_t row() const { return row_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t row_;
  std::size_t column_;
};

using Record = std::vector<std::string>;

inline std::string escape(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline void write_record(std::ostream& os, const Record& r) {
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (i) os << ',';
    os << escape(r[i]);
  }
  os << "\r\n";
}

// Shortest text that parses back to the same double.
inline std::string format_double(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, end);
}

// Parses the whole stream. Row numbers in errors are 1-based and count the
// header.
inline std::vector<Record> read_all(std::istream& is) {
  std::vector<Record> rows;
  Record cur;
  std::string field;
  bool quoted = false;
  bool any = false;
  std::size_t row = 1;
  char c;
  auto end_record = [&] {
    cur.push_back(std::move(field));
    field.clear();
    rows.push_back(std::move(cur));
    cur.clear();
    any = false;
    ++row;
  };
  while (is.get(c)) {
    if (quoted) {
      if (c == '"') {
        if (is.peek() == '"') {
          is.get(c);
          field += '"';
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field.empty()) throw SchemaError(row, cur.size() + 1, "quote inside unquoted field");
        quoted = true;
        any = true;
        break;
      case ',':
        cur.push_back(std::move(field));
        field.clear();
        any = true;
        break;
      case '\r':
        if (is.peek() == '\n') is.get(c);
        end_record();
        break;
      case '\n': end_record(); break;
      default:
        field += c;
        any = true;
    }
  }
  if (quoted) throw SchemaError(row, cur.size() + 1, "unterminated quoted field");
  if (any || !field.empty() || !cur.empty()) end_record();
  return rows;
}

inline void expect_header(const std::vector<Record>& rows, const Record& header) {
  if (rows.empty()) throw SchemaError(1, 1, "missing header");
  const auto& h = rows.front();
  for (std::size_t i = 0; i < header.size(); ++i)
    if (i >= h.size() || h[i] != header[i])
      throw SchemaError(1, i + 1, "expected column '" + header[i] + "'");
  if (h.size() != header.size()) throw SchemaError(1, header.size() + 1, "unexpected extra column");
}

inline double parse_double(const std::string& s, std::size_t row, std::size_t col) {
  double x = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || p != s.data() + s.size()) throw SchemaError(row, col, "not a number: '" + s + "'");
  return x;
}

inline std::int64_t parse_int(const std::string& s, std::size_t row, std::size_t col) {
  std::int64_t x = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || p != s.data() + s.size()) throw SchemaError(row, col, "not an integer: '" + s + "'");
  return x;
}

inline std::uint64_t parse_uint(const std::string& s, std::size_t row, std::size_t col) {
  std::uint64_t x = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || p != s.data() + s.size())
    throw SchemaError(row, col, "not an unsigned integer: '" + s + "'");
  return x;
}

}  // namespace cftamer::csv
