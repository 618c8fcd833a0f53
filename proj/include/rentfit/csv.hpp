#pragma once

#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rentfit {

/// Columnar table of raw string cells, as parsed from a CSV file.
/// All columns hold exactly row_count cells; missing fields are empty strings.
struct RawTable {
  struct Column {
    std::string name;
    std::vector<std::string> cells;
  };
  std::vector<Column> columns;
  std::size_t row_count = 0;

  int column_index(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i].name == name) return static_cast<int>(i);
    return -1;
  }
};

class CsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

// Reads one CSV record. Returns false on clean EOF before any character.
// Quoted fields may contain commas, newlines and doubled quotes. A stray
// quote inside an unquoted field is taken literally; junk after a closing
// quote is a parse error.
inline bool read_record(std::istream& in, std::vector<std::string>& fields,
                        std::size_t& line_no) {
  fields.clear();
  int c = in.get();
  if (c == EOF) return false;

  std::string field;
  bool in_quotes = false;
  bool field_was_quoted = false;
  const std::size_t start_line = line_no;

  while (true) {
    if (c == EOF) {
      if (in_quotes)
        throw CsvError("csv: unterminated quoted field starting on line " +
                       std::to_string(start_line));
      fields.push_back(std::move(field));
      return true;
    }
    char ch = static_cast<char>(c);
    if (in_quotes) {
      if (ch == '"') {
        int next = in.peek();
        if (next == '"') {
          in.get();
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        if (ch == '\n') ++line_no;
        field.push_back(ch);
      }
    } else {
      if (ch == ',') {
        fields.push_back(std::move(field));
        field.clear();
        field_was_quoted = false;
      } else if (ch == '\r') {
        // swallow; CRLF handled at '\n'
      } else if (ch == '\n') {
        ++line_no;
        fields.push_back(std::move(field));
        return true;
      } else if (ch == '"' && field.empty() && !field_was_quoted) {
        in_quotes = true;
        field_was_quoted = true;
      } else if (field_was_quoted) {
        throw CsvError("csv: malformed quoting on line " +
                       std::to_string(line_no) +
                       " (content after closing quote)");
      } else {
        field.push_back(ch);
      }
    }
    c = in.get();
  }
}

}  // namespace detail

/// De-duplicates names pandas-style: second "x" becomes "x.1", third "x.2".
inline std::vector<std::string> dedup_names(const std::vector<std::string>& in) {
  std::vector<std::string> out;
  out.reserve(in.size());
  auto taken = [&](const std::string& n) {
    for (const auto& s : out)
      if (s == n) return true;
    return false;
  };
  for (const auto& base : in) {
    std::string name = base;
    for (int k = 1; taken(name); ++k) name = base + "." + std::to_string(k);
    out.push_back(name);
  }
  return out;
}

/// Parses RFC-4180-style CSV with a header row into a RawTable.
/// Duplicate header names are de-duplicated with ".1", ".2", ... suffixes.
/// Throws CsvError on malformed quoting (with line number) or ragged rows
/// (naming the offending data row).
inline RawTable parse_csv(std::istream& in) {
  RawTable table;
  std::vector<std::string> fields;
  std::size_t line_no = 1;

  if (!detail::read_record(in, fields, line_no))
    throw CsvError("csv: empty input, header row required");

  std::vector<std::string> names = dedup_names(fields);
  table.columns.resize(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) table.columns[i].name = names[i];

  std::size_t row = 0;
  while (detail::read_record(in, fields, line_no)) {
    if (fields.size() == 1 && fields[0].empty() && in.peek() == EOF)
      break;  // trailing newline at EOF
    ++row;
    if (fields.size() != table.columns.size())
      throw CsvError("csv: ragged row " + std::to_string(row) + " has " +
                     std::to_string(fields.size()) + " fields, expected " +
                     std::to_string(table.columns.size()));
    for (std::size_t i = 0; i < fields.size(); ++i)
      table.columns[i].cells.push_back(std::move(fields[i]));
  }
  table.row_count = row;
  return table;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += "\"";
  return out;
}

inline void write_csv_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << ',';
    out << csv_escape(fields[i]);
  }
  out << '\n';
}

/// Shortest-exact formatting for doubles written to artifacts: %.17g always
/// round-trips, shorter forms are preferred when they parse back exactly.
inline std::string format_double(double v) {
  char buf[40];
  for (int prec : {10, 15, 17}) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

}  // namespace rentfit
