#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ivat/error.hpp"

namespace ivat {

// RFC 4180 field quoting: quote when the field contains a comma, a quote or a
// line break; embedded quotes are doubled.
inline std::string csv_quote(const std::string& field) {
  bool needs = field.find_first_of(",\"\r\n") != std::string::npos;
  if (!needs) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string csv_join(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += csv_quote(fields[i]);
  }
  out += '\n';
  return out;
}

struct CsvRow {
  std::vector<std::string> fields;
  std::size_t line = 0;  // 1-based line of the row's first character
};

// Parses a whole CSV document. Handles quoted fields with embedded commas,
// doubled quotes and line breaks; accepts LF and CRLF row endings.
inline std::vector<CsvRow> csv_parse(const std::string& text, const std::string& origin) {
  std::vector<CsvRow> rows;
  std::vector<std::string> fields;
  std::string field;
  bool in_quotes = false;
  bool row_open = false;
  std::size_t line = 1;
  std::size_t row_line = 1;
  auto end_field = [&] {
    fields.push_back(field);
    field.clear();
  };
  auto end_row = [&] {
    end_field();
    rows.push_back({fields, row_line});
    fields.clear();
    row_open = false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (!row_open) {
      row_open = true;
      row_line = line;
    }
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field.empty())
          raise(ErrorKind::schema, origin + ": line " + std::to_string(line) + ": stray quote in unquoted field");
        in_quotes = true;
        break;
      case ',':
        end_field();
        break;
      case '\r':
        if (i + 1 < text.size() && text[i + 1] == '\n') break;  // handled by the \n
        ++line;
        end_row();
        break;
      case '\n':
        ++line;
        end_row();
        break;
      default:
        field += c;
    }
  }
  if (in_quotes) raise(ErrorKind::schema, origin + ": unterminated quoted field");
  if (row_open) end_row();
  return rows;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::io, "cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::io, "cannot write " + path);
  out << content;
  if (!out) raise(ErrorKind::io, "write failed for " + path);
}

}  // namespace ivat
