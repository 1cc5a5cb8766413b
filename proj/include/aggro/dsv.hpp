#pragma once

#include <cstddef>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "aggro/error.hpp"

namespace aggro::dsv {

/// One parsed record and the 1-based physical line on which it started.
struct Record {
  std::vector<std::string> fields;
  std::size_t line = 0;
};

/// RFC 4180-style reader with a configurable delimiter. Quoted fields may
/// contain the delimiter, doubled quotes and raw newlines.
class Reader {
 public:
  Reader(std::istream& in, char delimiter) : in_(in), delim_(delimiter) {}

  std::optional<Record> next() {
    Record rec;
    rec.line = line_ + 1;
    std::string field;
    bool in_quotes = false;
    bool field_was_quoted = false;
    bool any = false;
    int ch;
    while ((ch = in_.get()) != std::char_traits<char>::eof()) {
      any = true;
      const char c = static_cast<char>(ch);
      if (in_quotes) {
        if (c == '"') {
          if (in_.peek() == '"') {
            in_.get();
            field.push_back('"');
          } else {
            in_quotes = false;
          }
        } else {
          if (c == '\n') ++line_;
          field.push_back(c);
        }
        continue;
      }
      if (c == '"' && field.empty() && !field_was_quoted) {
        in_quotes = true;
        field_was_quoted = true;
      } else if (c == delim_) {
        rec.fields.push_back(std::move(field));
        field.clear();
        field_was_quoted = false;
      } else if (c == '\n') {
        ++line_;
        if (!field.empty() && field.back() == '\r' && !field_was_quoted) field.pop_back();
        rec.fields.push_back(std::move(field));
        return rec;
      } else if (c == '\r' && field_was_quoted) {
        // trailing CR after a closing quote
      } else {
        field.push_back(c);
      }
    }
    if (in_quotes) throw InputError("unterminated quoted field starting on line " + std::to_string(rec.line));
    if (!any) return std::nullopt;
    ++line_;
    rec.fields.push_back(std::move(field));
    return rec;
  }

 private:
  std::istream& in_;
  char delim_;
  std::size_t line_ = 0;
};

inline bool needs_quotes(std::string_view s, char delim) {
  for (char c : s)
    if (c == delim || c == '"' || c == '\n' || c == '\r') return true;
  return !s.empty() && (s.front() == ' ' || s.back() == ' ' || s.front() == '\t' || s.back() == '\t');
}

inline std::string quote(std::string_view s, char delim) {
  if (!needs_quotes(s, delim)) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline std::string join(const std::vector<std::string>& fields, char delim) {
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) line.push_back(delim);
    line += quote(fields[i], delim);
  }
  return line;
}

}  // namespace aggro::dsv
