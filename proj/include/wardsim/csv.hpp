#pragma once

#include <istream>
#include <optional>
#include <string>
#include <vector>

#include "wardsim/common.hpp"

namespace wardsim::csv {

/// One logical CSV record and the physical line it starts on.
struct Record {
  std::vector<std::string> fields;
  std::size_t line = 0;
};

/// Minimal RFC 4180 reader: comma separated, double-quoted fields may contain
/// commas, doubled quotes and newlines. CR before LF is dropped.
class Reader {
public:
  explicit Reader(std::istream& in) : in_{in} {}

  std::optional<Record> next() {
    Record rec;
    std::string field;
    bool in_quotes = false;
    bool any = false;
    rec.line = line_ + 1;
    int ch;
    while ((ch = in_.get()) != std::char_traits<char>::eof()) {
      any = true;
      const char c = static_cast<char>(ch);
      if (in_quotes) {
        if (c == '"') {
          if (in_.peek() == '"') {
            field.push_back('"');
            in_.get();
          } else {
            in_quotes = false;
          }
        } else {
          if (c == '\n') ++line_;
          field.push_back(c);
        }
        continue;
      }
      if (c == '"') {
        in_quotes = true;
      } else if (c == ',') {
        rec.fields.push_back(std::move(field));
        field.clear();
      } else if (c == '\n') {
        ++line_;
        break;
      } else if (c != '\r') {
        field.push_back(c);
      }
    }
    if (in_quotes) throw RowError(rec.line, "unterminated quoted field");
    if (!any) return std::nullopt;
    rec.fields.push_back(std::move(field));
    // Skip blank lines.
    if (rec.fields.size() == 1 && rec.fields.front().empty()) return next();
    return rec;
  }

private:
  std::istream& in_;
  std::size_t line_ = 0;
};

inline std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace wardsim::csv
