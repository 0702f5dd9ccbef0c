#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <string_view>

namespace wardsim {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file (missing column, wrong header).
class FormatError : public Error {
public:
  using Error::Error;
};

/// A single unparsable data row; carries the 1-based physical line number.
class RowError : public FormatError {
public:
  RowError(std::size_t line, const std::string& what)
      : FormatError("line " + std::to_string(line) + ": " + what), line_{line} {}
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

class EmptyDatasetError : public Error {
public:
  using Error::Error;
};

class ValidationError : public Error {
public:
  using Error::Error;
};

class AlignmentError : public Error {
public:
  using Error::Error;
};

class ScenarioError : public Error {
public:
  using Error::Error;
};

using Date = std::chrono::sys_days;

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Stable child-seed derivation: hash64(seed, i) for replicate / patient / tree i.
constexpr std::uint64_t hash64(std::uint64_t seed, std::uint64_t index) noexcept {
  return mix64(mix64(seed) ^ (index * 0xd1b54a32d192ed03ULL));
}

inline std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline Date make_date(int y, unsigned m, unsigned d) {
  std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) throw FormatError("invalid calendar date " + std::to_string(y) + "-" + std::to_string(m) + "-" +
                                   std::to_string(d));
  return Date{ymd};
}

/// Accepts "YYYY-MM-DD", "YYYY/MM/DD" and either followed by a time part, which is ignored.
inline Date parse_date(std::string_view text) {
  int y = 0;
  unsigned m = 0, d = 0;
  char sep1 = 0, sep2 = 0;
  std::string buf{text.substr(0, std::min<std::size_t>(text.size(), 10))};
  int consumed = 0;
  if (std::sscanf(buf.c_str(), "%4d%c%2u%c%2u%n", &y, &sep1, &m, &sep2, &d, &consumed) != 5 || consumed != 10 ||
      sep1 != sep2 || (sep1 != '-' && sep1 != '/')) {
    throw FormatError("unparsable date '" + std::string{text} + "'");
  }
  return make_date(y, m, d);
}

inline std::string format_date(Date day) {
  std::chrono::year_month_day ymd{day};
  char out[16];
  std::snprintf(out, sizeof out, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return out;
}

inline int days_between(Date from, Date to) { return static_cast<int>((to - from).count()); }

/// Shortest round-trippable decimal text for a double; used wherever outputs must be byte-stable.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char out[32];
  for (int precision = 6; precision <= 17; ++precision) {
    std::snprintf(out, sizeof out, "%.*g", precision, v);
    if (std::strtod(out, nullptr) == v) break;
  }
  return out;
}

}  // namespace wardsim
