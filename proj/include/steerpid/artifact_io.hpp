#pragma once

// Line-oriented text format shared by persisted classifier models and control
// vectors:
//
//   <magic> <version>
//   <key> <value>          (header fields, fixed order per artifact)
//   <section>              (a bare section name, then one value per line)
//   ...
//   end
//
// Reals are written as C99 hexadecimal floats ("%a"), so every value
// round-trips bit-exactly. A file without the trailing `end` is treated as
// truncated.

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "steerpid/error.hpp"

namespace steerpid::io {

inline std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

/// Parses a finite real written either as a hexfloat or in decimal.
inline double parse_real(std::string_view text, std::size_t line) {
  const std::string s(text);
  if (s.empty()) throw ParseError("expected a number, got an empty field", line);
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v)) {
    throw ParseError("invalid number '" + s + "'", line);
  }
  return v;
}

inline long long parse_int(std::string_view text, std::size_t line) {
  const std::string s(text);
  char* end = nullptr;
  errno = 0;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE) {
    throw ParseError("invalid integer '" + s + "'", line);
  }
  return v;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("error while reading '" + path + "'");
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  out.flush();
  if (!out) throw IoError("error while writing '" + path + "'");
}

/// Sequential reader over the lines of an artifact file.
class LineReader {
 public:
  explicit LineReader(std::string text) {
    std::istringstream in(std::move(text));
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines_.push_back(std::move(line));
    }
  }

  std::size_t line_number() const noexcept { return pos_ + 1; }

  std::string_view next(std::string_view expecting) {
    if (pos_ >= lines_.size()) {
      throw ParseError("unexpected end of file while reading " + std::string(expecting) + " (truncated?)",
                       lines_.size() + 1);
    }
    return lines_[pos_++];
  }

  void expect_line(std::string_view literal) {
    const std::size_t ln = line_number();
    if (next(literal) != literal) throw ParseError("expected '" + std::string(literal) + "'", ln);
  }

  /// Reads `<key> <value>` and returns the value part.
  std::string_view field(std::string_view key) {
    const std::size_t ln = line_number();
    std::string_view l = next(key);
    if (l.size() <= key.size() || l.substr(0, key.size()) != key || l[key.size()] != ' ') {
      throw ParseError("expected field '" + std::string(key) + "'", ln);
    }
    return l.substr(key.size() + 1);
  }

  double real_field(std::string_view key) {
    const std::size_t ln = line_number();
    return parse_real(field(key), ln);
  }

  long long int_field(std::string_view key) {
    const std::size_t ln = line_number();
    return parse_int(field(key), ln);
  }

  /// Reads exactly `n` reals, one per line. Running into `end` early means the
  /// declared dimension disagrees with the payload.
  std::vector<double> reals(std::size_t n, std::string_view section) {
    std::vector<double> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t ln = line_number();
      std::string_view l = next(section);
      if (l == "end") {
        throw ParseError(std::string(section) + ": declared dimension " + std::to_string(n) + " but found only " +
                             std::to_string(i) + " values",
                         ln);
      }
      out.push_back(parse_real(l, ln));
    }
    return out;
  }

  void expect_end() {
    const std::size_t ln = line_number();
    std::string_view l = next("end marker");
    if (l != "end") throw ParseError("expected 'end' (more values than the declared dimension?)", ln);
    while (pos_ < lines_.size()) {
      if (!lines_[pos_].empty()) throw ParseError("trailing content after 'end'", pos_ + 1);
      ++pos_;
    }
  }

 private:
  std::vector<std::string> lines_;
  std::size_t pos_ = 0;
};

inline void write_reals(std::ostringstream& out, const std::vector<double>& values) {
  for (double v : values) out << hexfloat(v) << '\n';
}

}  // namespace steerpid::io
