#pragma once

#include <charconv>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "holomux/core.hpp"

namespace holomux::text {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_double(std::string_view s) {
  s = trim(s);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw FormatError("not a number: '" + std::string(s) + "'");
  }
  return value;
}

inline std::int64_t parse_int(std::string_view s) {
  s = trim(s);
  std::int64_t value = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw FormatError("not an integer: '" + std::string(s) + "'");
  }
  return value;
}

inline std::uint64_t parse_uint64(std::string_view s) {
  s = trim(s);
  std::uint64_t value = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw FormatError("not an unsigned integer: '" + std::string(s) + "'");
  }
  return value;
}

/// Six significant digits, shortest of fixed/scientific. std::to_chars rounds
/// the exact binary value, which resolves exact decimal ties half-to-even.
inline std::string sig6(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 6);
  if (ec != std::errc{}) throw FormatError("number formatting failed");
  std::string out(buf, ptr);
  if (out == "-0") out = "0";
  return out;
}

/// Shortest representation that parses back to the identical double.
inline std::string exact(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw FormatError("number formatting failed");
  return {buf, ptr};
}

struct KeyValueLine {
  std::string key;
  std::string value;
  int line = 0;
};

/// Reads `key = value` lines; `#` starts a comment; blank lines are skipped.
inline std::vector<KeyValueLine> read_keyvalue(std::istream& in) {
  std::vector<KeyValueLine> out;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw FormatError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    KeyValueLine kv;
    kv.key = std::string(trim(line.substr(0, eq)));
    kv.value = std::string(trim(line.substr(eq + 1)));
    kv.line = line_no;
    if (kv.key.empty()) throw FormatError("line " + std::to_string(line_no) + ": empty key");
    out.push_back(std::move(kv));
  }
  return out;
}

class KeyValueWriter {
public:
  explicit KeyValueWriter(std::ostream& out) : out_(out) {}
  KeyValueWriter& put(std::string_view key, std::string_view value) {
    out_ << key << " = " << value << '\n';
    return *this;
  }
  KeyValueWriter& put(std::string_view key, double value) { return put(key, sig6(value)); }
  KeyValueWriter& put_exact(std::string_view key, double value) { return put(key, exact(value)); }
  KeyValueWriter& put_int(std::string_view key, std::int64_t value) { return put(key, std::to_string(value)); }

private:
  std::ostream& out_;
};

}  // namespace holomux::text
