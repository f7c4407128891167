#ifndef COBENEFIT_IO_HPP
#define COBENEFIT_IO_HPP

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cobenefit {

/// Malformed input file (wrong header, bad number, missing key).
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing or unreadable input file.
class MissingFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shortest round-trip representation is not required; 17 significant
/// digits always reproduces the double bit-for-bit.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.emplace_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_double(std::string_view s, std::string_view context) {
  s = trim(s);
  std::string tmp(s);
  char* end = nullptr;
  const double v = std::strtod(tmp.c_str(), &end);
  if (tmp.empty() || end != tmp.c_str() + tmp.size()) {
    throw SchemaError(std::string(context) + ": expected a number, got '" + tmp + "'");
  }
  return v;
}

inline long parse_long(std::string_view s, std::string_view context) {
  s = trim(s);
  long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw SchemaError(std::string(context) + ": expected an integer, got '" + std::string(s) + "'");
  }
  return v;
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw MissingFileError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    lines.push_back(line);
  }
  return lines;
}

/// Reads a CSV with a fixed header; returns the data rows.
inline std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path,
                                                      const std::vector<std::string>& header,
                                                      std::size_t skip_lines = 0) {
  const auto lines = read_lines(path);
  if (lines.size() < skip_lines + 1 || split_csv(lines[skip_lines]) != header) {
    std::string want;
    for (const auto& h : header) want += (want.empty() ? "" : ",") + h;
    throw SchemaError(path.string() + ": expected header '" + want + "'");
  }
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = skip_lines + 1; i < lines.size(); ++i) {
    auto cols = split_csv(lines[i]);
    if (cols.size() != header.size()) {
      throw SchemaError(path.string() + ":" + std::to_string(i + 1) + ": expected " +
                        std::to_string(header.size()) + " fields, got " + std::to_string(cols.size()));
    }
    rows.push_back(std::move(cols));
  }
  return rows;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingFileError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

/// `key = value` lines; `#` starts a comment. Later keys override earlier.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(std::string_view text, std::string_view source = "<config>") {
    KeyValueConfig cfg;
    std::istringstream is{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto t = trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string_view::npos) {
        throw SchemaError(std::string(source) + ":" + std::to_string(lineno) + ": expected 'key = value'");
      }
      cfg.values_[std::string(trim(t.substr(0, eq)))] = std::string(trim(t.substr(eq + 1)));
    }
    return cfg;
  }

  static KeyValueConfig load(const std::filesystem::path& path) { return parse(read_text(path), path.string()); }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw SchemaError("missing config key '" + key + "'");
    return it->second;
  }

  std::string get_or(const std::string& key, std::string fallback) const {
    return has(key) ? get(key) : fallback;
  }

  double number(const std::string& key) const { return parse_double(get(key), key); }
  double number_or(const std::string& key, double fallback) const { return has(key) ? number(key) : fallback; }
  long integer(const std::string& key) const { return parse_long(get(key), key); }
  long integer_or(const std::string& key, long fallback) const { return has(key) ? integer(key) : fallback; }

  std::uint64_t seed_or(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const auto& v = get(key);
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) throw SchemaError(key + ": expected an unsigned integer, got '" + v + "'");
    return out;
  }

  bool boolean_or(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const auto& v = get(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw SchemaError(key + ": expected a boolean, got '" + v + "'");
  }

  /// Comma-separated list of numbers.
  std::vector<double> numbers(const std::string& key) const {
    std::vector<double> out;
    for (const auto& f : split_csv(get(key))) out.push_back(parse_double(f, key));
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace cobenefit

#endif  // COBENEFIT_IO_HPP
