#pragma once

// Line-based configuration files: one `key = value` per line, `#` starts a
// comment, blank lines are ignored.  Keys keep their file order; a repeated
// key is an error (it is almost always a typo in hand-written configs).

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace retex {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Config {
 public:
  static Config parse(const std::string& text);
  static Config load(const std::string& path);

  bool has(const std::string& key) const;
  // Required accessors throw ConfigError naming the key; the *_or variants
  // fall back to a default.
  std::string get_string(const std::string& key) const;
  std::string get_string_or(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double_or(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key) const;
  std::int64_t get_int_or(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key) const;
  bool get_bool_or(const std::string& key, bool fallback) const;
  // Comma-separated list of numbers.
  std::vector<double> get_doubles(const std::string& key) const;

  // Keys in file order; keys_with_prefix filters (e.g. "object1.").
  const std::vector<std::string>& keys() const { return order_; }
  std::vector<std::string> keys_with_prefix(const std::string& prefix) const;

  void set(const std::string& key, const std::string& value);
  std::string serialize() const;

 private:
  std::optional<std::string> find(const std::string& key) const;
  std::vector<std::string> order_;
  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace retex
