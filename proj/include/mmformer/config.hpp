#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace mmf {

/// Parsed `key = value` lines. Blank lines and `#` comments are ignored.
class KeyValues {
 public:
  static KeyValues parse(std::string_view text);
  static KeyValues load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  // Typed getters mark the key as consumed; they throw ConfigError on bad values.
  std::string take_string(const std::string& key, std::string fallback);
  std::int64_t take_int(const std::string& key, std::int64_t fallback);
  std::uint64_t take_u64(const std::string& key, std::uint64_t fallback);
  double take_double(const std::string& key, double fallback);
  bool take_bool(const std::string& key, bool fallback);
  std::vector<int> take_int_list(const std::string& key, std::vector<int> fallback);

  // Throws ConfigError naming any key no getter consumed.
  void require_all_consumed() const;

  const std::map<std::string, std::string>& raw() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, bool> consumed_;
};

std::uint64_t fnv1a64(std::string_view bytes);

// Shortest text that parses back to the same double.
std::string format_double(double v);

}  // namespace mmf
