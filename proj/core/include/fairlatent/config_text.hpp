#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fairlatent {

/// Ordered `key = value` text used for run configs and checkpoint headers.
/// Blank lines and `#` comments are ignored. Doubles are written with 17
/// significant digits so a write/parse cycle is exact.
class KeyValueText {
 public:
  static KeyValueText parse(std::string_view text);

  std::string to_string() const;

  void set(std::string_view key, std::string value);
  void set(std::string_view key, double value);
  void set(std::string_view key, std::int64_t value);
  void set(std::string_view key, bool value);
  void set(std::string_view key, const char* value) { set(key, std::string(value)); }
  void set(std::string_view key, int value) { set(key, static_cast<std::int64_t>(value)); }
  void set(std::string_view key, std::size_t value) { set(key, static_cast<std::int64_t>(value)); }

  bool contains(std::string_view key) const;
  std::optional<std::string> find(std::string_view key) const;

  std::string get_string(std::string_view key, std::string fallback) const;
  double get_double(std::string_view key, double fallback) const;
  std::int64_t get_int(std::string_view key, std::int64_t fallback) const;
  bool get_bool(std::string_view key, bool fallback) const;

  /// Throws ConfigError naming the first key not in `allowed`.
  void require_known(const std::set<std::string, std::less<>>& allowed) const;

  /// Copies every entry of `other`, overriding existing keys.
  void merge(const KeyValueText& other);

  const std::vector<std::pair<std::string, std::string>>& entries() const noexcept { return entries_; }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

std::string format_double(double v);

}  // namespace fairlatent
