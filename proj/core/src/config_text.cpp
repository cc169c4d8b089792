#include "fairlatent/config_text.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>

#include "fairlatent/errors.hpp"

namespace fairlatent {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

KeyValueText KeyValueText::parse(std::string_view text) {
  KeyValueText out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto eol = text.find('\n');
    std::string_view line = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);

    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    out.set(key, std::string(trim(line.substr(eq + 1))));
  }
  return out;
}

std::string KeyValueText::to_string() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
  return out;
}

void KeyValueText::set(std::string_view key, std::string value) {
  auto it = std::find_if(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == key; });
  if (it != entries_.end()) {
    it->second = std::move(value);
  } else {
    entries_.emplace_back(std::string(key), std::move(value));
  }
}

void KeyValueText::set(std::string_view key, double value) { set(key, format_double(value)); }

void KeyValueText::set(std::string_view key, std::int64_t value) { set(key, std::to_string(value)); }

void KeyValueText::set(std::string_view key, bool value) { set(key, std::string(value ? "true" : "false")); }

bool KeyValueText::contains(std::string_view key) const { return find(key).has_value(); }

std::optional<std::string> KeyValueText::find(std::string_view key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  return std::nullopt;
}

std::string KeyValueText::get_string(std::string_view key, std::string fallback) const {
  auto v = find(key);
  return v ? *v : fallback;
}

double KeyValueText::get_double(std::string_view key, double fallback) const {
  auto v = find(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const double d = std::stod(*v, &used);
    if (used != v->size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + std::string(key) + "': '" + *v + "' is not a number");
  }
}

std::int64_t KeyValueText::get_int(std::string_view key, std::int64_t fallback) const {
  auto v = find(key);
  if (!v) return fallback;
  std::int64_t out = 0;
  auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || ptr != v->data() + v->size()) {
    throw ConfigError("config key '" + std::string(key) + "': '" + *v + "' is not an integer");
  }
  return out;
}

bool KeyValueText::get_bool(std::string_view key, bool fallback) const {
  auto v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "off") return false;
  throw ConfigError("config key '" + std::string(key) + "': '" + *v + "' is not a boolean");
}

void KeyValueText::require_known(const std::set<std::string, std::less<>>& allowed) const {
  for (const auto& [k, v] : entries_) {
    if (!allowed.contains(k)) throw ConfigError("unknown config key '" + k + "'");
  }
}

void KeyValueText::merge(const KeyValueText& other) {
  for (const auto& [k, v] : other.entries_) set(k, v);
}

}  // namespace fairlatent
