#pragma once

// Line-based `key = value` files with optional [section] headers. Used for
// configs and run manifests. Keys keep insertion order; keys may not contain
// '.' or '='.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace meshtex {

class KeyValueFile {
 public:
  // Section "" holds keys that appear before any header.
  void set(const std::string& section, const std::string& key, std::string value);
  void set(const std::string& section, const std::string& key, double value);
  void set(const std::string& section, const std::string& key, std::int64_t value);
  void set(const std::string& section, const std::string& key, int value) {
    set(section, key, static_cast<std::int64_t>(value));
  }
  void set(const std::string& section, const std::string& key, std::uint64_t value);
  void set(const std::string& section, const std::string& key, bool value);
  void set(const std::string& section, const std::string& key, const char* value) {
    set(section, key, std::string(value));
  }

  std::optional<std::string> get(const std::string& section, const std::string& key) const;
  // Throw ParseError when the key is missing or does not parse.
  std::string require(const std::string& section, const std::string& key) const;
  double require_double(const std::string& section, const std::string& key) const;
  std::int64_t require_int(const std::string& section, const std::string& key) const;
  std::uint64_t require_uint(const std::string& section, const std::string& key) const;
  // true/false or 1/0.
  bool require_bool(const std::string& section, const std::string& key) const;

  bool has_section(const std::string& section) const;
  const std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>>& sections() const {
    return sections_;
  }

  std::string to_string() const;
  static KeyValueFile parse(const std::string& text, const std::string& source_name = "<string>");
  static KeyValueFile load(const std::filesystem::path& path);
  // Atomic (temp file + rename).
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::pair<std::string, std::string>>& section_entries(const std::string& section);
  std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>> sections_;
};

std::string format_double(double value);
std::string join_csv(std::span<const double> values);
std::vector<double> split_csv_doubles(const std::string& text);

}  // namespace meshtex
