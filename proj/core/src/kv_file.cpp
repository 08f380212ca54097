#include "meshtex/kv_file.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "meshtex/errors.hpp"
#include "meshtex/obj_io.hpp"

namespace meshtex {

namespace pt = boost::property_tree;

namespace {

void check_name(const std::string& name, const char* what) {
  if (name.find_first_of(".=[]\n") != std::string::npos) {
    throw ValidationError(fmt::format("invalid {} name '{}'", what, name));
  }
}

template <typename Number>
Number parse_number(const std::string& text, const std::string& where) {
  Number value{};
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) throw ParseError(fmt::format("{}: cannot parse '{}' as a number", where, text));
  return value;
}

}  // namespace

std::string format_double(double value) { return fmt::format("{:.17g}", value); }

std::string join_csv(std::span<const double> values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += format_double(values[i]);
  }
  return out;
}

std::vector<double> split_csv_doubles(const std::string& text) {
  std::vector<double> out;
  std::stringstream stream(text);
  std::string item;
  while (std::getline(stream, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    const auto last = item.find_last_not_of(" \t");
    if (first == std::string::npos) continue;
    out.push_back(parse_number<double>(item.substr(first, last - first + 1), "csv list"));
  }
  return out;
}

std::vector<std::pair<std::string, std::string>>& KeyValueFile::section_entries(const std::string& section) {
  for (auto& [name, entries] : sections_) {
    if (name == section) return entries;
  }
  check_name(section, "section");
  // Keep the unnamed section first so the text form stays valid.
  if (section.empty()) return sections_.insert(sections_.begin(), {section, {}})->second;
  return sections_.emplace_back(section, std::vector<std::pair<std::string, std::string>>{}).second;
}

void KeyValueFile::set(const std::string& section, const std::string& key, std::string value) {
  check_name(key, "key");
  if (key.empty()) throw ValidationError("empty key");
  if (value.find('\n') != std::string::npos) throw ValidationError(fmt::format("value for '{}' spans lines", key));
  auto& entries = section_entries(section);
  for (auto& [k, v] : entries) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  entries.emplace_back(key, std::move(value));
}

void KeyValueFile::set(const std::string& section, const std::string& key, double value) {
  set(section, key, format_double(value));
}
void KeyValueFile::set(const std::string& section, const std::string& key, std::int64_t value) {
  set(section, key, std::to_string(value));
}
void KeyValueFile::set(const std::string& section, const std::string& key, std::uint64_t value) {
  set(section, key, std::to_string(value));
}
void KeyValueFile::set(const std::string& section, const std::string& key, bool value) {
  set(section, key, std::string(value ? "true" : "false"));
}

std::optional<std::string> KeyValueFile::get(const std::string& section, const std::string& key) const {
  for (const auto& [name, entries] : sections_) {
    if (name != section) continue;
    for (const auto& [k, v] : entries) {
      if (k == key) return v;
    }
  }
  return std::nullopt;
}

bool KeyValueFile::has_section(const std::string& section) const {
  for (const auto& s : sections_) {
    if (s.first == section) return true;
  }
  return false;
}

std::string KeyValueFile::require(const std::string& section, const std::string& key) const {
  auto value = get(section, key);
  if (!value) {
    throw ParseError(section.empty() ? fmt::format("missing key '{}'", key)
                                     : fmt::format("missing key '{}' in section [{}]", key, section));
  }
  return *value;
}

double KeyValueFile::require_double(const std::string& section, const std::string& key) const {
  return parse_number<double>(require(section, key), key);
}
std::int64_t KeyValueFile::require_int(const std::string& section, const std::string& key) const {
  return parse_number<std::int64_t>(require(section, key), key);
}
std::uint64_t KeyValueFile::require_uint(const std::string& section, const std::string& key) const {
  return parse_number<std::uint64_t>(require(section, key), key);
}

bool KeyValueFile::require_bool(const std::string& section, const std::string& key) const {
  const std::string v = require(section, key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ParseError(fmt::format("key '{}': expected true or false, got '{}'", key, v));
}

std::string KeyValueFile::to_string() const {
  pt::ptree tree;
  for (const auto& [name, entries] : sections_) {
    if (name.empty()) {
      for (const auto& [k, v] : entries) tree.push_back({k, pt::ptree(v)});
    }
  }
  for (const auto& [name, entries] : sections_) {
    if (name.empty()) continue;
    pt::ptree child;
    for (const auto& [k, v] : entries) child.push_back({k, pt::ptree(v)});
    tree.push_back({name, child});
  }
  std::ostringstream out;
  pt::write_ini(out, tree);
  return out.str();
}

KeyValueFile KeyValueFile::parse(const std::string& text, const std::string& source_name) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(fmt::format("{}:{}: {}", source_name, e.line(), e.message()));
  }
  KeyValueFile file;
  for (const auto& [name, node] : tree) {
    if (node.empty()) {
      file.set("", name, node.data());
    } else {
      for (const auto& [k, v] : node) file.set(name, k, v.data());
    }
  }
  return file;
}

KeyValueFile KeyValueFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open '{}'", path.string()));
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), path.string());
}

void KeyValueFile::save(const std::filesystem::path& path) const { write_file_atomic(path, to_string()); }

}  // namespace meshtex
