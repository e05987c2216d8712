#pragma once

#include <cctype>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>

#include "prefquery/error.hpp"

namespace prefquery {

// Flat key=value configuration in a TOML-like syntax: `#` comments,
// `[section]` headers that prefix later keys as `section.key`, and optional
// double quotes around values.
class Config {
 public:
  static Config parse(std::string_view text, const std::string& source = "<config>") {
    Config cfg;
    std::string section;
    std::size_t lineno = 0;
    std::istringstream in{std::string(text)};
    std::string raw;
    while (std::getline(in, raw)) {
      ++lineno;
      std::string_view line = strip(raw);
      if (auto hash = find_comment(line); hash != std::string_view::npos) line = strip(line.substr(0, hash));
      if (line.empty()) continue;
      if (line.front() == '[') {
        require(line.back() == ']', ErrorKind::validation,
                source + ":" + std::to_string(lineno) + ": unterminated section header");
        section = std::string(strip(line.substr(1, line.size() - 2)));
        continue;
      }
      auto eq = line.find('=');
      require(eq != std::string_view::npos, ErrorKind::validation,
              source + ":" + std::to_string(lineno) + ": expected key = value");
      std::string key(strip(line.substr(0, eq)));
      require(!key.empty(), ErrorKind::validation,
              source + ":" + std::to_string(lineno) + ": empty key");
      std::string_view value = strip(line.substr(eq + 1));
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
        value = value.substr(1, value.size() - 2);
      }
      cfg.values_[section.empty() ? key : section + "." + key] = std::string(value);
    }
    return cfg;
  }

  static Config load(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::io, "cannot open config " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path.string());
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::optional<std::string> get_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<double> get_double(const std::string& key) const {
    auto s = get_string(key);
    if (!s) return std::nullopt;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s->data(), s->data() + s->size(), v);
    require(ec == std::errc() && ptr == s->data() + s->size(), ErrorKind::validation,
            "config key '" + key + "' is not a number: " + *s);
    return v;
  }

  std::optional<long long> get_int(const std::string& key) const {
    auto s = get_string(key);
    if (!s) return std::nullopt;
    long long v = 0;
    auto [ptr, ec] = std::from_chars(s->data(), s->data() + s->size(), v);
    require(ec == std::errc() && ptr == s->data() + s->size(), ErrorKind::validation,
            "config key '" + key + "' is not an integer: " + *s);
    return v;
  }

  std::optional<bool> get_bool(const std::string& key) const {
    auto s = get_string(key);
    if (!s) return std::nullopt;
    if (*s == "true") return true;
    if (*s == "false") return false;
    fail(ErrorKind::validation, "config key '" + key + "' is not a boolean: " + *s);
  }

  // Keys under `prefix.`, with the prefix removed.
  std::map<std::string, std::string> section(const std::string& prefix) const {
    std::map<std::string, std::string> out;
    const std::string p = prefix + ".";
    for (const auto& [k, v] : values_) {
      if (k.rfind(p, 0) == 0) out[k.substr(p.size())] = v;
    }
    return out;
  }

  const std::map<std::string, std::string>& values() const noexcept { return values_; }

 private:
  static std::string_view strip(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
  }

  // First '#' outside double quotes.
  static std::size_t find_comment(std::string_view line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) return i;
    }
    return std::string_view::npos;
  }

  std::map<std::string, std::string> values_;
};

}  // namespace prefquery
