#pragma once
//------------------------------------------------------------------------------
//
//   Copyright 2026 The ocarlab Authors
//
//   Licensed under the Apache License, Version 2.0 (the "License");
//   you may not use this file except in compliance with the License.
//   You may obtain a copy of the License at
//
//       http://www.apache.org/licenses/LICENSE-2.0
//
//   Unless required by applicable law or agreed to in writing, software
//   distributed under the License is distributed on an "AS IS" BASIS,
//   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
//   See the License for the specific language governing permissions and
//   limitations under the License.
//
//------------------------------------------------------------------------------

// Flat sectioned configuration:
//
//   # comment
//   [section]
//   key = value            ; lists are comma separated
//
// JSON documents are accepted as well; nested objects become sections and
// arrays become lists. Every entry remembers where it came from so that
// errors can name the offending line and field.

#include "ocarlab/core.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace ocar::config {

struct Entry {
  std::string value;
  int line = 0;  // 0 for JSON input
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string scalar_text(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number()) {
    std::ostringstream ss;
    ss << std::setprecision(17) << v.get<double>();
    return ss.str();
  }
  if (v.is_array()) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + scalar_text(v[i]);
    return out;
  }
  throw Error(ErrorKind::ConfigError, "unsupported JSON value " + v.dump());
}

}  // namespace detail

class Document {
 public:
  static Document parse_ini(const std::string& text, std::string origin = "<config>") {
    Document doc;
    doc.origin_ = std::move(origin);
    std::istringstream is(text);
    std::string raw;
    std::string section;
    int line = 0;
    while (std::getline(is, raw)) {
      ++line;
      const auto cut = raw.find_first_of("#;");
      const std::string s = detail::trim(cut == std::string::npos ? raw : raw.substr(0, cut));
      if (s.empty()) continue;
      if (s.front() == '[') {
        if (s.back() != ']') doc.error_at(line, "unterminated section header");
        section = detail::trim(s.substr(1, s.size() - 2));
        if (section.empty()) doc.error_at(line, "empty section name");
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos) doc.error_at(line, "expected 'key = value'");
      const std::string key = detail::trim(s.substr(0, eq));
      if (key.empty()) doc.error_at(line, "missing key");
      const std::string full = section.empty() ? key : section + "." + key;
      if (doc.entries_.count(full)) doc.error_at(line, "duplicate key '" + full + "'");
      doc.entries_[full] = Entry{detail::trim(s.substr(eq + 1)), line};
    }
    return doc;
  }

  static Document parse_json(const std::string& text, std::string origin = "<config>") {
    Document doc;
    doc.origin_ = std::move(origin);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorKind::ConfigError, doc.origin_ + ": " + e.what());
    }
    if (!j.is_object()) throw Error(ErrorKind::ConfigError, doc.origin_ + ": top level must be an object");
    for (const auto& [k, v] : j.items()) {
      if (v.is_object()) {
        for (const auto& [k2, v2] : v.items()) doc.entries_[k + "." + k2] = Entry{detail::scalar_text(v2), 0};
      } else {
        doc.entries_[k] = Entry{detail::scalar_text(v), 0};
      }
    }
    return doc;
  }

  /// JSON when the first non-blank character is '{', INI otherwise.
  static Document parse(const std::string& text, std::string origin = "<config>") {
    const auto p = text.find_first_not_of(" \t\r\n");
    if (p != std::string::npos && text[p] == '{') return parse_json(text, std::move(origin));
    return parse_ini(text, std::move(origin));
  }

  [[nodiscard]] bool has(const std::string& key) const { return entries_.count(key) != 0; }

  [[nodiscard]] const std::string& origin() const { return origin_; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    const auto* e = find(key);
    return e ? e->value : fallback;
  }

  double get_double(const std::string& key, double fallback) const {
    const auto* e = find(key);
    return e ? to_double(key, *e, e->value) : fallback;
  }

  long long get_int(const std::string& key, long long fallback) const {
    const auto* e = find(key);
    return e ? to_int(key, *e, e->value) : fallback;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    const auto* e = find(key);
    if (!e) return fallback;
    std::string v = e->value;
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
    if (v == "false" || v == "no" || v == "off" || v == "0") return false;
    field_error(key, *e, "expected a boolean, got '" + e->value + "'");
  }

  std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback = {}) const {
    const auto* e = find(key);
    if (!e) return fallback;
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(e->value);
    while (std::getline(is, item, ',')) {
      item = detail::trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback = {}) const {
    if (!has(key)) return fallback;
    std::vector<double> out;
    for (const auto& s : get_list(key)) out.push_back(to_double(key, *find(key), s));
    return out;
  }

  std::vector<long long> get_ints(const std::string& key, const std::vector<long long>& fallback = {}) const {
    if (!has(key)) return fallback;
    std::vector<long long> out;
    for (const auto& s : get_list(key)) out.push_back(to_int(key, *find(key), s));
    return out;
  }

  /// Raises ConfigError for a key, with its line when known.
  [[noreturn]] void field_error(const std::string& key, const std::string& msg) const {
    const auto* e = find(key);
    if (e) field_error(key, *e, msg);
    throw Error(ErrorKind::ConfigError, origin_ + ": field '" + key + "': " + msg);
  }

  /// Keys that were never read; callers reject these to catch typos.
  [[nodiscard]] std::vector<std::string> unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, e] : entries_)
      if (!used_.count(k)) out.push_back(k);
    return out;
  }

  void reject_unused() const {
    const auto unused = unused_keys();
    if (!unused.empty()) field_error(unused.front(), "unknown key");
  }

 private:
  const Entry* find(const std::string& key) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return nullptr;
    used_.insert(key);
    return &it->second;
  }

  [[noreturn]] void error_at(int line, const std::string& msg) const {
    throw Error(ErrorKind::ConfigError, origin_ + ":" + std::to_string(line) + ": " + msg);
  }

  [[noreturn]] void field_error(const std::string& key, const Entry& e, const std::string& msg) const {
    const std::string where = e.line > 0 ? origin_ + ":" + std::to_string(e.line) : origin_;
    throw Error(ErrorKind::ConfigError, where + ": field '" + key + "': " + msg);
  }

  double to_double(const std::string& key, const Entry& e, const std::string& s) const {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) field_error(key, e, "expected a number, got '" + s + "'");
    return v;
  }

  long long to_int(const std::string& key, const Entry& e, const std::string& s) const {
    long long v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) field_error(key, e, "expected an integer, got '" + s + "'");
    return v;
  }

  std::string origin_;
  std::map<std::string, Entry> entries_;
  mutable std::set<std::string> used_;
};

}  // namespace ocar::config
