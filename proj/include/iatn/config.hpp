// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "iatn/error.hpp"
#include "iatn/textpipe.hpp"

namespace iatn {

/// Flat `key=value` text: one pair per line, '#' starts a comment.
using KeyValues = std::map<std::string, std::string>;

inline KeyValues parse_key_values(std::string_view text, const std::string& origin = "config") {
  KeyValues out;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key=value, got '" +
                        body + "'");
    }
    out[trim(std::string_view(body).substr(0, eq))] = trim(std::string_view(body).substr(eq + 1));
  }
  return out;
}

inline KeyValues load_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path);
}

inline std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

/// Typed reads that consume keys, so leftovers can be reported as unknown.
class KeyValueReader {
 public:
  explicit KeyValueReader(KeyValues kv) : kv_(std::move(kv)) {}

  template <typename T>
  void read(const std::string& key, T& dst) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return;
    const std::string value = it->second;
    kv_.erase(it);
    if constexpr (std::is_same_v<T, bool>) {
      if (value == "true" || value == "1") dst = true;
      else if (value == "false" || value == "0") dst = false;
      else throw ConfigError("key '" + key + "': expected true/false, got '" + value + "'");
    } else if constexpr (std::is_same_v<T, std::string>) {
      dst = value;
    } else if constexpr (std::is_floating_point_v<T>) {
      try {
        std::size_t used = 0;
        dst = static_cast<T>(std::stod(value, &used));
        if (used != value.size()) throw std::invalid_argument(value);
      } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected a number, got '" + value + "'");
      }
    } else {
      T parsed{};
      auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), parsed);
      if (ec != std::errc() || ptr != value.data() + value.size()) {
        throw ConfigError("key '" + key + "': expected an integer, got '" + value + "'");
      }
      dst = parsed;
    }
  }

  /// Throws if any key was never read.
  void finish(const std::string& what) const {
    if (!kv_.empty()) throw ConfigError(what + ": unknown key '" + kv_.begin()->first + "'");
  }

 private:
  KeyValues kv_;
};

template <typename T>
std::string to_config_string(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_floating_point_v<T>) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  } else {
    return std::to_string(v);
  }
}

}  // namespace iatn
