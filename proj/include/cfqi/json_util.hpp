#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "cfqi/errors.hpp"

namespace cfqi::jsonutil {

using json = nlohmann::json;

inline std::string join(const std::string& prefix, std::string_view key) {
  return prefix.empty() ? std::string(key) : prefix + "." + std::string(key);
}

/// Reads j[key] into `out` when present; type mismatches raise ConfigError with the field path.
template <class T>
void read(const json& j, std::string_view key, const std::string& prefix, T& out) {
  auto it = j.find(std::string(key));
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(join(prefix, key), std::string("wrong type: ") + e.what());
  }
}

/// Rejects keys outside `allowed` (schema validation).
inline void allow_only(const json& j, const std::string& prefix, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError(prefix, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == it.key();
    if (!ok) throw ConfigError(join(prefix, it.key()), "unknown key");
  }
}

}  // namespace cfqi::jsonutil
