#pragma once

#include <algorithm>
#include <initializer_list>
#include <string>

#include "json.hpp"
#include "plroad/errors.hpp"

namespace plroad {

inline void require_object(const nlohmann::json& j, const std::string& context) {
  if (!j.is_object()) throw ConfigError(context + ": expected a JSON object");
}

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> known,
                                const std::string& context) {
  require_object(j, context);
  for (auto it = j.begin(); it != j.end(); ++it) {
    const bool ok = std::any_of(known.begin(), known.end(), [&](const char* k) { return it.key() == k; });
    if (!ok) throw ConfigError(context + ": unknown key '" + it.key() + "'");
  }
}

/// Leaves `out` untouched when the key is absent.
template <typename T>
void read_optional(const nlohmann::json& j, const char* key, T& out, const std::string& context) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(context + "." + key + ": " + e.what());
  }
}

template <typename T>
T read_required(const nlohmann::json& j, const char* key, const std::string& context) {
  if (!j.contains(key)) throw ConfigError(context + ": missing key '" + std::string(key) + "'");
  T out{};
  read_optional(j, key, out, context);
  return out;
}

inline nlohmann::json parse_json_text(const std::string& text, const std::string& context) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(context + ": " + e.what());
  }
}

}  // namespace plroad
