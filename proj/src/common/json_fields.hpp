#pragma once

#include <algorithm>
#include <initializer_list>
#include <nlohmann/json.hpp>
#include <string>
#include <string_view>
#include <type_traits>

#include "polneuron/error.hpp"

namespace polneuron::detail {

// Required field; errors name the full key path.
template <class T>
T take(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) fail(ErrorKind::Config, where + "." + key + ": missing");
  const auto& v = j.at(key);
  if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
    if (!v.is_number_unsigned())
      fail(ErrorKind::Config, where + "." + key + ": expected a nonnegative integer");
  }
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::Config, where + "." + key + ": wrong type");
  }
}

template <class T>
void take_if(const nlohmann::json& j, const char* key, const std::string& where, T& dst) {
  if (j.contains(key)) dst = take<T>(j, key, where);
}

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<std::string_view> known,
                                const std::string& where) {
  if (!j.is_object()) fail(ErrorKind::Config, where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end())
      fail(ErrorKind::Config, where + "." + key + ": unknown key");
  }
}

}  // namespace polneuron::detail
