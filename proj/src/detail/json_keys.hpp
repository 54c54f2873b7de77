#pragma once

#include <algorithm>
#include <initializer_list>
#include <string>
#include <string_view>

#include "json.hpp"
#include "survrec/error.hpp"

namespace survrec::detail {

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<std::string_view> known,
                                std::string_view what) {
  if (!j.is_object()) throw Error(ErrorKind::Schema, std::string(what) + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw Error(ErrorKind::Schema, std::string(what) + ": unknown key \"" + key + "\"");
    }
  }
}

}  // namespace survrec::detail
