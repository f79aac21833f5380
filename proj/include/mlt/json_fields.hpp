#pragma once

#include <set>
#include <string>
#include <type_traits>

#include "json.hpp"
#include "mlt/errors.hpp"

namespace mlt {

/// Reads optional fields out of a JSON object; `finish()` rejects any key that
/// was never asked for. Missing keys keep the caller's default.
class FieldReader {
 public:
  FieldReader(const nlohmann::json& object, std::string context)
      : object_(object), context_(std::move(context)) {
    if (!object_.is_object()) throw ConfigError(context_ + ": expected a JSON object");
  }

  template <class T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = object_.find(key);
    if (it == object_.end()) return;
    try {
      if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        if (!it->is_number_integer() || (it->is_number_integer() && it->template get<long long>() < 0)) {
          throw ConfigError(context_ + "." + key + ": expected a non-negative integer");
        }
      }
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(context_ + "." + key + ": " + e.what());
    }
  }

  /// Sub-object under `key`, or nullptr when absent.
  const nlohmann::json* child(const std::string& key) {
    seen_.insert(key);
    auto it = object_.find(key);
    return it == object_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = object_.begin(); it != object_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(context_ + ": unknown key \"" + it.key() + "\"");
    }
  }

 private:
  const nlohmann::json& object_;
  std::string context_;
  std::set<std::string> seen_;
};

}  // namespace mlt
