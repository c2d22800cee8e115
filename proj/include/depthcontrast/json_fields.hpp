#pragma once

#include <set>
#include <string>

#include <json.hpp>

#include "depthcontrast/errors.hpp"

namespace dc {

/// Strict reader for one JSON object: every key must be consumed by `field`
/// or `finish` rejects it.
class JsonFields {
 public:
  JsonFields(const nlohmann::ordered_json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  bool field(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return false;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
    return true;
  }

  const nlohmann::ordered_json* child(const std::string& key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  std::string path(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(path_ + ": unknown key '" + it.key() + "'");
  }

 private:
  const nlohmann::ordered_json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace dc
