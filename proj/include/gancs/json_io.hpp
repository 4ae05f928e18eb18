#pragma once

#include <filesystem>
#include <set>
#include <string>

#include "json.hpp"

#include "gancs/errors.hpp"

namespace gancs {

using Json = nlohmann::ordered_json;

Json read_json_file(const std::filesystem::path& path);
/// Writes via a temporary file and rename so readers never see partial files.
void write_json_file(const std::filesystem::path& path, const Json& value);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

/// Strict reader over a JSON object: every key must be consumed, otherwise
/// finish() reports the unknown ones.
class ObjectReader {
 public:
  ObjectReader(const Json& object, std::string context);

  bool has(const std::string& key) const { return object_.contains(key); }

  template <typename T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!object_.contains(key) || object_.at(key).is_null()) return fallback;
    return convert<T>(key);
  }

  template <typename T>
  T required(const std::string& key) {
    seen_.insert(key);
    if (!object_.contains(key)) throw ConfigError(context_ + ": missing required key '" + key + "'");
    return convert<T>(key);
  }

  const Json& child(const std::string& key) {
    seen_.insert(key);
    return object_.at(key);
  }

  void finish() const;

 private:
  template <typename T>
  T convert(const std::string& key) const {
    try {
      return object_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(context_ + ": bad value for '" + key + "': " + e.what());
    }
  }

  Json object_;
  std::string context_;
  std::set<std::string> seen_;
};

}  // namespace gancs
