#pragma once

// Validator for the JSON-schema subset the shipped schema uses: $ref into
// #/definitions, type, const, enum, required, properties,
// additionalProperties:false, items, oneOf.

#include <string>

#include <json.hpp>

namespace subgrad::testing {

class SchemaValidator {
 public:
  explicit SchemaValidator(nlohmann::json root) : root_(std::move(root)) {}

  bool validate(const nlohmann::json& value, std::string& err) const {
    return check(value, root_, "$", err);
  }

 private:
  bool check(const nlohmann::json& value, const nlohmann::json& schema, const std::string& path,
             std::string& err) const {
    if (schema.contains("$ref")) return check(value, resolve(schema["$ref"]), path, err);

    if (schema.contains("oneOf")) {
      int matches = 0;
      for (const auto& sub : schema["oneOf"]) {
        std::string scratch;
        if (check(value, sub, path, scratch)) ++matches;
      }
      if (matches != 1) {
        err = path + ": oneOf matched " + std::to_string(matches) + " alternatives";
        return false;
      }
      return true;
    }

    if (schema.contains("const")) {
      if (value != schema["const"]) {
        err = path + ": expected const " + schema["const"].dump();
        return false;
      }
    }
    if (schema.contains("enum")) {
      bool found = false;
      for (const auto& e : schema["enum"]) found = found || value == e;
      if (!found) {
        err = path + ": not in enum " + schema["enum"].dump();
        return false;
      }
    }
    if (schema.contains("type") && !type_matches(value, schema["type"])) {
      err = path + ": wrong type (" + schema["type"].dump() + ", got " +
            std::string(value.type_name()) + ")";
      return false;
    }

    if (value.is_object()) {
      if (schema.contains("required")) {
        for (const auto& key : schema["required"]) {
          if (!value.contains(key.get<std::string>())) {
            err = path + ": missing required key '" + key.get<std::string>() + "'";
            return false;
          }
        }
      }
      const auto* props = schema.contains("properties") ? &schema["properties"] : nullptr;
      for (const auto& [key, sub] : value.items()) {
        if (props && props->contains(key)) {
          if (!check(sub, (*props)[key], path + "." + key, err)) return false;
        } else if (schema.contains("additionalProperties") &&
                   schema["additionalProperties"].is_boolean() &&
                   !schema["additionalProperties"].get<bool>()) {
          err = path + ": unexpected key '" + key + "'";
          return false;
        }
      }
    }
    if (value.is_array() && schema.contains("items")) {
      for (std::size_t i = 0; i < value.size(); ++i)
        if (!check(value[i], schema["items"], path + "[" + std::to_string(i) + "]", err))
          return false;
    }
    return true;
  }

  static bool single_type_matches(const nlohmann::json& value, const std::string& t) {
    if (t == "object") return value.is_object();
    if (t == "array") return value.is_array();
    if (t == "string") return value.is_string();
    if (t == "boolean") return value.is_boolean();
    if (t == "integer") return value.is_number_integer() || value.is_number_unsigned();
    if (t == "number") return value.is_number();
    if (t == "null") return value.is_null();
    return false;
  }

  static bool type_matches(const nlohmann::json& value, const nlohmann::json& type) {
    if (type.is_array()) {
      for (const auto& t : type)
        if (single_type_matches(value, t.get<std::string>())) return true;
      return false;
    }
    return single_type_matches(value, type.get<std::string>());
  }

  nlohmann::json resolve(const nlohmann::json& ref) const {
    std::string r = ref.get<std::string>();
    const nlohmann::json* at = &root_;
    std::size_t pos = 2;  // skip "#/"
    while (pos < r.size()) {
      std::size_t slash = r.find('/', pos);
      const std::string key = r.substr(pos, slash == std::string::npos ? std::string::npos
                                                                       : slash - pos);
      at = &at->at(key);
      if (slash == std::string::npos) break;
      pos = slash + 1;
    }
    return *at;
  }

  nlohmann::json root_;
};

}  // namespace subgrad::testing
