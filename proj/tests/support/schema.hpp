#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

// Validator for the subset of JSON Schema used under docs/: type, enum,
// required, properties, additionalProperties: false, items, minItems,
// maxItems, minimum, maximum, exclusiveMinimum and file-relative $ref.
namespace schema {

using nlohmann::json;

inline json load(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return json::parse(ss.str());
}

inline bool has_type(const json& v, const std::string& t) {
  if (t == "object") return v.is_object();
  if (t == "array") return v.is_array();
  if (t == "string") return v.is_string();
  if (t == "integer") return v.is_number_integer();
  if (t == "number") return v.is_number();
  if (t == "boolean") return v.is_boolean();
  if (t == "null") return v.is_null();
  return false;
}

// Appends one message per violation to `errors`.
inline void validate(const json& v, const json& s, const std::filesystem::path& dir, const std::string& at,
                     std::vector<std::string>& errors) {
  if (s.contains("$ref")) {
    validate(v, load(dir / s.at("$ref").get<std::string>()), dir, at, errors);
    return;
  }
  if (s.contains("type")) {
    bool ok = false;
    if (s.at("type").is_array()) {
      for (const auto& t : s.at("type")) ok = ok || has_type(v, t.get<std::string>());
    } else {
      ok = has_type(v, s.at("type").get<std::string>());
    }
    if (!ok) {
      errors.push_back(at + ": wrong type");
      return;
    }
  }
  if (s.contains("enum")) {
    bool found = false;
    for (const auto& e : s.at("enum")) found = found || e == v;
    if (!found) errors.push_back(at + ": not in enum");
  }
  if (v.is_number()) {
    const double x = v.get<double>();
    if (s.contains("minimum") && x < s.at("minimum").get<double>()) errors.push_back(at + ": below minimum");
    if (s.contains("maximum") && x > s.at("maximum").get<double>()) errors.push_back(at + ": above maximum");
    if (s.contains("exclusiveMinimum") && x <= s.at("exclusiveMinimum").get<double>())
      errors.push_back(at + ": not above exclusiveMinimum");
  }
  if (v.is_object()) {
    if (s.contains("required")) {
      for (const auto& k : s.at("required")) {
        if (!v.contains(k.get<std::string>())) errors.push_back(at + ": missing " + k.get<std::string>());
      }
    }
    const json props = s.value("properties", json::object());
    for (const auto& [k, child] : v.items()) {
      if (props.contains(k)) {
        validate(child, props.at(k), dir, at + "." + k, errors);
      } else if (s.contains("additionalProperties") && s.at("additionalProperties") == false) {
        errors.push_back(at + ": unexpected " + k);
      }
    }
  }
  if (v.is_array()) {
    if (s.contains("minItems") && v.size() < s.at("minItems").get<size_t>()) errors.push_back(at + ": too few items");
    if (s.contains("maxItems") && v.size() > s.at("maxItems").get<size_t>()) errors.push_back(at + ": too many items");
    if (s.contains("items")) {
      for (size_t i = 0; i < v.size(); ++i) validate(v[i], s.at("items"), dir, at + "[" + std::to_string(i) + "]", errors);
    }
  }
}

inline std::vector<std::string> validate_file_schema(const json& v, const std::filesystem::path& schema_path) {
  std::vector<std::string> errors;
  validate(v, load(schema_path), schema_path.parent_path(), "$", errors);
  return errors;
}

}  // namespace schema
