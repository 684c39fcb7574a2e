// Copyright 2026 The gcmp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Validator for the JSON-schema subset used by the shipped schema files:
// type, required, properties, additionalProperties (false), enum, minimum,
// exclusiveMinimum, items, minItems, maxItems, oneOf and local $ref.

#include <string>
#include <vector>

#include "json.hpp"

namespace schema_check {

using nlohmann::json;

inline bool type_matches(const json& v, const std::string& t) {
  if (t == "object") return v.is_object();
  if (t == "array") return v.is_array();
  if (t == "string") return v.is_string();
  if (t == "boolean") return v.is_boolean();
  if (t == "null") return v.is_null();
  if (t == "integer") return v.is_number_integer();
  if (t == "number") return v.is_number();
  return false;
}

inline const json& resolve(const json& root, const std::string& ref) {
  const std::string prefix = "#/$defs/";
  if (ref.rfind(prefix, 0) != 0) throw std::invalid_argument("unsupported $ref " + ref);
  return root.at("$defs").at(ref.substr(prefix.size()));
}

inline void check(const json& root, const json& s, const json& v, const std::string& where,
                  std::vector<std::string>& errors) {
  if (s.contains("$ref")) {
    check(root, resolve(root, s.at("$ref")), v, where, errors);
    return;
  }
  if (s.contains("oneOf")) {
    int matched = 0;
    for (const auto& alt : s.at("oneOf")) {
      std::vector<std::string> e;
      check(root, alt, v, where, e);
      matched += e.empty();
    }
    if (matched != 1) errors.push_back(where + ": matches " + std::to_string(matched) + " oneOf branches");
    return;
  }
  if (s.contains("type") && !type_matches(v, s.at("type"))) {
    errors.push_back(where + ": expected " + s.at("type").get<std::string>());
    return;
  }
  if (s.contains("enum")) {
    bool found = false;
    for (const auto& e : s.at("enum")) found = found || e == v;
    if (!found) errors.push_back(where + ": not in enum");
  }
  if (v.is_number()) {
    const double x = v.get<double>();
    if (s.contains("minimum") && x < s.at("minimum").get<double>()) errors.push_back(where + ": below minimum");
    if (s.contains("exclusiveMinimum") && x <= s.at("exclusiveMinimum").get<double>())
      errors.push_back(where + ": not above exclusiveMinimum");
  }
  if (v.is_object()) {
    for (const auto& r : s.value("required", json::array()))
      if (!v.contains(r.get<std::string>())) errors.push_back(where + ": missing " + r.get<std::string>());
    const auto props = s.value("properties", json::object());
    for (const auto& [k, sub] : v.items()) {
      if (props.contains(k)) {
        check(root, props.at(k), sub, where + "." + k, errors);
      } else if (s.contains("additionalProperties") && s.at("additionalProperties") == false) {
        errors.push_back(where + ": unexpected field " + k);
      }
    }
  }
  if (v.is_array()) {
    if (s.contains("minItems") && v.size() < s.at("minItems").get<std::size_t>()) errors.push_back(where + ": too few items");
    if (s.contains("maxItems") && v.size() > s.at("maxItems").get<std::size_t>()) errors.push_back(where + ": too many items");
    if (s.contains("items"))
      for (std::size_t i = 0; i < v.size(); ++i)
        check(root, s.at("items"), v[i], where + "[" + std::to_string(i) + "]", errors);
  }
}

inline std::vector<std::string> validate(const json& schema, const json& value) {
  std::vector<std::string> errors;
  check(schema, schema, value, "$", errors);
  return errors;
}

}  // namespace schema_check
