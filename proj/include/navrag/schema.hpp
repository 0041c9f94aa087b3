#pragma once

// JSON-schema subset used for structured LLM outputs:
//   type (object|array|string|boolean|integer|number), properties, required,
//   additionalProperties:false, enum, items, minItems, maxItems, uniqueItems,
//   minLength.
// validate_schema() checks instances; synthesize_instance() generates a valid
// instance for the mock backend.

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "navrag/hashing.hpp"
#include "navrag/json_io.hpp"

namespace navrag {

/// Returns an error message (with JSON pointer) or nullopt when `instance`
/// satisfies `schema`.
inline std::optional<std::string> validate_schema(const json& schema, const json& instance,
                                                  const std::string& pointer = "") {
  const std::string where = pointer.empty() ? "/" : pointer;
  if (auto one = schema.find("oneOf"); one != schema.end()) {
    std::size_t matches = 0;
    std::string first_error;
    for (const auto& branch : *one) {
      auto err = validate_schema(branch, instance, pointer);
      if (!err) ++matches;
      else if (first_error.empty()) first_error = *err;
    }
    if (matches != 1)
      return where + ": matches " + std::to_string(matches) + " oneOf branches" +
             (matches == 0 ? " (" + first_error + ")" : "");
  }
  if (auto e = schema.find("enum"); e != schema.end()) {
    bool found = false;
    for (const auto& v : *e) found = found || v == instance;
    if (!found) return where + ": value " + instance.dump() + " is not one of " + e->dump();
  }
  const std::string type = schema.value("type", "");
  if (type == "object") {
    if (!instance.is_object()) return where + ": expected object";
    const json props = schema.value("properties", json::object());
    for (const auto& r : schema.value("required", json::array())) {
      if (!instance.contains(r.get<std::string>())) return where + ": missing required property '" + r.get<std::string>() + "'";
    }
    const bool closed = schema.contains("additionalProperties") && schema["additionalProperties"] == false;
    for (auto it = instance.begin(); it != instance.end(); ++it) {
      if (props.contains(it.key())) {
        if (auto err = validate_schema(props[it.key()], it.value(), pointer + "/" + it.key())) return err;
      } else if (closed) {
        return where + ": unexpected property '" + it.key() + "'";
      }
    }
  } else if (type == "array") {
    if (!instance.is_array()) return where + ": expected array";
    if (auto m = schema.find("minItems"); m != schema.end() && instance.size() < m->get<std::size_t>())
      return where + ": fewer than " + m->dump() + " items";
    if (auto m = schema.find("maxItems"); m != schema.end() && instance.size() > m->get<std::size_t>())
      return where + ": more than " + m->dump() + " items";
    if (schema.value("uniqueItems", false)) {
      std::set<std::string> seen;
      for (const auto& v : instance)
        if (!seen.insert(v.dump()).second) return where + ": duplicate item " + v.dump();
    }
    if (auto items = schema.find("items"); items != schema.end())
      for (std::size_t i = 0; i < instance.size(); ++i)
        if (auto err = validate_schema(*items, instance[i], pointer + "/" + std::to_string(i))) return err;
  } else if (type == "string") {
    if (!instance.is_string()) return where + ": expected string";
    if (auto m = schema.find("minLength"); m != schema.end() && instance.get<std::string>().size() < m->get<std::size_t>())
      return where + ": string shorter than " + m->dump();
  } else if (type == "boolean") {
    if (!instance.is_boolean()) return where + ": expected boolean";
  } else if (type == "integer") {
    if (!instance.is_number_integer()) return where + ": expected integer";
  } else if (type == "number") {
    if (!instance.is_number()) return where + ": expected number";
  }
  return std::nullopt;
}

namespace detail {

inline constexpr const char* kMockVocabulary[] = {
    "walk",   "to",     "the",    "kitchen", "bring",  "me",      "a",      "cup",    "of",     "tea",
    "near",   "window", "wooden", "table",   "bright", "living",  "room",   "sofa",   "lamp",   "bedroom",
    "shelf",  "books",  "quiet",  "corner",  "warm",   "hall",    "please", "check",  "plant",  "beside",
    "door",   "open",   "soft",   "chair",   "clean",  "counter", "sink",   "mirror", "desk",   "study",
    "towel",  "fresh",  "dining", "area",    "large",  "small",   "white",  "green",  "stairs", "rug"};

inline std::string mock_words(Rng& rng, std::size_t count) {
  std::string out;
  constexpr std::size_t n = std::size(kMockVocabulary);
  for (std::size_t i = 0; i < count; ++i) {
    if (i) out += ' ';
    out += kMockVocabulary[rng.below(n)];
  }
  return out;
}

}  // namespace detail

/// Generates an instance satisfying `schema`. Strings carry a word count drawn
/// uniformly from [1, 2*verbosity - 1] (mean = verbosity); enums pick a member.
inline json synthesize_instance(const json& schema, Rng& rng, std::size_t verbosity) {
  if (auto one = schema.find("oneOf"); one != schema.end() && !one->empty())
    return synthesize_instance((*one)[rng.below(one->size())], rng, verbosity);
  if (auto e = schema.find("enum"); e != schema.end() && !e->empty()) return (*e)[rng.below(e->size())];
  const std::string type = schema.value("type", "string");
  if (type == "object") {
    json out = json::object();
    const json props = schema.value("properties", json::object());
    for (auto it = props.begin(); it != props.end(); ++it) out[it.key()] = synthesize_instance(it.value(), rng, verbosity);
    return out;
  }
  if (type == "array") {
    const std::size_t lo = schema.value("minItems", std::size_t{0});
    std::size_t hi = schema.value("maxItems", lo + 3);
    const json items = schema.value("items", json::object({{"type", "string"}}));
    json out = json::array();
    if (auto e = items.find("enum"); e != items.end() && schema.value("uniqueItems", false)) {
      hi = std::min<std::size_t>(hi, e->size());
      std::vector<json> pool(e->begin(), e->end());
      rng.shuffle(pool);
      const std::size_t n = lo + (hi > lo ? rng.below(hi - lo + 1) : 0);
      for (std::size_t i = 0; i < n && i < pool.size(); ++i) out.push_back(pool[i]);
      return out;
    }
    const std::size_t n = lo + (hi > lo ? rng.below(hi - lo + 1) : 0);
    for (std::size_t i = 0; i < n; ++i) out.push_back(synthesize_instance(items, rng, verbosity));
    return out;
  }
  if (type == "boolean") return rng.below(2) == 1;
  if (type == "integer") return static_cast<std::int64_t>(rng.below(10));
  if (type == "number") return static_cast<double>(rng.below(1000)) / 10.0;
  const std::size_t v = std::max<std::size_t>(verbosity, 1);
  return detail::mock_words(rng, 1 + rng.below(2 * v - 1));
}

}  // namespace navrag
