#pragma once

// Canonical JSON file helpers shared by every artifact loader/saver.

#include <nlohmann/json.hpp>

#include <filesystem>
#include <unistd.h>

#include <atomic>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "navrag/error.hpp"
#include "navrag/geometry.hpp"

namespace navrag {

using json = nlohmann::json;
namespace fs = std::filesystem;

/// Recursively rounds every float to 9 significant digits. Object keys are
/// already sorted because nlohmann::json stores objects in std::map.
inline json canonicalize(const json& j) {
  switch (j.type()) {
    case json::value_t::object: {
      json out = json::object();
      for (auto it = j.begin(); it != j.end(); ++it) out[it.key()] = canonicalize(it.value());
      return out;
    }
    case json::value_t::array: {
      json out = json::array();
      for (const auto& v : j) out.push_back(canonicalize(v));
      return out;
    }
    case json::value_t::number_float:
      return quantize(j.get<double>());
    default:
      return j;
  }
}

/// Canonical text: sorted keys, 9-digit floats, 2-space indent, trailing newline.
inline std::string canonical_dump(const json& j) { return canonicalize(j).dump(2) + "\n"; }

/// Single-line canonical text for JSONL records.
inline std::string canonical_line(const json& j) { return canonicalize(j).dump(); }

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, path.string(), "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes via a temporary file and rename so readers never see a partial file.
inline void write_text_atomic(const fs::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  static std::atomic<std::uint64_t> counter{0};
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, path.string(), "cannot open for writing");
    out << text;
    if (!out) throw Error(ErrorKind::IoError, path.string(), "write failed");
  }
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::IoError, path.string(), "rename failed: " + ec.message());
}

inline json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::SchemaViolation, path.string(), e.what());
  }
}

inline std::vector<json> read_jsonl(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::SchemaViolation, path.string() + ":" + std::to_string(lineno), e.what());
    }
  }
  return out;
}

inline std::string jsonl_text(const std::vector<json>& records) {
  std::string out;
  for (const auto& r : records) {
    out += canonical_line(r);
    out += '\n';
  }
  return out;
}

namespace detail {

/// Field accessors that raise SchemaViolation carrying a JSON pointer.
inline const json& require(const json& obj, const std::string& key, const std::string& pointer) {
  if (!obj.is_object()) throw Error(ErrorKind::SchemaViolation, pointer, "expected object");
  auto it = obj.find(key);
  if (it == obj.end()) throw Error(ErrorKind::SchemaViolation, pointer + "/" + key, "missing field");
  return *it;
}

inline std::string require_string(const json& obj, const std::string& key, const std::string& pointer) {
  const json& v = require(obj, key, pointer);
  if (!v.is_string()) throw Error(ErrorKind::SchemaViolation, pointer + "/" + key, "expected string");
  return v.get<std::string>();
}

inline double require_number(const json& obj, const std::string& key, const std::string& pointer) {
  const json& v = require(obj, key, pointer);
  if (!v.is_number()) throw Error(ErrorKind::SchemaViolation, pointer + "/" + key, "expected number");
  return v.get<double>();
}

inline std::int64_t require_int(const json& obj, const std::string& key, const std::string& pointer) {
  const json& v = require(obj, key, pointer);
  if (!v.is_number_integer()) throw Error(ErrorKind::SchemaViolation, pointer + "/" + key, "expected integer");
  return v.get<std::int64_t>();
}

inline std::vector<std::string> require_string_list(const json& obj, const std::string& key,
                                                    const std::string& pointer) {
  const json& v = require(obj, key, pointer);
  if (!v.is_array()) throw Error(ErrorKind::SchemaViolation, pointer + "/" + key, "expected array");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_string())
      throw Error(ErrorKind::SchemaViolation, pointer + "/" + key + "/" + std::to_string(i), "expected string");
    out.push_back(v[i].get<std::string>());
  }
  return out;
}

inline Point3 parse_point3(const json& v, const std::string& pointer) {
  if (!v.is_array() || v.size() != 3) throw Error(ErrorKind::SchemaViolation, pointer, "expected [x,y,z]");
  for (std::size_t i = 0; i < 3; ++i)
    if (!v[i].is_number()) throw Error(ErrorKind::SchemaViolation, pointer + "/" + std::to_string(i), "expected number");
  Point3 p{quantize(v[0].get<double>()), quantize(v[1].get<double>()), quantize(v[2].get<double>())};
  if (!p.finite()) throw Error(ErrorKind::InvariantViolation, pointer, "non-finite coordinate");
  return p;
}

inline json point_json(const Point3& p) { return json::array({p.x, p.y, p.z}); }

}  // namespace detail
}  // namespace navrag
