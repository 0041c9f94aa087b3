#pragma once

// Versioned prompt templates. Placeholders are written {{name}}; every
// template has a fixed set of required placeholders, checked when the set is
// loaded. Template hashes are stamped into trees and manifests.

#include <map>
#include <set>
#include <string>
#include <vector>

#include "navrag/error.hpp"
#include "navrag/hashing.hpp"
#include "navrag/json_io.hpp"
#include "navrag/llm_gateway.hpp"

namespace navrag {

struct PromptSpec {
  const char* name;
  std::vector<std::string> placeholders;
  const char* text;
};

namespace detail {

inline const std::vector<PromptSpec>& default_prompt_specs() {
  static const std::vector<PromptSpec> specs = {
      {"system", {},
       "You annotate indoor 3D scenes for an embodied navigation dataset. Always answer with a single JSON "
       "object that matches the requested schema and nothing else."},
      {"view", {"view_id", "caption"},
       "Describe the view {{view_id}} of an indoor scene.\n"
       "Observation: {{caption}}\n"
       "Return a description of the view including the spatial relations among the objects, and list each "
       "visible object with its attributes and its functionality."},
      {"viewpoint", {"viewpoint_id", "views"},
       "The viewpoint {{viewpoint_id}} is observed through six views at 60 degree heading intervals.\n"
       "{{views}}\n"
       "Integrate them into one description of the surroundings: the area type, the spatial layout and the "
       "relationships among the objects."},
      {"zone_init", {"viewpoint"},
       "A new functional zone (for example a bedroom or a kitchen) starts at this viewpoint:\n"
       "{{viewpoint}}\n"
       "Give the zone type and a description of the zone."},
      {"zone_membership", {"zone", "viewpoint"},
       "Zone description:\n{{zone}}\n"
       "Candidate viewpoint next to the zone:\n{{viewpoint}}\n"
       "Does the candidate belong to the same functional area as the zone? Answer yes or no."},
      {"zone_update", {"zone", "viewpoint"},
       "Zone description:\n{{zone}}\n"
       "This viewpoint has just joined the zone:\n{{viewpoint}}\n"
       "Update the zone type and description so that they cover every viewpoint of the zone."},
      {"zone_summary", {"viewpoints"},
       "These viewpoints were grouped into one zone:\n{{viewpoints}}\n"
       "Give the zone type and a description of the zone."},
      {"scene", {"zones", "adjacency"},
       "The scene consists of these zones:\n{{zones}}\n"
       "Connected zone pairs: {{adjacency}}\n"
       "Summarize the whole scene concisely and state its overall functionality."},
      {"rough", {"profile", "scene", "history", "day_index", "seq_index"},
       "You are simulating the following person for one day in their home and sending navigation "
       "requests to a household robot.\n"
       "Profile:\n{{profile}}\n"
       "Scene overview:\n{{scene}}\n"
       "Instructions already sent today:\n{{history}}\n"
       "This is day {{day_index}}. Write instruction number {{seq_index}} of the day: one short request that asks the robot to go "
       "somewhere in this scene and do something there, consistent with the person's routine."},
      {"retrieve_zone", {"instruction", "candidates"},
       "Instruction: {{instruction}}\n"
       "Zones of the scene:\n{{candidates}}\n"
       "Choose the zone most likely to contain the destination. Answer with its id."},
      {"retrieve_viewpoint", {"instruction", "zone", "candidates"},
       "Instruction: {{instruction}}\n"
       "Selected zone: {{zone}}\n"
       "Viewpoints of the zone:\n{{candidates}}\n"
       "Choose the viewpoint that is the destination. Answer with its id."},
      {"retrieve_view", {"instruction", "viewpoint", "candidates"},
       "Instruction: {{instruction}}\n"
       "Selected viewpoint: {{viewpoint}}\n"
       "Views and the objects in them:\n{{candidates}}\n"
       "Choose the view that contains the navigation target and the object ids it refers to (possibly none)."},
      {"refine", {"profile", "rough", "zone", "viewpoint", "view", "instance", "affordance"},
       "Profile:\n{{profile}}\n"
       "Rough instruction: {{rough}}\n"
       "$ZONE: {{zone}}\n"
       "$VIEWPOINT: {{viewpoint}}\n"
       "$VIEW: {{view}}\n"
       "$INSTANCE: {{instance}}\n"
       "$AFFORDANCE: {{affordance}}\n"
       "Refine the rough instruction into a precise and comprehensive one that uses the environment "
       "descriptions above. Keep the person's intent."},
  };
  return specs;
}

inline std::set<std::string> placeholders_in(const std::string& text) {
  std::set<std::string> out;
  std::size_t pos = 0;
  while ((pos = text.find("{{", pos)) != std::string::npos) {
    const auto end = text.find("}}", pos + 2);
    if (end == std::string::npos) break;
    out.insert(text.substr(pos + 2, end - pos - 2));
    pos = end + 2;
  }
  return out;
}

}  // namespace detail

class PromptSet {
 public:
  /// The shipped templates.
  PromptSet() {
    for (const auto& s : detail::default_prompt_specs()) {
      required_[s.name] = std::set<std::string>(s.placeholders.begin(), s.placeholders.end());
      set(s.name, s.text);
    }
  }

  /// Defaults overridden by any `<name>.txt` found in `dir`.
  static PromptSet load(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw Error(ErrorKind::MissingFile, dir.string(), "prompt directory not found");
    PromptSet p;
    for (const auto& [name, _] : p.required_) {
      const fs::path file = dir / (name + ".txt");
      if (fs::exists(file)) p.set(name, read_text(file));
    }
    return p;
  }

  void set(const std::string& name, std::string text) {
    auto req = required_.find(name);
    if (req == required_.end()) throw Error(ErrorKind::ConfigError, name, "unknown prompt template");
    const auto found = detail::placeholders_in(text);
    for (const auto& ph : req->second)
      if (!found.count(ph)) throw Error(ErrorKind::ConfigError, name, "template lacks placeholder {{" + ph + "}}");
    for (const auto& ph : found)
      if (!req->second.count(ph)) throw Error(ErrorKind::ConfigError, name, "unknown placeholder {{" + ph + "}}");
    hashes_[name] = sha256_hex(text);
    templates_[name] = std::move(text);
  }

  const std::string& text(const std::string& name) const {
    auto it = templates_.find(name);
    if (it == templates_.end()) throw Error(ErrorKind::ConfigError, name, "unknown prompt template");
    return it->second;
  }

  std::string render(const std::string& name, const std::map<std::string, std::string>& vars) const {
    const std::string& t = text(name);
    std::string out;
    std::size_t pos = 0;
    while (true) {
      const auto open = t.find("{{", pos);
      if (open == std::string::npos) break;
      const auto close = t.find("}}", open + 2);
      if (close == std::string::npos) break;
      out.append(t, pos, open - pos);
      const std::string key = t.substr(open + 2, close - open - 2);
      auto v = vars.find(key);
      if (v == vars.end()) throw Error(ErrorKind::ConfigError, name, "no value for {{" + key + "}}");
      out += v->second;
      pos = close + 2;
    }
    out.append(t, pos, std::string::npos);
    return out;
  }

  const std::map<std::string, std::string>& hashes() const { return hashes_; }

  /// One hash over every template, for provenance stamps.
  std::string combined_hash() const {
    json j = hashes_;
    return sha256_hex(canonical_line(j));
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [n, _] : templates_) out.push_back(n);
    return out;
  }

 private:
  std::map<std::string, std::set<std::string>> required_;
  std::map<std::string, std::string> templates_;
  std::map<std::string, std::string> hashes_;
};

/// System message plus the rendered template; the stage label is the
/// template name. A null schema requests free text.
inline LlmRequest prompt_request(const PromptSet& prompts, const std::string& name,
                                 const std::map<std::string, std::string>& vars, const json& schema,
                                 double temperature, int max_tokens = 512) {
  LlmRequest r;
  r.messages = {{"system", prompts.text("system"), std::nullopt, {}},
                {"user", prompts.render(name, vars), std::nullopt, {}}};
  if (!schema.is_null()) r.response_schema = schema;
  r.temperature = temperature;
  r.max_tokens = max_tokens;
  r.stage = name;
  return r;
}

}  // namespace navrag
