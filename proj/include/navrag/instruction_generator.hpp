#pragma once

// Role-simulated instruction generation with hierarchical retrieval:
// rough instruction from the scene overview, then zone -> viewpoint ->
// view+instances selection, then refinement with the retrieved texts.

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "navrag/llm_gateway.hpp"
#include "navrag/parallel.hpp"
#include "navrag/prompts.hpp"
#include "navrag/roles.hpp"
#include "navrag/scene_model.hpp"
#include "navrag/zone_partitioner.hpp"

namespace navrag {

struct GenerationConfig {
  std::vector<UserProfile> roles = default_profiles();
  int instructions_per_day = 50;
  int days_per_role = 1;
  int history_window = 10;
  /// Sampling seed sent with rough and refine requests.
  std::uint64_t rng_seed = 0;
  double generation_temperature = 0.7;
  double retrieval_temperature = 0.0;
  int max_tokens = 256;
  /// Parallel (role, day) simulations.
  int jobs = 8;

  void validate() const {
    if (roles.empty()) throw Error(ErrorKind::ConfigError, "roles", "at least one role is required");
    if (instructions_per_day < 1) throw Error(ErrorKind::ConfigError, "instructions_per_day", "must be >= 1");
    if (days_per_role < 1) throw Error(ErrorKind::ConfigError, "days_per_role", "must be >= 1");
    if (history_window < 0) throw Error(ErrorKind::ConfigError, "history_window", "must be >= 0");
    for (const auto& r : roles) validate_profile(r);
  }

  json to_json() const {
    json ids = json::array();
    for (const auto& r : roles) ids.push_back(r.role_id);
    return {{"roles", ids},
            {"instructions_per_day", instructions_per_day},
            {"days_per_role", days_per_role},
            {"history_window", history_window},
            {"rng_seed", rng_seed},
            {"generation_temperature", quantize(generation_temperature)},
            {"retrieval_temperature", quantize(retrieval_temperature)},
            {"max_tokens", max_tokens}};
  }
};

inline constexpr const char* kNoHistoryMarker = "No prior instructions today.";

inline std::string profile_text(const UserProfile& p) {
  return "Age: " + std::to_string(p.age) + "\nGender: " + p.gender + "\nOccupation: " + p.occupation +
         "\nLifestyle Description: " + p.lifestyle;
}

inline std::string scene_overview(const SceneTree& t) {
  std::string s = "Summary: " + t.scene.summary + "\nFunctionality: " + t.scene.functionality + "\nZones:";
  for (const auto& z : t.scene.zones) s += "\n- " + z + " (" + t.zones.at(z).zone_type + ")";
  return s;
}

/// The last `window` entries of `history`, numbered, or the no-history marker.
inline std::string history_text(const std::vector<std::string>& history, int window) {
  const std::size_t n = std::min(history.size(), static_cast<std::size_t>(std::max(window, 0)));
  if (n == 0) return kNoHistoryMarker;
  std::string s;
  for (std::size_t i = history.size() - n; i < history.size(); ++i)
    s += std::to_string(i + 1) + ". " + history[i] + "\n";
  return s;
}

inline const json& instruction_schema() {
  static const json s = {{"type", "object"},
                         {"properties", {{"instruction", {{"type", "string"}, {"minLength", 1}}}}},
                         {"required", {"instruction"}},
                         {"additionalProperties", false}};
  return s;
}

inline std::string generate_rough(const SceneTree& tree, const UserProfile& profile, int day_index, int seq_index,
                                  const std::vector<std::string>& history, LlmGateway& gateway, const PromptSet& prompts,
                                  const GenerationConfig& cfg) {
  LlmRequest req = prompt_request(prompts, "rough",
                                  {{"profile", profile_text(profile)},
                                   {"scene", scene_overview(tree)},
                                   {"history", history_text(history, cfg.history_window)},
                                   {"day_index", std::to_string(day_index)},
                                   {"seq_index", std::to_string(seq_index)}},
                                  instruction_schema(), cfg.generation_temperature, cfg.max_tokens);
  req.seed = cfg.rng_seed;
  return gateway.complete_json(req).parsed->at("instruction").get<std::string>();
}

struct Choice {
  std::string id;
  std::vector<std::string> instances;
  /// LLM attempts used; 0 when the single candidate was taken directly.
  int attempts = 0;
  bool fallback = false;
};

namespace detail {

inline json id_schema(const std::vector<std::string>& ids) {
  return {{"type", "object"},
          {"properties", {{"id", {{"type", "string"}, {"enum", ids}}}}},
          {"required", {"id"}},
          {"additionalProperties", false}};
}

inline std::string numbered(const std::vector<std::pair<std::string, std::string>>& items) {
  std::string s;
  for (std::size_t i = 0; i < items.size(); ++i)
    s += std::to_string(i + 1) + ". " + items[i].first + ": " + items[i].second + "\n";
  return s;
}

/// One id out of `candidates` (sorted by id); invalid answers are re-prompted
/// by the gateway, then the smallest id is taken and flagged.
inline Choice choose_id(const std::string& stage, std::vector<std::pair<std::string, std::string>> candidates,
                        std::map<std::string, std::string> vars, LlmGateway& gateway, const PromptSet& prompts,
                        const GenerationConfig& cfg) {
  if (candidates.empty()) throw Error(ErrorKind::InvariantViolation, stage, "no candidates");
  std::sort(candidates.begin(), candidates.end());
  if (candidates.size() == 1) return {candidates.front().first, {}, 0, false};
  std::vector<std::string> ids;
  for (const auto& c : candidates) ids.push_back(c.first);
  vars["candidates"] = numbered(candidates);
  try {
    auto r = gateway.complete_json(
        prompt_request(prompts, stage, vars, id_schema(ids), cfg.retrieval_temperature, cfg.max_tokens));
    return {r.parsed->at("id").get<std::string>(), {}, r.attempt_count, false};
  } catch (const SchemaExhaustedError&) {
    return {ids.front(), {}, gateway.config().json_attempts, true};
  }
}

}  // namespace detail

inline Choice retrieve_zone(const std::string& rough, const SceneTree& tree, LlmGateway& gateway,
                            const PromptSet& prompts, const GenerationConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> c;
  for (const auto& [id, z] : tree.zones) c.emplace_back(id, z.zone_type + " | " + z.description);
  return detail::choose_id("retrieve_zone", std::move(c), {{"instruction", rough}}, gateway, prompts, cfg);
}

inline Choice retrieve_viewpoint(const std::string& rough, const SceneTree& tree, const std::string& zone,
                                 LlmGateway& gateway, const PromptSet& prompts, const GenerationConfig& cfg) {
  const ZoneNode& z = tree.zones.at(zone);
  std::vector<std::pair<std::string, std::string>> c;
  for (const auto& v : z.viewpoints) {
    const auto& vp = tree.viewpoints.at(v);
    c.emplace_back(v, vp.area_type + " | " + vp.description);
  }
  return detail::choose_id("retrieve_viewpoint", std::move(c), {{"instruction", rough}, {"zone", zone_text(z)}}, gateway,
                           prompts, cfg);
}

/// One call picks the view and the instances within it.
inline Choice retrieve_view_instance(const std::string& rough, const SceneTree& tree, const std::string& viewpoint,
                                     LlmGateway& gateway, const PromptSet& prompts, const GenerationConfig& cfg) {
  const ViewpointNode& vp = tree.viewpoints.at(viewpoint);
  std::vector<std::string> views = vp.views;
  std::sort(views.begin(), views.end());
  std::string listing;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const ViewNode& v = tree.views.at(views[i]);
    listing += std::to_string(i + 1) + ". " + v.id + ": " + v.description + "\n   objects:";
    if (v.instances.empty()) listing += " none";
    for (const auto& inst : v.instances) {
      listing += "\n   - " + inst + ": " + tree.instances.at(inst).name;
    }
    listing += "\n";
  }
  // One branch per view: the instances must come from the chosen view.
  json branches = json::array();
  for (const auto& id : views) {
    std::vector<std::string> own = tree.views.at(id).instances;
    std::sort(own.begin(), own.end());
    json items = {{"type", "string"}};
    if (!own.empty()) items["enum"] = own;
    json inst = {{"type", "array"}, {"items", items}, {"uniqueItems", true}};
    if (own.empty()) inst["maxItems"] = 0;
    branches.push_back({{"type", "object"},
                        {"properties", {{"view", {{"type", "string"}, {"enum", {id}}}}, {"instances", inst}}},
                        {"required", {"view", "instances"}},
                        {"additionalProperties", false}});
  }
  const json schema = {{"oneOf", branches}};
  try {
    auto r = gateway.complete_json(prompt_request(prompts, "retrieve_view",
                                                  {{"instruction", rough},
                                                   {"viewpoint", viewpoint_text(vp)},
                                                   {"candidates", listing}},
                                                  schema, cfg.retrieval_temperature, cfg.max_tokens));
    Choice c{r.parsed->at("view").get<std::string>(), {}, r.attempt_count, false};
    for (const auto& i : r.parsed->at("instances")) c.instances.push_back(i.get<std::string>());
    std::sort(c.instances.begin(), c.instances.end());
    return c;
  } catch (const SchemaExhaustedError&) {
    return {views.front(), {}, gateway.config().json_attempts, true};
  }
}

inline RetrievalTrace retrieve(const std::string& rough, const SceneTree& tree, LlmGateway& gateway,
                               const PromptSet& prompts, const GenerationConfig& cfg) {
  RetrievalTrace t;
  const Choice z = retrieve_zone(rough, tree, gateway, prompts, cfg);
  const Choice vp = retrieve_viewpoint(rough, tree, z.id, gateway, prompts, cfg);
  const Choice v = retrieve_view_instance(rough, tree, vp.id, gateway, prompts, cfg);
  t.zone = z.id;
  t.viewpoint = vp.id;
  t.view = v.id;
  t.instances = v.instances;
  t.attempts = {{"zone", z.attempts}, {"viewpoint", vp.attempts}, {"view", v.attempts}};
  if (z.fallback) t.fallbacks.push_back("zone");
  if (vp.fallback) t.fallbacks.push_back("viewpoint");
  if (v.fallback) t.fallbacks.push_back("view");
  return t;
}

/// Empty instance lists fill $INSTANCE and $AFFORDANCE with "none".
inline std::string refine_instruction(const std::string& rough, const RetrievalTrace& trace, const SceneTree& tree,
                                      const UserProfile& profile, LlmGateway& gateway, const PromptSet& prompts,
                                      const GenerationConfig& cfg) {
  std::string instances, affordances;
  for (const auto& id : trace.instances) {
    const auto& inst = tree.instances.at(id);
    instances += (instances.empty() ? "" : "; ") + inst.name + " (" + inst.attributes + ")";
    affordances += (affordances.empty() ? "" : "; ") + inst.name + ": " + inst.functionality;
  }
  const auto& z = tree.zones.at(trace.zone);
  const auto& vp = tree.viewpoints.at(trace.viewpoint);
  LlmRequest req = prompt_request(prompts, "refine",
                                  {{"profile", profile_text(profile)},
                                   {"rough", rough},
                                   {"zone", z.zone_type + ": " + z.description},
                                   {"viewpoint", vp.area_type + ": " + vp.description},
                                   {"view", tree.views.at(trace.view).description},
                                   {"instance", instances.empty() ? "none" : instances},
                                   {"affordance", affordances.empty() ? "none" : affordances}},
                                  instruction_schema(), cfg.generation_temperature, cfg.max_tokens);
  req.seed = cfg.rng_seed;
  return gateway.complete_json(req).parsed->at("instruction").get<std::string>();
}

struct DayResult {
  std::vector<InstructionSample> samples;
  /// Set when the day was abandoned; samples is then empty.
  std::optional<std::string> abort_reason;
};

/// Sequential rough -> retrieval -> refine loop for one (role, day). A
/// SchemaExhausted failure discards the partial day.
inline DayResult simulate_day(const SceneTree& tree, const UserProfile& profile, int day_index, LlmGateway& gateway,
                              const PromptSet& prompts, const GenerationConfig& cfg) {
  DayResult out;
  std::vector<std::string> history;
  try {
    for (int seq = 0; seq < cfg.instructions_per_day; ++seq) {
      InstructionSample s;
      s.sample_id = make_sample_id(tree.scene_id, profile.role_id, day_index, seq);
      s.scene_id = tree.scene_id;
      s.role_id = profile.role_id;
      s.day_index = day_index;
      s.seq_index = seq;
      s.rough_text = generate_rough(tree, profile, day_index, seq, history, gateway, prompts, cfg);
      s.trace = retrieve(s.rough_text, tree, gateway, prompts, cfg);
      s.refined_text = refine_instruction(s.rough_text, s.trace, tree, profile, gateway, prompts, cfg);
      s.token_count = whitespace_token_count(s.refined_text);
      s.destination_viewpoint = s.trace.viewpoint;
      history.push_back(s.refined_text);
      out.samples.push_back(std::move(s));
    }
  } catch (const SchemaExhaustedError& e) {
    out.samples.clear();
    out.abort_reason = std::string(e.what());
  }
  return out;
}

struct GenerationResult {
  /// Sorted by sample_id.
  std::vector<InstructionSample> samples;
  /// "role_id/day" -> reason.
  std::map<std::string, std::string> aborted_days;
  std::size_t fallback_steps = 0;
  std::size_t retrieval_steps = 0;

  double fallback_fraction() const {
    return retrieval_steps == 0 ? 0.0 : static_cast<double>(fallback_steps) / static_cast<double>(retrieval_steps);
  }
};

inline GenerationResult generate_scene(const SceneTree& tree, LlmGateway& gateway, const PromptSet& prompts,
                                       const GenerationConfig& cfg) {
  cfg.validate();
  validate_tree(tree);
  struct Task {
    const UserProfile* role;
    int day;
  };
  std::vector<Task> tasks;
  for (const auto& r : cfg.roles)
    for (int d = 0; d < cfg.days_per_role; ++d) tasks.push_back({&r, d});
  std::vector<DayResult> days(tasks.size());
  parallel_for(tasks.size(), cfg.jobs, [&](std::size_t i) {
    days[i] = simulate_day(tree, *tasks[i].role, tasks[i].day, gateway, prompts, cfg);
  });
  GenerationResult out;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (days[i].abort_reason) {
      char key[64];
      std::snprintf(key, sizeof key, "/d%03d", tasks[i].day);
      out.aborted_days[tasks[i].role->role_id + key] = *days[i].abort_reason;
    }
    for (auto& s : days[i].samples) {
      out.retrieval_steps += 3;
      out.fallback_steps += s.trace.fallbacks.size();
      out.samples.push_back(std::move(s));
    }
  }
  std::sort(out.samples.begin(), out.samples.end(),
            [](const InstructionSample& a, const InstructionSample& b) { return a.sample_id < b.sample_id; });
  return out;
}

}  // namespace navrag
