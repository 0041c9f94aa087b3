#pragma once

// Bottom-up scene tree construction: views (with object instances), then
// viewpoints, then zones (zone_partitioner), then the scene node.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "navrag/llm_gateway.hpp"
#include "navrag/parallel.hpp"
#include "navrag/prompts.hpp"
#include "navrag/scene_model.hpp"
#include "navrag/zone_partitioner.hpp"

namespace navrag {

struct AnnotatorConfig {
  double temperature = 0.0;
  int max_tokens = 768;
  /// Parallel workers for the view and viewpoint layers.
  int jobs = 8;
  ZoneConfig zones;
  /// When set, zones come from position-only clustering at this threshold.
  std::optional<double> baseline_threshold;
};

inline const json& view_schema() {
  static const json object = {{"type", "object"},
                              {"properties",
                               {{"name", {{"type", "string"}, {"minLength", 1}}},
                                {"attributes", {{"type", "string"}}},
                                {"functionality", {{"type", "string"}}}}},
                              {"required", {"name", "attributes", "functionality"}},
                              {"additionalProperties", false}};
  static const json s = {{"type", "object"},
                         {"properties",
                          {{"description", {{"type", "string"}, {"minLength", 1}}},
                           {"objects", {{"type", "array"}, {"items", object}}}}},
                         {"required", {"description", "objects"}},
                         {"additionalProperties", false}};
  return s;
}

inline const json& viewpoint_schema() {
  static const json s = {{"type", "object"},
                         {"properties",
                          {{"area_type", {{"type", "string"}, {"minLength", 1}}},
                           {"layout", {{"type", "string"}}},
                           {"relations", {{"type", "string"}}},
                           {"description", {{"type", "string"}, {"minLength", 1}}}}},
                         {"required", {"area_type", "layout", "relations", "description"}},
                         {"additionalProperties", false}};
  return s;
}

inline const json& scene_schema() {
  static const json s = {{"type", "object"},
                         {"properties",
                          {{"summary", {{"type", "string"}, {"minLength", 1}}},
                           {"functionality", {{"type", "string"}, {"minLength", 1}}}}},
                         {"required", {"summary", "functionality"}},
                         {"additionalProperties", false}};
  return s;
}

struct AnnotatedView {
  ViewNode view;
  std::vector<InstanceNode> instances;
};

namespace detail {

template <typename Fn>
auto with_entity(const std::string& entity, Fn&& fn) {
  try {
    return fn();
  } catch (const SchemaExhaustedError& e) {
    throw SchemaExhaustedError(entity, e.what(), e.attempts());
  }
}

}  // namespace detail

/// `view_id` is vp_<i>_view_<k>. Objects with a repeated name within the
/// view are merged into the first.
inline AnnotatedView annotate_view(const std::string& view_id, const std::string& parent_viewpoint, const ViewRecord& rec,
                                   const fs::path& image_root, LlmGateway& gateway, const PromptSet& prompts,
                                   const AnnotatorConfig& cfg = {}) {
  if (!rec.caption && !rec.image_ref) throw Error(ErrorKind::SchemaViolation, view_id, "view needs a caption or image");
  const std::string observation = rec.caption ? *rec.caption : "see the attached image";
  LlmRequest req = prompt_request(prompts, "view", {{"view_id", view_id}, {"caption", observation}}, view_schema(),
                                  cfg.temperature, cfg.max_tokens);
  if (rec.image_ref) {
    req.messages.back().image_ref = rec.image_ref;
    req.messages.back().image_root = image_root;
  }
  const json out = *detail::with_entity(view_id, [&] { return gateway.complete_json(req); }).parsed;
  AnnotatedView av;
  av.view.id = view_id;
  av.view.description = out.at("description").get<std::string>();
  av.view.parent_viewpoint = parent_viewpoint;
  std::set<std::string> names;
  for (const auto& o : out.at("objects")) {
    const std::string name = o.at("name").get<std::string>();
    if (!names.insert(name).second) continue;
    const std::string id = instance_id(view_id, av.instances.size());
    av.instances.push_back({id, name, o.at("attributes").get<std::string>(), o.at("functionality").get<std::string>(), view_id});
    av.view.instances.push_back(id);
  }
  return av;
}

inline std::string view_text(const AnnotatedView& v) {
  std::string s = v.view.id + ": " + v.view.description + "\n  objects:";
  if (v.instances.empty()) s += " none";
  for (const auto& i : v.instances) s += "\n  - " + i.name + " (" + i.attributes + "; " + i.functionality + ")";
  return s;
}

/// Consumes both the view descriptions and their object lists.
inline ViewpointNode annotate_viewpoint(const std::string& viewpoint_id, const std::vector<AnnotatedView>& views,
                                        LlmGateway& gateway, const PromptSet& prompts, const AnnotatorConfig& cfg = {}) {
  if (views.size() != static_cast<std::size_t>(kViewsPerViewpoint))
    throw Error(ErrorKind::ArityError, viewpoint_id,
                "expected " + std::to_string(kViewsPerViewpoint) + " views, got " + std::to_string(views.size()));
  std::string listing;
  for (const auto& v : views) listing += view_text(v) + "\n";
  const json out = *detail::with_entity(viewpoint_id, [&] {
                      return gateway.complete_json(prompt_request(prompts, "viewpoint",
                                                                  {{"viewpoint_id", viewpoint_id}, {"views", listing}},
                                                                  viewpoint_schema(), cfg.temperature, cfg.max_tokens));
                    }).parsed;
  ViewpointNode vp;
  vp.id = viewpoint_id;
  vp.area_type = out.at("area_type").get<std::string>();
  vp.layout = out.at("layout").get<std::string>();
  vp.relations = out.at("relations").get<std::string>();
  vp.description = out.at("description").get<std::string>();
  for (const auto& v : views) vp.views.push_back(v.view.id);
  return vp;
}

/// Adjacency is stored as given; the LLM supplies summary and functionality.
inline SceneNode annotate_scene(const std::vector<ZoneNode>& zones,
                                const std::vector<std::pair<std::string, std::string>>& adjacency, LlmGateway& gateway,
                                const PromptSet& prompts, const AnnotatorConfig& cfg = {}) {
  std::string zone_lines, adj;
  for (const auto& z : zones) zone_lines += zone_text(z) + "\n";
  for (const auto& [a, b] : adjacency) adj += (adj.empty() ? "" : ", ") + a + " - " + b;
  if (adj.empty()) adj = "none";
  const json out = *detail::with_entity("scene", [&] {
                      return gateway.complete_json(prompt_request(prompts, "scene", {{"zones", zone_lines}, {"adjacency", adj}},
                                                                  scene_schema(), cfg.temperature, cfg.max_tokens));
                    }).parsed;
  SceneNode s;
  for (const auto& z : zones) s.zones.push_back(z.id);
  s.adjacency = adjacency;
  s.summary = out.at("summary").get<std::string>();
  s.functionality = out.at("functionality").get<std::string>();
  return s;
}

/// The bundle views of graph node `n`: views keyed by the node id, else
/// those of its raw sample points (sp_<m>) in ascending member order.
inline std::vector<ViewRecord> views_for_node(const SceneBundle& b, const GraphNode& n) {
  if (auto it = b.views.find(n.id); it != b.views.end()) return it->second;
  for (auto m : n.members)
    if (auto it = b.views.find(sample_point_id(m)); it != b.views.end()) return it->second;
  return {};
}

inline void stamp_meta(SceneTree& t, const LlmGateway& gateway, const PromptSet& prompts) {
  t.meta["model"] = gateway.model();
  t.meta["prompts"] = prompts.combined_hash();
  for (const auto& [name, hash] : prompts.hashes()) t.meta["prompt." + name] = hash;
}

/// View, instance and viewpoint layers; zones and scene left empty.
inline SceneTree annotate_layers(const SceneBundle& bundle, const NavGraph& graph, LlmGateway& gateway,
                                 const PromptSet& prompts, const AnnotatorConfig& cfg = {}) {
  struct Job {
    std::size_t node;
    ViewRecord rec;
  };
  std::vector<Job> jobs;
  std::vector<std::size_t> first_job(graph.size() + 1, 0);
  for (std::size_t i = 0; i < graph.size(); ++i) {
    first_job[i] = jobs.size();
    auto views = views_for_node(bundle, graph.node(i));
    std::sort(views.begin(), views.end(), [](const ViewRecord& a, const ViewRecord& b) { return a.view_index < b.view_index; });
    for (auto& v : views) jobs.push_back({i, std::move(v)});
  }
  first_job[graph.size()] = jobs.size();

  std::vector<AnnotatedView> annotated(jobs.size());
  parallel_for(jobs.size(), cfg.jobs, [&](std::size_t k) {
    const auto& vp = graph.node(jobs[k].node).id;
    annotated[k] = annotate_view(view_id(vp, jobs[k].rec.view_index), vp, jobs[k].rec, bundle.base_dir, gateway, prompts, cfg);
  });

  std::vector<ViewpointNode> vps(graph.size());
  parallel_for(graph.size(), cfg.jobs, [&](std::size_t i) {
    std::vector<AnnotatedView> mine(annotated.begin() + static_cast<std::ptrdiff_t>(first_job[i]),
                                    annotated.begin() + static_cast<std::ptrdiff_t>(first_job[i + 1]));
    vps[i] = annotate_viewpoint(graph.node(i).id, mine, gateway, prompts, cfg);
  });

  SceneTree t;
  t.scene_id = bundle.scene_id;
  for (auto& av : annotated) {
    for (auto& inst : av.instances) t.instances.emplace(inst.id, std::move(inst));
    t.views.emplace(av.view.id, std::move(av.view));
  }
  for (auto& vp : vps) t.viewpoints.emplace(vp.id, std::move(vp));
  stamp_meta(t, gateway, prompts);
  return t;
}

inline void save_layers(const SceneTree& layers, const fs::path& path) {
  write_text_atomic(path, canonical_dump(tree_to_json(layers)));
}

inline SceneTree load_layers(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::MissingFile, path.string(), "layers file not found");
  return tree_from_json(read_json(path), false);
}

/// Growth-algorithm zones, or summarized baseline clusters when
/// cfg.baseline_threshold is set.
inline ZonePartition make_partition(const NavGraph& graph, const std::map<std::string, ViewpointNode>& viewpoints,
                                    LlmGateway& gateway, const PromptSet& prompts, const AnnotatorConfig& cfg = {}) {
  ZonePartition p;
  if (cfg.baseline_threshold) {
    p = baseline_cluster_zones(graph, *cfg.baseline_threshold);
    summarize_zones(p, viewpoints, gateway, prompts, cfg.zones);
  } else {
    p = partition_zones(graph, viewpoints, gateway, prompts, cfg.zones);
  }
  validate_partition(p, graph);
  return p;
}

/// Attaches zones to the layers and annotates the scene node. Any zone
/// layer already present in `layers` is replaced.
inline SceneTree assemble_tree(SceneTree layers, const ZonePartition& partition, const NavGraph& graph,
                               LlmGateway& gateway, const PromptSet& prompts, const AnnotatorConfig& cfg = {}) {
  layers.zones.clear();
  layers.scene = {};
  layers.meta.erase("zones");
  for (auto& [_, vp] : layers.viewpoints) vp.parent_zone.clear();
  for (const auto& z : partition.zones) {
    layers.zones[z.id] = z;
    for (const auto& v : z.viewpoints) layers.viewpoints.at(v).parent_zone = z.id;
  }
  layers.scene = annotate_scene(partition.zones, zone_adjacency(graph, partition.membership), gateway, prompts, cfg);
  if (partition.baseline) layers.meta["zones"] = "baseline";
  validate_tree(layers);
  return layers;
}

struct TreeBuild {
  SceneTree tree;
  ZonePartition partition;
};

inline TreeBuild build_tree(const SceneBundle& bundle, const NavGraph& graph, LlmGateway& gateway,
                            const PromptSet& prompts, const AnnotatorConfig& cfg = {}) {
  SceneTree layers = annotate_layers(bundle, graph, gateway, prompts, cfg);
  ZonePartition partition = make_partition(graph, layers.viewpoints, gateway, prompts, cfg);
  SceneTree tree = assemble_tree(std::move(layers), partition, graph, gateway, prompts, cfg);
  return {std::move(tree), std::move(partition)};
}

}  // namespace navrag
