#pragma once

// Zone partitioning by connectivity-ordered growth:
//   seed = node of maximal degree in the graph induced on unassigned nodes
//   (ties: smallest id); the frontier (unassigned neighbours of the zone) is
//   visited by descending induced degree, each candidate judged once by a
//   yes/no membership query; accepted nodes extend the frontier and update the
//   zone description. A closed zone's nodes are removed before the next seed.
// Also the position-only single-linkage baseline.

#include <algorithm>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "navrag/graph_builder.hpp"
#include "navrag/llm_gateway.hpp"
#include "navrag/prompts.hpp"
#include "navrag/scene_model.hpp"

namespace navrag {

struct ZoneQuery {
  std::string zone;
  std::string viewpoint;
  bool verdict = false;
  /// Verdict defaulted to "no" because no valid answer was obtained.
  bool flagged = false;
  friend bool operator==(const ZoneQuery&, const ZoneQuery&) = default;
};

struct ZonePartition {
  /// In creation order; ids zone_0, zone_1, ...; each zone's viewpoints in
  /// join order (seed first).
  std::vector<ZoneNode> zones;
  std::map<std::string, std::string> membership;
  std::vector<ZoneQuery> query_log;
  /// Position-only clustering; zones need not be graph-connected.
  bool baseline = false;
  double baseline_threshold = 0.0;
  friend bool operator==(const ZonePartition&, const ZonePartition&) = default;
};

inline json partition_to_json(const ZonePartition& p) {
  json zones = json::array();
  for (const auto& z : p.zones)
    zones.push_back({{"id", z.id}, {"zone_type", z.zone_type}, {"description", z.description}, {"viewpoints", z.viewpoints}});
  json log = json::array();
  for (const auto& q : p.query_log)
    log.push_back({{"zone", q.zone}, {"viewpoint", q.viewpoint}, {"verdict", q.verdict ? "yes" : "no"}, {"flagged", q.flagged}});
  json j = {{"zones", zones}, {"membership", p.membership}, {"query_log", log}, {"baseline", p.baseline}};
  if (p.baseline) j["baseline_threshold"] = quantize(p.baseline_threshold);
  return j;
}

inline ZonePartition partition_from_json(const json& j) {
  using detail::require;
  using detail::require_string;
  ZonePartition p;
  const json& zones = require(j, "zones", "");
  for (std::size_t i = 0; i < zones.size(); ++i) {
    const std::string ptr = "/zones/" + std::to_string(i);
    p.zones.push_back({require_string(zones[i], "id", ptr), require_string(zones[i], "zone_type", ptr),
                       require_string(zones[i], "description", ptr),
                       detail::require_string_list(zones[i], "viewpoints", ptr)});
  }
  p.membership = require(j, "membership", "").get<std::map<std::string, std::string>>();
  const json& log = require(j, "query_log", "");
  for (std::size_t i = 0; i < log.size(); ++i) {
    const std::string ptr = "/query_log/" + std::to_string(i);
    const std::string verdict = require_string(log[i], "verdict", ptr);
    if (verdict != "yes" && verdict != "no") throw Error(ErrorKind::SchemaViolation, ptr + "/verdict", "expected yes or no");
    p.query_log.push_back({require_string(log[i], "zone", ptr), require_string(log[i], "viewpoint", ptr),
                           verdict == "yes", log[i].value("flagged", false)});
  }
  p.baseline = j.value("baseline", false);
  p.baseline_threshold = j.value("baseline_threshold", 0.0);
  return p;
}

/// Disjoint, exhaustive over the graph, membership consistent with the zone
/// lists, and (unless baseline) every zone induces a connected subgraph.
inline void validate_partition(const ZonePartition& p, const NavGraph& g) {
  std::set<std::string> seen;
  for (std::size_t zi = 0; zi < p.zones.size(); ++zi) {
    const auto& z = p.zones[zi];
    if (z.id != zone_id(zi)) throw Error(ErrorKind::InvariantViolation, z.id, "zones must be numbered in creation order");
    if (z.viewpoints.empty()) throw Error(ErrorKind::InvariantViolation, z.id, "empty zone");
    for (const auto& v : z.viewpoints) {
      if (!g.contains(v)) throw Error(ErrorKind::InvariantViolation, z.id, "unknown viewpoint " + v);
      if (!seen.insert(v).second) throw Error(ErrorKind::InvariantViolation, v, "viewpoint in two zones");
      auto m = p.membership.find(v);
      if (m == p.membership.end() || m->second != z.id)
        throw Error(ErrorKind::InvariantViolation, v, "membership disagrees with zone list");
    }
    if (p.baseline) continue;
    const std::set<std::string> members(z.viewpoints.begin(), z.viewpoints.end());
    std::set<std::string> reached = {z.viewpoints.front()};
    std::vector<std::size_t> stack = {g.index_of(z.viewpoints.front())};
    while (!stack.empty()) {
      const auto u = stack.back();
      stack.pop_back();
      for (const auto& adj : g.neighbors(u)) {
        const auto& id = g.node(adj.node).id;
        if (members.count(id) && reached.insert(id).second) stack.push_back(adj.node);
      }
    }
    if (reached.size() != members.size()) throw Error(ErrorKind::InvariantViolation, z.id, "zone is not connected");
  }
  if (seen.size() != g.size() || p.membership.size() != g.size())
    throw Error(ErrorKind::InvariantViolation, "partition", "partition does not cover every viewpoint");
}

/// Hooks the growth loop calls; `ask` returns {verdict, flagged}.
struct ZoneJudge {
  std::function<void(const std::string& zone, const std::string& seed)> open;
  std::function<std::pair<bool, bool>(const std::string& zone, const std::string& viewpoint)> ask;
  std::function<void(const std::string& zone, const std::string& viewpoint)> accepted;
};

/// The growth loop itself, independent of how verdicts are obtained.
inline ZonePartition grow_zones(const NavGraph& g, const ZoneJudge& judge) {
  ZonePartition p;
  std::vector<bool> remaining(g.size(), true);
  std::size_t left = g.size();
  auto induced_degree = [&](std::size_t u) {
    std::size_t d = 0;
    for (const auto& adj : g.neighbors(u)) d += remaining[adj.node];
    return d;
  };
  // Higher induced degree first, then smaller id.
  auto before = [&](std::size_t a, std::size_t b, const std::vector<std::size_t>& deg) {
    if (deg[a] != deg[b]) return deg[a] > deg[b];
    return g.node(a).id < g.node(b).id;
  };
  while (left > 0) {
    std::vector<std::size_t> deg(g.size(), 0);
    for (std::size_t u = 0; u < g.size(); ++u)
      if (remaining[u]) deg[u] = induced_degree(u);
    std::size_t seed = g.size();
    for (std::size_t u = 0; u < g.size(); ++u)
      if (remaining[u] && (seed == g.size() || before(u, seed, deg))) seed = u;

    ZoneNode zone;
    zone.id = zone_id(p.zones.size());
    zone.viewpoints.push_back(g.node(seed).id);
    if (judge.open) judge.open(zone.id, g.node(seed).id);
    std::vector<bool> in_zone(g.size(), false), rejected(g.size(), false);
    in_zone[seed] = true;
    std::set<std::size_t> frontier;
    auto extend = [&](std::size_t u) {
      for (const auto& adj : g.neighbors(u))
        if (remaining[adj.node] && !in_zone[adj.node] && !rejected[adj.node]) frontier.insert(adj.node);
    };
    extend(seed);
    while (!frontier.empty()) {
      std::vector<std::size_t> order(frontier.begin(), frontier.end());
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return before(a, b, deg); });
      const std::size_t cand = order.front();
      frontier.erase(cand);
      const auto [verdict, flagged] = judge.ask(zone.id, g.node(cand).id);
      p.query_log.push_back({zone.id, g.node(cand).id, verdict, flagged});
      if (!verdict) {
        rejected[cand] = true;
        continue;
      }
      in_zone[cand] = true;
      zone.viewpoints.push_back(g.node(cand).id);
      if (judge.accepted) judge.accepted(zone.id, g.node(cand).id);
      extend(cand);
    }
    for (const auto& v : zone.viewpoints) {
      remaining[g.index_of(v)] = false;
      p.membership[v] = zone.id;
      --left;
    }
    p.zones.push_back(std::move(zone));
  }
  return p;
}

/// Re-runs the growth loop answering each query from `log`. Throws
/// InvariantViolation if the queries asked differ from the log.
inline ZonePartition replay_partition(const NavGraph& g, const std::vector<ZoneQuery>& log) {
  std::size_t next = 0;
  ZoneJudge judge;
  judge.ask = [&](const std::string& zone, const std::string& vp) -> std::pair<bool, bool> {
    if (next >= log.size() || log[next].zone != zone || log[next].viewpoint != vp)
      throw Error(ErrorKind::InvariantViolation, zone + "/" + vp, "query not found at log position " + std::to_string(next));
    const auto& q = log[next++];
    return {q.verdict, q.flagged};
  };
  ZonePartition p = grow_zones(g, judge);
  if (next != log.size()) throw Error(ErrorKind::InvariantViolation, "query_log", "log has unreplayed entries");
  return p;
}

// ---------------------------------------------------------------------------
// LLM-driven partitioning
// ---------------------------------------------------------------------------

/// How a viewpoint is presented to zone-level prompts.
inline std::string viewpoint_text(const ViewpointNode& vp) {
  return vp.id + " | area type: " + vp.area_type + " | layout: " + vp.layout + " | relations: " + vp.relations +
         " | description: " + vp.description;
}

inline std::string zone_text(const ZoneNode& z) { return z.id + " | zone type: " + z.zone_type + " | " + z.description; }

inline const json& zone_schema() {
  static const json s = {{"type", "object"},
                         {"properties",
                          {{"zone_type", {{"type", "string"}, {"minLength", 1}}},
                           {"description", {{"type", "string"}, {"minLength", 1}}}}},
                         {"required", {"zone_type", "description"}},
                         {"additionalProperties", false}};
  return s;
}

inline const json& membership_schema() {
  static const json s = {{"type", "object"},
                         {"properties", {{"verdict", {{"type", "string"}, {"enum", {"yes", "no"}}}}}},
                         {"required", {"verdict"}},
                         {"additionalProperties", false}};
  return s;
}

struct ZoneConfig {
  double temperature = 0.0;
  int max_tokens = 512;
};

inline ZonePartition partition_zones(const NavGraph& g, const std::map<std::string, ViewpointNode>& viewpoints,
                                     LlmGateway& gateway, const PromptSet& prompts, const ZoneConfig& cfg = {}) {
  for (const auto& n : g.nodes())
    if (!viewpoints.count(n.id)) throw Error(ErrorKind::InvariantViolation, n.id, "graph node has no viewpoint annotation");
  std::map<std::string, ZoneNode> described;
  auto vp_text = [&](const std::string& id) { return viewpoint_text(viewpoints.at(id)); };
  auto set_desc = [&](const std::string& zone, const json& j) {
    auto& z = described[zone];
    z.id = zone;
    z.zone_type = j.at("zone_type").get<std::string>();
    z.description = j.at("description").get<std::string>();
  };
  ZoneJudge judge;
  judge.open = [&](const std::string& zone, const std::string& seed) {
    auto r = gateway.complete_json(
        prompt_request(prompts, "zone_init", {{"viewpoint", vp_text(seed)}}, zone_schema(), cfg.temperature, cfg.max_tokens));
    set_desc(zone, *r.parsed);
  };
  judge.ask = [&](const std::string& zone, const std::string& vp) -> std::pair<bool, bool> {
    try {
      auto r = gateway.complete_json(prompt_request(prompts, "zone_membership",
                                                    {{"zone", zone_text(described.at(zone))}, {"viewpoint", vp_text(vp)}},
                                                    membership_schema(), cfg.temperature, cfg.max_tokens));
      return {r.parsed->at("verdict") == "yes", false};
    } catch (const SchemaExhaustedError&) {
      return {false, true};
    }
  };
  judge.accepted = [&](const std::string& zone, const std::string& vp) {
    auto r = gateway.complete_json(prompt_request(prompts, "zone_update",
                                                  {{"zone", zone_text(described.at(zone))}, {"viewpoint", vp_text(vp)}},
                                                  zone_schema(), cfg.temperature, cfg.max_tokens));
    set_desc(zone, *r.parsed);
  };
  ZonePartition p = grow_zones(g, judge);
  for (auto& z : p.zones) {
    z.zone_type = described.at(z.id).zone_type;
    z.description = described.at(z.id).description;
  }
  return p;
}

/// Single-linkage clustering of node positions (merge iff distance <
/// threshold). Zones are ordered by their smallest node index and carry no
/// descriptions until summarize_zones.
inline ZonePartition baseline_cluster_zones(const NavGraph& g, double threshold) {
  if (!(threshold > 0.0)) throw Error(ErrorKind::ConfigError, "baseline_threshold", "must be positive");
  std::vector<Point3> pts;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < g.size(); ++i) {
    pts.push_back(g.node(i).position);
    idx.push_back(i);
  }
  GraphBuildConfig cfg;
  cfg.cluster_threshold = threshold;
  ZonePartition p;
  p.baseline = true;
  p.baseline_threshold = threshold;
  for (const auto& cluster : cluster_viewpoints(pts, idx, cfg)) {
    ZoneNode z;
    z.id = zone_id(p.zones.size());
    for (auto m : cluster.members) {
      z.viewpoints.push_back(g.node(m).id);
      p.membership[g.node(m).id] = z.id;
    }
    p.zones.push_back(std::move(z));
  }
  return p;
}

/// Growth-algorithm zones keep their final running description; zones
/// without one (baseline) get a single summary call over their viewpoints.
inline void summarize_zones(ZonePartition& p, const std::map<std::string, ViewpointNode>& viewpoints,
                            LlmGateway& gateway, const PromptSet& prompts, const ZoneConfig& cfg = {}) {
  for (auto& z : p.zones) {
    if (!z.description.empty()) continue;
    std::string lines;
    for (const auto& v : z.viewpoints) lines += viewpoint_text(viewpoints.at(v)) + "\n";
    auto r = gateway.complete_json(
        prompt_request(prompts, "zone_summary", {{"viewpoints", lines}}, zone_schema(), cfg.temperature, cfg.max_tokens));
    z.zone_type = r.parsed->at("zone_type").get<std::string>();
    z.description = r.parsed->at("description").get<std::string>();
  }
}

/// Zone pairs joined by at least one graph edge, each as (smaller, larger)
/// id, sorted and unique.
inline std::vector<std::pair<std::string, std::string>> zone_adjacency(const NavGraph& g,
                                                                       const std::map<std::string, std::string>& membership) {
  std::set<std::pair<std::string, std::string>> pairs;
  for (const auto& e : g.edges()) {
    const auto& za = membership.at(g.node(e.a).id);
    const auto& zb = membership.at(g.node(e.b).id);
    if (za != zb) pairs.emplace(std::min(za, zb), std::max(za, zb));
  }
  return {pairs.begin(), pairs.end()};
}

}  // namespace navrag
