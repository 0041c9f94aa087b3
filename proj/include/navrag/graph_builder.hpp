#pragma once

// Navigation-graph construction from a SceneBundle:
//   filter_samples -> cluster_viewpoints -> connect_edges -> repair_connectivity.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "navrag/error.hpp"
#include "navrag/hashing.hpp"
#include "navrag/occupancy.hpp"
#include "navrag/scene_model.hpp"

namespace navrag {

struct GraphBuildConfig {
  double min_separation = 0.4;
  double cluster_threshold = 1.0;
  double edge_radius = 5.0;
  int max_degree = 5;
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (!(min_separation > 0) || !(cluster_threshold > 0) || !(edge_radius > 0))
      throw Error(ErrorKind::ConfigError, "graph", "all distances must be > 0");
    if (max_degree < 1) throw Error(ErrorKind::ConfigError, "graph", "max_degree must be >= 1");
  }

  json to_json() const {
    return {{"min_separation", min_separation},
            {"cluster_threshold", cluster_threshold},
            {"edge_radius", edge_radius},
            {"max_degree", max_degree},
            {"rng_seed", rng_seed}};
  }
};

struct BuildLog {
  /// Bundle sample indices surviving the separation filter.
  std::vector<std::size_t> kept_samples;
  std::size_t candidate_edges = 0;
  std::vector<std::pair<std::string, std::string>> repair_edges;
  /// Nodes whose degree exceeds max_degree because of a repair edge.
  std::vector<std::string> over_cap_nodes;
  std::vector<std::string> dropped_nodes;

  json to_json() const {
    json rep = json::array();
    for (const auto& [a, b] : repair_edges) rep.push_back(json::array({a, b}));
    return {{"kept_samples", kept_samples},     {"candidate_edges", candidate_edges},
            {"repair_edges", rep},              {"over_cap_nodes", over_cap_nodes},
            {"dropped_nodes", dropped_nodes}};
  }
};

namespace detail {

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), std::size_t{0}); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

/// Uniform hash grid over 3D points for radius queries.
class SpatialHash {
 public:
  SpatialHash(std::span<const Point3> points, double cell) : points_(points), cell_(cell) {
    for (std::size_t i = 0; i < points.size(); ++i) buckets_[key(points[i])].push_back(i);
  }

  /// Calls fn(j) for every j with distance(points[i], points[j]) possibly
  /// <= cell (candidates from the 27 surrounding buckets).
  template <typename Fn>
  void for_near(const Point3& p, Fn&& fn) const {
    const auto [kx, ky, kz] = key(p);
    for (std::int64_t dx = -1; dx <= 1; ++dx)
      for (std::int64_t dy = -1; dy <= 1; ++dy)
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          auto it = buckets_.find({kx + dx, ky + dy, kz + dz});
          if (it == buckets_.end()) continue;
          for (auto j : it->second) fn(j);
        }
  }

 private:
  using Cell = std::tuple<std::int64_t, std::int64_t, std::int64_t>;

  Cell key(const Point3& p) const {
    return {static_cast<std::int64_t>(std::floor(p.x / cell_)), static_cast<std::int64_t>(std::floor(p.y / cell_)),
            static_cast<std::int64_t>(std::floor(p.z / cell_))};
  }

  std::span<const Point3> points_;
  double cell_;
  std::map<Cell, std::vector<std::size_t>> buckets_;
};

}  // namespace detail

/// Greedy scan in input order: a point is kept iff its geodesic distance to
/// every already-kept point exceeds min_separation. Returns kept indices.
inline std::vector<std::size_t> filter_samples(std::span<const Point3> points, const GraphBuildConfig& config,
                                               const OccupancyGrid* occupancy = nullptr) {
  std::vector<std::size_t> kept;
  if (!occupancy) {
    std::unordered_map<std::uint64_t, std::vector<std::size_t>> buckets;
    const double cell = config.min_separation;
    auto coord = [&](double v) { return static_cast<std::int64_t>(std::floor(v / cell)); };
    auto pack = [](std::int64_t x, std::int64_t y, std::int64_t z) {
      return splitmix64(static_cast<std::uint64_t>(x) * 0x9E3779B1ULL ^ static_cast<std::uint64_t>(y) * 0x85EBCA77ULL ^
                        static_cast<std::uint64_t>(z) * 0xC2B2AE3DULL);
    };
    for (std::size_t i = 0; i < points.size(); ++i) {
      const Point3& p = points[i];
      const auto kx = coord(p.x), ky = coord(p.y), kz = coord(p.z);
      bool ok = true;
      for (std::int64_t dx = -1; dx <= 1 && ok; ++dx)
        for (std::int64_t dy = -1; dy <= 1 && ok; ++dy)
          for (std::int64_t dz = -1; dz <= 1 && ok; ++dz) {
            auto it = buckets.find(pack(kx + dx, ky + dy, kz + dz));
            if (it == buckets.end()) continue;
            for (auto j : it->second)
              if (!(distance(p, points[j]) > config.min_separation)) {
                ok = false;
                break;
              }
          }
      if (ok) {
        kept.push_back(i);
        buckets[pack(kx, ky, kz)].push_back(i);
      }
    }
    return kept;
  }

  // Grid path: kept points bucketed by cell; a bounded search from each
  // candidate reaches every kept point that could be too close.
  GridGeodesic geo(*occupancy);
  std::map<std::pair<int, int>, std::vector<std::size_t>> by_cell;
  const double reach = config.min_separation + 2.0 * occupancy->cell_size();
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Point3& p = points[i];
    bool ok = true;
    if (geo.run(p, config.min_separation)) {
      const auto [pr, pc] = occupancy->cell_of(p.x, p.y);
      const int span = static_cast<int>(std::ceil(reach / occupancy->cell_size()));
      for (int r = pr - span; r <= pr + span && ok; ++r)
        for (int c = pc - span; c <= pc + span && ok; ++c) {
          auto it = by_cell.find({r, c});
          if (it == by_cell.end()) continue;
          for (auto j : it->second)
            if (!(geo.distance_to(points[j]) > config.min_separation)) {
              ok = false;
              break;
            }
        }
    }
    if (ok) {
      kept.push_back(i);
      by_cell[occupancy->cell_of(p.x, p.y)].push_back(i);
    }
  }
  return kept;
}

/// Single-linkage agglomerative clustering: clusters merge while their
/// closest members are strictly nearer than cluster_threshold. Each cluster
/// becomes a node at its (quantized) centroid; ids vp_<k> follow the order of
/// each cluster's smallest member. `members` holds the caller's indices for
/// each point (e.g. bundle sample indices).
inline std::vector<GraphNode> cluster_viewpoints(std::span<const Point3> points, std::span<const std::size_t> members,
                                                 const GraphBuildConfig& config) {
  if (members.size() != points.size())
    throw Error(ErrorKind::InvariantViolation, "cluster", "members/points size mismatch");
  detail::UnionFind uf(points.size());
  detail::SpatialHash hash(points, config.cluster_threshold);
  for (std::size_t i = 0; i < points.size(); ++i)
    hash.for_near(points[i], [&](std::size_t j) {
      if (j > i && distance(points[i], points[j]) < config.cluster_threshold) uf.unite(i, j);
    });
  std::map<std::size_t, std::vector<std::size_t>> groups;  // root (= smallest index) -> members
  for (std::size_t i = 0; i < points.size(); ++i) groups[uf.find(i)].push_back(i);
  std::vector<GraphNode> nodes;
  nodes.reserve(groups.size());
  for (const auto& [root, idx] : groups) {
    Point3 c{};
    for (auto i : idx) {
      c.x += points[i].x;
      c.y += points[i].y;
      c.z += points[i].z;
    }
    const double n = static_cast<double>(idx.size());
    GraphNode node;
    node.id = viewpoint_id(nodes.size());
    node.position = quantize(Point3{c.x / n, c.y / n, c.z / n});
    for (auto i : idx) node.members.push_back(members[i]);
    nodes.push_back(std::move(node));
  }
  return nodes;
}

/// Proximity edges: pairs within edge_radius (and with clear line of sight
/// when a grid is present), visited in a seeded random order and accepted
/// while both endpoints have degree < max_degree.
inline std::vector<GraphEdge> connect_edges(std::span<const GraphNode> nodes, const GraphBuildConfig& config,
                                            const OccupancyGrid* occupancy = nullptr,
                                            std::size_t* candidate_count = nullptr) {
  std::vector<Point3> pos;
  pos.reserve(nodes.size());
  for (const auto& n : nodes) pos.push_back(n.position);
  std::vector<std::pair<std::size_t, std::size_t>> candidates;
  detail::SpatialHash hash(pos, config.edge_radius);
  for (std::size_t i = 0; i < pos.size(); ++i) {
    std::vector<std::size_t> near;
    hash.for_near(pos[i], [&](std::size_t j) {
      if (j > i && distance(pos[i], pos[j]) <= config.edge_radius) near.push_back(j);
    });
    std::sort(near.begin(), near.end());
    for (auto j : near)
      if (!occupancy || line_of_sight(*occupancy, pos[i], pos[j])) candidates.emplace_back(i, j);
  }
  if (candidate_count) *candidate_count = candidates.size();
  Rng rng(derive_seed(config.rng_seed, "connect_edges"));
  rng.shuffle(candidates);
  std::vector<int> degree(nodes.size(), 0);
  std::vector<GraphEdge> edges;
  for (const auto& [a, b] : candidates) {
    if (degree[a] >= config.max_degree || degree[b] >= config.max_degree) continue;
    ++degree[a];
    ++degree[b];
    edges.push_back({a, b, distance(pos[a], pos[b]), false});
  }
  std::sort(edges.begin(), edges.end(),
            [](const GraphEdge& x, const GraphEdge& y) { return std::tie(x.a, x.b) < std::tie(y.a, y.b); });
  return edges;
}

struct RepairResult {
  NavGraph graph;
  std::vector<std::pair<std::string, std::string>> repair_edges;
  std::vector<std::string> over_cap_nodes;
  std::vector<std::string> dropped_nodes;
};

/// Joins components until the graph is connected. Each round adds the
/// globally shortest legal inter-component pair: line of sight must be clear
/// when a grid exists, and pairs whose endpoints are both below max_degree are
/// preferred; only when none exists may an endpoint go to max_degree + 1.
/// Components that cannot be joined legally are dropped, keeping the largest.
inline RepairResult repair_connectivity(std::vector<GraphNode> nodes, std::vector<GraphEdge> edges,
                                        const GraphBuildConfig& config, const OccupancyGrid* occupancy = nullptr) {
  RepairResult result;
  const std::size_t n = nodes.size();
  std::vector<int> degree(n, 0);
  detail::UnionFind uf(n);
  for (const auto& e : edges) {
    ++degree[e.a];
    ++degree[e.b];
    uf.unite(e.a, e.b);
  }
  std::map<std::pair<std::size_t, std::size_t>, bool> los_cache;
  auto los = [&](std::size_t a, std::size_t b) {
    if (!occupancy) return true;
    auto [it, inserted] = los_cache.try_emplace({a, b}, false);
    if (inserted) it->second = line_of_sight(*occupancy, nodes[a].position, nodes[b].position);
    return it->second;
  };
  while (true) {
    std::size_t roots = 0;
    for (std::size_t i = 0; i < n; ++i) roots += uf.find(i) == i;
    if (roots <= 1) break;
    // Cross-component pairs ordered by (tier, length, a, b); first legal wins.
    struct Cand {
      int tier;
      double len;
      std::size_t a, b;
    };
    std::vector<Cand> cands;
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b) {
        if (uf.find(a) == uf.find(b)) continue;
        const int tier = (degree[a] < config.max_degree && degree[b] < config.max_degree) ? 0
                         : (degree[a] <= config.max_degree && degree[b] <= config.max_degree) ? 1
                                                                                               : 2;
        if (tier == 2) continue;
        cands.push_back({tier, distance(nodes[a].position, nodes[b].position), a, b});
      }
    std::sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) {
      return std::tie(x.tier, x.len, x.a, x.b) < std::tie(y.tier, y.len, y.a, y.b);
    });
    const Cand* chosen = nullptr;
    for (const auto& c : cands)
      if (los(c.a, c.b)) {
        chosen = &c;
        break;
      }
    if (!chosen) break;
    edges.push_back({chosen->a, chosen->b, chosen->len, true});
    ++degree[chosen->a];
    ++degree[chosen->b];
    uf.unite(chosen->a, chosen->b);
    result.repair_edges.emplace_back(nodes[chosen->a].id, nodes[chosen->b].id);
  }

  // Keep the largest component (ties: the one holding the smallest index).
  std::map<std::size_t, std::size_t> comp_size;
  for (std::size_t i = 0; i < n; ++i) ++comp_size[uf.find(i)];
  std::size_t keep_root = 0, best = 0;
  for (const auto& [root, size] : comp_size)
    if (size > best) {
      best = size;
      keep_root = root;
    }
  std::vector<std::size_t> remap(n, SIZE_MAX);
  std::vector<GraphNode> kept_nodes;
  for (std::size_t i = 0; i < n; ++i) {
    if (uf.find(i) != keep_root) {
      result.dropped_nodes.push_back(nodes[i].id);
      continue;
    }
    remap[i] = kept_nodes.size();
    kept_nodes.push_back(std::move(nodes[i]));
  }
  std::vector<GraphEdge> kept_edges;
  for (const auto& e : edges)
    if (remap[e.a] != SIZE_MAX && remap[e.b] != SIZE_MAX) kept_edges.push_back({remap[e.a], remap[e.b], 0.0, e.repair});
  std::erase_if(result.repair_edges, [&](const auto& pr) {
    return std::find(result.dropped_nodes.begin(), result.dropped_nodes.end(), pr.first) != result.dropped_nodes.end();
  });
  result.graph = NavGraph(std::move(kept_nodes), std::move(kept_edges));
  for (std::size_t i = 0; i < result.graph.size(); ++i)
    if (result.graph.degree(i) > static_cast<std::size_t>(config.max_degree))
      result.over_cap_nodes.push_back(result.graph.node(i).id);
  return result;
}

struct BuildResult {
  NavGraph graph;
  BuildLog log;
};

/// filter -> cluster -> connect -> repair. Deterministic for a fixed seed.
inline BuildResult build_graph(const SceneBundle& bundle, const GraphBuildConfig& config) {
  config.validate();
  const OccupancyGrid* occ = bundle.occupancy ? &*bundle.occupancy : nullptr;
  BuildResult out;
  out.log.kept_samples = filter_samples(bundle.sample_points, config, occ);
  std::vector<Point3> kept;
  kept.reserve(out.log.kept_samples.size());
  for (auto i : out.log.kept_samples) kept.push_back(bundle.sample_points[i]);
  auto nodes = cluster_viewpoints(kept, out.log.kept_samples, config);
  if (nodes.empty()) throw Error(ErrorKind::EmptyScene, bundle.scene_id, "no viewpoints survive filtering");
  auto edges = connect_edges(nodes, config, occ, &out.log.candidate_edges);
  auto repaired = repair_connectivity(std::move(nodes), std::move(edges), config, occ);
  out.graph = std::move(repaired.graph);
  out.log.repair_edges = std::move(repaired.repair_edges);
  out.log.over_cap_nodes = std::move(repaired.over_cap_nodes);
  out.log.dropped_nodes = std::move(repaired.dropped_nodes);
  return out;
}

}  // namespace navrag
