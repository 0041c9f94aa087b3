#pragma once

// Test fixtures and brute-force reference implementations. Nothing here calls
// into the algorithm under test except where noted (geodesic_distance is the
// metric the filter is defined over).

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "navrag/hashing.hpp"
#include "navrag/occupancy.hpp"
#include "navrag/scene_model.hpp"

namespace navrag::testing {

inline std::string area_for_cell(int x, int y) {
  if (x < 3) return y < 3 ? "kitchen" : "living room";
  return y < 3 ? "dining room" : "bedroom";
}

inline const std::map<std::string, std::vector<std::string>>& area_objects() {
  static const std::map<std::string, std::vector<std::string>> objects = {
      {"kitchen", {"kettle", "stove", "fridge", "sink", "counter", "toaster"}},
      {"living room", {"sofa", "television", "rug", "lamp", "bookshelf", "plant"}},
      {"dining room", {"table", "chairs", "candles", "cabinet", "vase", "napkins"}},
      {"bedroom", {"bed", "wardrobe", "nightstand", "mirror", "desk", "pillow"}}};
  return objects;
}

/// side x side grid of sample points at `spacing` meters, each with six
/// caption-only views keyed vp_<i>. The shipped fixtures/grid6x6 bundle is
/// this generator's output for side=6, spacing=1.
inline SceneBundle make_grid_bundle(int side = 6, double spacing = 1.0, const std::string& scene_id = "grid6x6") {
  SceneBundle b;
  b.scene_id = scene_id;
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const std::size_t i = b.sample_points.size();
      b.sample_points.push_back({x * spacing, y * spacing, 0.0});
      const std::string area = area_for_cell(x * 6 / side, y * 6 / side);
      std::vector<ViewRecord> views;
      for (int k = 0; k < kViewsPerViewpoint; ++k) {
        ViewRecord v;
        v.view_index = k;
        v.caption = "a " + area + " seen facing " + std::to_string(k * 60) + " degrees with a " +
                    area_objects().at(area)[static_cast<std::size_t>(k)];
        views.push_back(std::move(v));
      }
      b.views.emplace(viewpoint_id(i), std::move(views));
    }
  return b;
}

inline std::vector<Point3> random_cloud(Rng& rng, std::size_t n, double extent) {
  std::vector<Point3> pts;
  for (std::size_t i = 0; i < n; ++i) pts.push_back({rng.unit() * extent, rng.unit() * extent, 0.0});
  return pts;
}

// --- oracles ---------------------------------------------------------------

/// O(n^2) greedy separation filter over pairwise geodesic_distance.
inline std::vector<std::size_t> oracle_filter(const std::vector<Point3>& pts, double min_sep,
                                              const OccupancyGrid* grid = nullptr) {
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    bool ok = true;
    for (auto j : kept)
      if (!(geodesic_distance(pts[i], pts[j], grid) > min_sep)) ok = false;
    if (ok) kept.push_back(i);
  }
  return kept;
}

/// Naive O(n^3) single-linkage: merge the closest pair of clusters while
/// their closest members are nearer than `threshold`. Returns clusters as
/// sorted member lists, ordered by smallest member.
inline std::vector<std::vector<std::size_t>> oracle_single_linkage(const std::vector<Point3>& pts, double threshold) {
  std::vector<std::vector<std::size_t>> clusters;
  for (std::size_t i = 0; i < pts.size(); ++i) clusters.push_back({i});
  while (true) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t ba = 0, bb = 0;
    for (std::size_t a = 0; a < clusters.size(); ++a)
      for (std::size_t b = a + 1; b < clusters.size(); ++b) {
        double d = std::numeric_limits<double>::infinity();
        for (auto i : clusters[a])
          for (auto j : clusters[b]) d = std::min(d, distance(pts[i], pts[j]));
        if (d < best) {
          best = d;
          ba = a;
          bb = b;
        }
      }
    if (!(best < threshold)) break;
    clusters[ba].insert(clusters[ba].end(), clusters[bb].begin(), clusters[bb].end());
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bb));
  }
  for (auto& c : clusters) std::sort(c.begin(), c.end());
  std::sort(clusters.begin(), clusters.end());
  return clusters;
}

/// 4-connected BFS hop count between the cells of a and b, times cell size.
inline double oracle_grid_bfs(const OccupancyGrid& g, const Point3& a, const Point3& b) {
  const auto [r0, c0] = g.cell_of(a.x, a.y);
  const auto [r1, c1] = g.cell_of(b.x, b.y);
  std::vector<int> hops(static_cast<std::size_t>(g.rows()) * g.cols(), -1);
  std::queue<std::pair<int, int>> q;
  if (!g.free(r0, c0)) return std::numeric_limits<double>::infinity();
  hops[static_cast<std::size_t>(r0) * g.cols() + c0] = 0;
  q.push({r0, c0});
  while (!q.empty()) {
    auto [r, c] = q.front();
    q.pop();
    const int h = hops[static_cast<std::size_t>(r) * g.cols() + c];
    if (r == r1 && c == c1) return h * g.cell_size();
    const int dr[] = {1, -1, 0, 0}, dc[] = {0, 0, 1, -1};
    for (int k = 0; k < 4; ++k) {
      const int nr = r + dr[k], nc = c + dc[k];
      if (!g.free(nr, nc)) continue;
      auto& slot = hops[static_cast<std::size_t>(nr) * g.cols() + nc];
      if (slot < 0) {
        slot = h + 1;
        q.push({nr, nc});
      }
    }
  }
  return std::numeric_limits<double>::infinity();
}

/// Connectivity by repeated label propagation over an edge list.
inline bool oracle_connected(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  if (n == 0) return true;
  std::vector<std::size_t> label(n);
  for (std::size_t i = 0; i < n; ++i) label[i] = i;
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& [a, b] : edges) {
      const auto m = std::min(label[a], label[b]);
      if (label[a] != m || label[b] != m) {
        label[a] = label[b] = m;
        changed = true;
      }
    }
  }
  return std::all_of(label.begin(), label.end(), [](std::size_t l) { return l == 0; });
}

/// Bellman-Ford single-source distances (path sums accumulated from the
/// source, as in every shortest-path length the library reports).
inline std::vector<double> oracle_bellman_ford(const NavGraph& g, std::size_t source) {
  std::vector<double> d(g.size(), std::numeric_limits<double>::infinity());
  d[source] = 0.0;
  for (std::size_t round = 0; round + 1 < g.size() + 1; ++round) {
    bool changed = false;
    for (const auto& e : g.edges()) {
      if (d[e.a] + e.length < d[e.b]) {
        d[e.b] = d[e.a] + e.length;
        changed = true;
      }
      if (d[e.b] + e.length < d[e.a]) {
        d[e.a] = d[e.b] + e.length;
        changed = true;
      }
    }
    if (!changed) break;
  }
  return d;
}

/// Exhaustive simple-path enumeration (small graphs only).
inline double oracle_all_paths(const NavGraph& g, std::size_t a, std::size_t b) {
  double best = std::numeric_limits<double>::infinity();
  std::vector<bool> seen(g.size(), false);
  auto dfs = [&](auto&& self, std::size_t u, double acc) -> void {
    if (u == b) {
      best = std::min(best, acc);
      return;
    }
    for (const auto& adj : g.neighbors(u)) {
      if (seen[adj.node]) continue;
      seen[adj.node] = true;
      self(self, adj.node, acc + adj.length);
      seen[adj.node] = false;
    }
  };
  seen[a] = true;
  dfs(dfs, a, 0.0);
  return best;
}

/// Random connected graph: random positions, a random spanning tree, plus
/// extra random edges.
inline NavGraph random_graph(Rng& rng, std::size_t n, double extra_edge_ratio = 1.0, double extent = 20.0) {
  std::vector<GraphNode> nodes;
  for (std::size_t i = 0; i < n; ++i)
    nodes.push_back({viewpoint_id(i), quantize(Point3{rng.unit() * extent, rng.unit() * extent, 0.0}), {i}});
  std::set<std::pair<std::size_t, std::size_t>> es;
  for (std::size_t i = 1; i < n; ++i) {
    const std::size_t j = rng.below(i);
    es.emplace(j, i);
  }
  const auto extra = static_cast<std::size_t>(extra_edge_ratio * static_cast<double>(n));
  for (std::size_t k = 0; k < extra && n > 1; ++k) {
    std::size_t a = rng.below(n), b = rng.below(n);
    if (a == b) continue;
    es.emplace(std::min(a, b), std::max(a, b));
  }
  std::vector<GraphEdge> edges;
  for (const auto& [a, b] : es) edges.push_back({a, b, 0.0, false});
  return NavGraph(std::move(nodes), std::move(edges));
}

/// 4-connected lattice graph with `spacing` meter edges; node i at
/// (i % side, i / side) * spacing.
inline NavGraph lattice_graph(int side, double spacing = 1.0) {
  std::vector<GraphNode> nodes;
  std::vector<GraphEdge> edges;
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const auto i = static_cast<std::size_t>(y * side + x);
      nodes.push_back({viewpoint_id(i), {x * spacing, y * spacing, 0.0}, {i}});
      if (x + 1 < side) edges.push_back({i, i + 1, 0.0, false});
      if (y + 1 < side) edges.push_back({i, i + static_cast<std::size_t>(side), 0.0, false});
    }
  return NavGraph(std::move(nodes), std::move(edges));
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("navrag_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace navrag::testing
