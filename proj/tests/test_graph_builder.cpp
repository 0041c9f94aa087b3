#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "navrag/graph_builder.hpp"
#include "support.hpp"

using namespace navrag;
namespace nt = navrag::testing;

namespace {

OccupancyGrid open_grid(int n, double cs) { return OccupancyGrid({0, 0}, cs, std::vector<std::string>(n, std::string(n, '1'))); }

std::vector<GraphNode> nodes_at(const std::vector<Point3>& pts) {
  std::vector<GraphNode> out;
  for (std::size_t i = 0; i < pts.size(); ++i) out.push_back({viewpoint_id(i), pts[i], {i}});
  return out;
}

}  // namespace

TEST(Geodesic, IdenticalPointsAreZero) {
  const auto grid = open_grid(10, 1.0);
  EXPECT_EQ(geodesic_distance({2.5, 2.5, 0}, {2.5, 2.5, 0}, &grid), 0.0);
  EXPECT_EQ(geodesic_distance({2.5, 2.5, 0}, {2.5, 2.5, 0}), 0.0);
}

TEST(Geodesic, OpenGridAxisAlignedMatchesBfsOracle) {
  const auto grid = open_grid(10, 1.0);
  const Point3 a{1.5, 2.5, 0}, b{4.5, 2.5, 0};
  const double oracle = nt::oracle_grid_bfs(grid, a, b);
  EXPECT_DOUBLE_EQ(oracle, 3.0);
  const double d = geodesic_distance(a, b, &grid);
  EXPECT_NEAR(d, 3.0, 2 * grid.cell_size());
  EXPECT_DOUBLE_EQ(d, oracle);
  // Finer grid, off-center points: still within the discretization bound.
  const auto fine = open_grid(100, 0.1);
  EXPECT_NEAR(geodesic_distance({1.02, 5.0, 0}, {4.02, 5.0, 0}, &fine), 3.0, 0.2);
}

TEST(Geodesic, FullWallRowDisconnects) {
  std::vector<std::string> rows(10, std::string(10, '1'));
  rows[5] = std::string(10, '0');
  const OccupancyGrid grid({0, 0}, 1.0, rows);
  EXPECT_TRUE(std::isinf(geodesic_distance({2.5, 1.5, 0}, {2.5, 8.5, 0}, &grid)));
  EXPECT_FALSE(line_of_sight(grid, {2.5, 1.5, 0}, {2.5, 8.5, 0}));
  EXPECT_TRUE(line_of_sight(grid, {0.5, 1.5, 0}, {9.5, 3.5, 0}));
}

TEST(Geodesic, WallWithDoorForcesDetour) {
  std::vector<std::string> rows(10, std::string(10, '1'));
  rows[5] = "0000000001";
  const OccupancyGrid grid({0, 0}, 1.0, rows);
  const double d = geodesic_distance({0.5, 4.5, 0}, {0.5, 6.5, 0}, &grid);
  EXPECT_GT(d, 9.0);
  EXPECT_TRUE(std::isfinite(d));
}

TEST(Supercover, CornerCrossingTouchesBothNeighbours) {
  const auto grid = open_grid(4, 1.0);
  const auto cells = supercover_cells(grid, {0.5, 0.5, 0}, {2.5, 2.5, 0});
  std::set<std::pair<int, int>> s(cells.begin(), cells.end());
  EXPECT_TRUE(s.count({0, 1}));
  EXPECT_TRUE(s.count({1, 0}));
  EXPECT_TRUE(s.count({2, 2}));
  std::vector<std::string> rows(4, "1111");
  rows[0][1] = '0';
  EXPECT_FALSE(line_of_sight(OccupancyGrid({0, 0}, 1.0, rows), {0.5, 0.5, 0}, {2.5, 2.5, 0}));
}

TEST(FilterSamples, CloseSecondPointDropped) {
  GraphBuildConfig cfg;
  const std::vector<Point3> pts = {{0, 0, 0}, {0.3, 0, 0}};
  EXPECT_EQ(filter_samples(pts, cfg), (std::vector<std::size_t>{0}));
}

TEST(FilterSamples, WellSeparatedIsIdentity) {
  GraphBuildConfig cfg;
  const std::vector<Point3> pts = {{0, 0, 0}, {0.5, 0, 0}, {0, 0.5, 0}, {2, 2, 1}};
  EXPECT_EQ(filter_samples(pts, cfg), (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(FilterSamples, ExactlyMinSeparationIsDropped) {
  GraphBuildConfig cfg;
  cfg.min_separation = 0.5;
  const std::vector<Point3> pts = {{0, 0, 0}, {0.5, 0, 0}};
  EXPECT_EQ(filter_samples(pts, cfg).size(), 1u);
}

TEST(FilterSamples, MatchesBruteForceOracleOnRandomClouds) {
  GraphBuildConfig cfg;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng(seed);
    const auto pts = nt::random_cloud(rng, 100, 4.0);
    EXPECT_EQ(filter_samples(pts, cfg), nt::oracle_filter(pts, cfg.min_separation)) << "seed " << seed;
  }
}

TEST(FilterSamples, GridVariantMatchesOracle) {
  std::vector<std::string> rows(30, std::string(30, '1'));
  for (int c = 0; c < 25; ++c) rows[15][c] = '0';
  const OccupancyGrid grid({0, 0}, 0.1, rows);
  GraphBuildConfig cfg;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(100 + seed);
    const auto pts = nt::random_cloud(rng, 60, 3.0);
    EXPECT_EQ(filter_samples(pts, cfg, &grid), nt::oracle_filter(pts, cfg.min_separation, &grid)) << seed;
  }
}

TEST(ClusterViewpoints, HalfMeterPairMergesAtMidpoint) {
  GraphBuildConfig cfg;
  const std::vector<Point3> pts = {{0, 0, 0}, {0.5, 0, 0}};
  const std::vector<std::size_t> idx = {0, 1};
  const auto nodes = cluster_viewpoints(pts, idx, cfg);
  ASSERT_EQ(nodes.size(), 1u);
  EXPECT_EQ(nodes[0].id, "vp_0");
  EXPECT_DOUBLE_EQ(nodes[0].position.x, 0.25);
  EXPECT_EQ(nodes[0].members, (std::vector<std::size_t>{0, 1}));
}

TEST(ClusterViewpoints, SeparatedPointsStaySingletonsAndBoundaryIsExclusive) {
  GraphBuildConfig cfg;
  const std::vector<Point3> pts = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {5, 5, 0}};
  const std::vector<std::size_t> idx = {0, 1, 2, 3};
  const auto nodes = cluster_viewpoints(pts, idx, cfg);
  ASSERT_EQ(nodes.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(nodes[i].id, viewpoint_id(i));
}

TEST(ClusterViewpoints, MatchesNaiveSingleLinkageOracle) {
  GraphBuildConfig cfg;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    Rng rng(1000 + seed);
    const std::size_t n = 1 + rng.below(40);
    const auto pts = nt::random_cloud(rng, n, 6.0);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const auto nodes = cluster_viewpoints(pts, idx, cfg);
    std::vector<std::vector<std::size_t>> got;
    for (const auto& nd : nodes) got.push_back(nd.members);
    EXPECT_EQ(got, nt::oracle_single_linkage(pts, cfg.cluster_threshold)) << "seed " << seed;
    // ids follow smallest member
    for (std::size_t k = 1; k < nodes.size(); ++k) EXPECT_LT(nodes[k - 1].members[0], nodes[k].members[0]);
  }
}

TEST(ConnectEdges, BeyondRadiusNoEdge) {
  GraphBuildConfig cfg;
  const auto nodes = nodes_at({{0, 0, 0}, {6, 0, 0}});
  EXPECT_TRUE(connect_edges(nodes, cfg).empty());
  const auto near = nodes_at({{0, 0, 0}, {5, 0, 0}});
  EXPECT_EQ(connect_edges(near, cfg).size(), 1u);
}

TEST(ConnectEdges, StarHubCappedAtFive) {
  std::vector<Point3> pts = {{0, 0, 0}};
  for (int k = 0; k < 8; ++k) {
    const double a = k * M_PI / 4;
    pts.push_back({4 * std::cos(a), 4 * std::sin(a), 0});
  }
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    GraphBuildConfig cfg;
    cfg.rng_seed = seed;
    const auto edges = connect_edges(nodes_at(pts), cfg);
    int hub = 0;
    for (const auto& e : edges) hub += (e.a == 0 || e.b == 0);
    EXPECT_EQ(hub, 5) << "seed " << seed;
  }
}

TEST(ConnectEdges, SameSeedSameEdges) {
  Rng rng(5);
  const auto nodes = nodes_at(nt::random_cloud(rng, 80, 12.0));
  GraphBuildConfig cfg;
  cfg.rng_seed = 42;
  EXPECT_EQ(connect_edges(nodes, cfg), connect_edges(nodes, cfg));
  GraphBuildConfig other = cfg;
  other.rng_seed = 43;
  EXPECT_NE(connect_edges(nodes, cfg), connect_edges(nodes, other));
}

TEST(ConnectEdges, OccupancyBlocksEdgesThroughWalls) {
  std::vector<std::string> rows(10, std::string(10, '1'));
  rows[5] = std::string(10, '0');
  const OccupancyGrid grid({0, 0}, 1.0, rows);
  GraphBuildConfig cfg;
  const auto nodes = nodes_at({{2.5, 3.5, 0}, {2.5, 7.5, 0}, {4.5, 3.5, 0}});
  const auto edges = connect_edges(nodes, cfg, &grid);
  ASSERT_EQ(edges.size(), 1u);
  EXPECT_EQ(edges[0].a, 0u);
  EXPECT_EQ(edges[0].b, 2u);
}

TEST(RepairConnectivity, TwoComponentsSevenMetersApartGetOneBridge) {
  GraphBuildConfig cfg;
  const auto nodes = nodes_at({{0, 0, 0}, {1, 0, 0}, {8, 0, 0}, {9, 0, 0}});
  std::vector<GraphEdge> edges = {{0, 1, 1.0, false}, {2, 3, 1.0, false}};
  const auto r = repair_connectivity(nodes, edges, cfg);
  EXPECT_TRUE(r.graph.connected());
  ASSERT_EQ(r.repair_edges.size(), 1u);
  EXPECT_EQ(r.repair_edges[0], std::make_pair(std::string("vp_1"), std::string("vp_2")));
  EXPECT_TRUE(r.dropped_nodes.empty());
}

TEST(RepairConnectivity, ConnectedGraphUnchanged) {
  GraphBuildConfig cfg;
  const auto nodes = nodes_at({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}});
  std::vector<GraphEdge> edges = {{0, 1, 1.0, false}, {1, 2, 1.0, false}};
  const auto r = repair_connectivity(nodes, edges, cfg);
  EXPECT_TRUE(r.repair_edges.empty());
  EXPECT_EQ(r.graph, NavGraph(nodes, edges));
}

TEST(RepairConnectivity, RandomDisconnectedGraphsBecomeConnected) {
  GraphBuildConfig cfg;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed * 7 + 1);
    const auto nodes = nodes_at(nt::random_cloud(rng, 5 + rng.below(40), 40.0));
    std::vector<GraphEdge> edges;
    for (std::size_t k = 0; k < nodes.size() / 2; ++k) {
      const auto a = rng.below(nodes.size()), b = rng.below(nodes.size());
      if (a == b) continue;
      const bool dup = std::any_of(edges.begin(), edges.end(), [&](const GraphEdge& e) {
        return (e.a == a && e.b == b) || (e.a == b && e.b == a);
      });
      if (!dup) edges.push_back({a, b, 0.0, false});
    }
    const auto r = repair_connectivity(nodes, edges, cfg);
    std::vector<std::pair<std::size_t, std::size_t>> el;
    for (const auto& e : r.graph.edges()) el.emplace_back(e.a, e.b);
    EXPECT_TRUE(nt::oracle_connected(r.graph.size(), el)) << "seed " << seed;
    EXPECT_EQ(r.graph.size(), nodes.size());
    for (std::size_t i = 0; i < r.graph.size(); ++i) EXPECT_LE(r.graph.degree(i), 6u);
  }
}

TEST(RepairConnectivity, UnjoinableComponentDroppedKeepingLargest) {
  std::vector<std::string> rows(10, std::string(10, '1'));
  rows[5] = std::string(10, '0');
  const OccupancyGrid grid({0, 0}, 1.0, rows);
  GraphBuildConfig cfg;
  const auto nodes = nodes_at({{1.5, 1.5, 0}, {2.5, 1.5, 0}, {3.5, 1.5, 0}, {1.5, 8.5, 0}});
  std::vector<GraphEdge> edges = {{0, 1, 0, false}, {1, 2, 0, false}};
  const auto r = repair_connectivity(nodes, edges, cfg, &grid);
  EXPECT_EQ(r.graph.size(), 3u);
  EXPECT_EQ(r.dropped_nodes, (std::vector<std::string>{"vp_3"}));
  EXPECT_TRUE(r.graph.connected());
}

TEST(RepairConnectivity, SaturatedEndpointsRelaxCapByOneAndAreFlagged) {
  GraphBuildConfig cfg;
  cfg.max_degree = 1;
  // Component {0,1} and {2,3}: every node already has degree 1.
  const auto nodes = nodes_at({{0, 0, 0}, {1, 0, 0}, {3, 0, 0}, {4, 0, 0}});
  std::vector<GraphEdge> edges = {{0, 1, 0, false}, {2, 3, 0, false}};
  const auto r = repair_connectivity(nodes, edges, cfg);
  EXPECT_TRUE(r.graph.connected());
  EXPECT_EQ(r.over_cap_nodes, (std::vector<std::string>{"vp_1", "vp_2"}));
  for (const auto& e : r.graph.edges())
    if (e.a == 1 && e.b == 2) EXPECT_TRUE(e.repair);
}

TEST(BuildGraph, GridFixtureGives36ConnectedNodes) {
  const SceneBundle b = nt::make_grid_bundle();
  GraphBuildConfig cfg;
  cfg.rng_seed = 7;
  const auto r = build_graph(b, cfg);
  EXPECT_EQ(r.graph.size(), 36u);
  EXPECT_TRUE(r.graph.connected());
  for (std::size_t i = 0; i < r.graph.size(); ++i) {
    EXPECT_LE(r.graph.degree(i), 5u);
    EXPECT_EQ(r.graph.node(i).id, viewpoint_id(i));
    EXPECT_EQ(r.graph.node(i).position, b.sample_points[i]);
  }
  for (const auto& e : r.graph.edges())
    EXPECT_NEAR(e.length, distance(r.graph.node(e.a).position, r.graph.node(e.b).position), 1e-9);
  EXPECT_EQ(build_graph(b, cfg).graph, r.graph);
}

TEST(BuildGraph, SinglePointAndEmptyScene) {
  SceneBundle b;
  b.scene_id = "one";
  b.sample_points = {{1, 2, 3}};
  const auto r = build_graph(b, GraphBuildConfig{});
  EXPECT_EQ(r.graph.size(), 1u);
  EXPECT_TRUE(r.graph.edges().empty());
  b.sample_points.clear();
  try {
    build_graph(b, GraphBuildConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyScene);
  }
}

TEST(BuildGraph, ConfigValidation) {
  GraphBuildConfig cfg;
  cfg.max_degree = 0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.edge_radius = -1;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(ConnectEdges, DenseCloudsNeverRepeatAPair) {
  GraphBuildConfig cfg;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(7000 + seed);
    std::vector<GraphNode> nodes;
    for (const auto& p : nt::random_cloud(rng, 150, 30.0)) nodes.push_back({viewpoint_id(nodes.size()), p, {nodes.size()}});
    std::size_t candidates = 0;
    const auto edges = connect_edges(nodes, cfg, nullptr, &candidates);
    std::size_t within = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i)
      for (std::size_t j = i + 1; j < nodes.size(); ++j) within += distance(nodes[i].position, nodes[j].position) <= cfg.edge_radius;
    EXPECT_EQ(candidates, within) << "seed " << seed;
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const auto& e : edges) EXPECT_TRUE(seen.emplace(e.a, e.b).second) << "seed " << seed;
  }
}
