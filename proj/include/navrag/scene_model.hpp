#pragma once

// Shared domain types and their interchange formats (bundle.json, graph.json,
// tree.json, dataset JSONL). Every loader validates the invariants of the type
// it produces and names the offending entity on failure.

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "navrag/error.hpp"
#include "navrag/geometry.hpp"
#include "navrag/json_io.hpp"

namespace navrag {

inline constexpr int kViewsPerViewpoint = 6;
inline constexpr int kDefaultResolution = 480;

// ---------------------------------------------------------------------------
// Ids
// ---------------------------------------------------------------------------

inline std::string viewpoint_id(std::size_t index) { return "vp_" + std::to_string(index); }
inline std::string sample_point_id(std::size_t index) { return "sp_" + std::to_string(index); }
inline std::string zone_id(std::size_t index) { return "zone_" + std::to_string(index); }
inline std::string view_id(const std::string& viewpoint, int k) { return viewpoint + "_view_" + std::to_string(k); }
inline std::string instance_id(const std::string& view, std::size_t j) { return view + "_obj_" + std::to_string(j); }

/// Whitespace tokenization used for instruction length.
inline std::size_t whitespace_token_count(std::string_view text) {
  std::size_t count = 0;
  bool in_token = false;
  for (char c : text) {
    const bool space = c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
    if (!space && !in_token) ++count;
    in_token = !space;
  }
  return count;
}

// ---------------------------------------------------------------------------
// SceneBundle
// ---------------------------------------------------------------------------

struct ViewRecord {
  int view_index = 0;
  std::optional<std::string> caption;
  std::optional<std::string> image_ref;
  std::pair<int, int> resolution{kDefaultResolution, kDefaultResolution};

  friend bool operator==(const ViewRecord&, const ViewRecord&) = default;
};

/// Traversability raster. Cell (r, c) covers
/// [origin.x + c*cell_size, +cell_size) x [origin.y + r*cell_size, +cell_size).
class OccupancyGrid {
 public:
  OccupancyGrid() = default;
  OccupancyGrid(Point2 origin, double cell_size, std::vector<std::string> rows)
      : origin_(origin), cell_size_(cell_size) {
    if (!(cell_size > 0.0) || !std::isfinite(cell_size))
      throw Error(ErrorKind::InvariantViolation, "occupancy", "cell_size must be > 0");
    if (rows.empty() || rows.front().empty())
      throw Error(ErrorKind::InvariantViolation, "occupancy", "grid must be non-empty");
    rows_ = static_cast<int>(rows.size());
    cols_ = static_cast<int>(rows.front().size());
    cells_.reserve(static_cast<std::size_t>(rows_) * cols_);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (static_cast<int>(rows[r].size()) != cols_)
        throw Error(ErrorKind::SchemaViolation, "/occupancy/rows/" + std::to_string(r), "ragged row");
      for (char ch : rows[r]) {
        if (ch != '0' && ch != '1')
          throw Error(ErrorKind::SchemaViolation, "/occupancy/rows/" + std::to_string(r), "expected bitstring");
        cells_.push_back(ch == '1');
      }
    }
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  double cell_size() const { return cell_size_; }
  Point2 origin() const { return origin_; }

  bool in_bounds(int r, int c) const { return r >= 0 && c >= 0 && r < rows_ && c < cols_; }
  bool free(int r, int c) const { return in_bounds(r, c) && cells_[static_cast<std::size_t>(r) * cols_ + c]; }

  /// Cell containing a world point (may be out of bounds).
  std::pair<int, int> cell_of(double x, double y) const {
    return {static_cast<int>(std::floor((y - origin_.y) / cell_size_)),
            static_cast<int>(std::floor((x - origin_.x) / cell_size_))};
  }

  std::vector<std::string> row_strings() const {
    std::vector<std::string> out(rows_, std::string(cols_, '0'));
    for (int r = 0; r < rows_; ++r)
      for (int c = 0; c < cols_; ++c)
        if (free(r, c)) out[r][c] = '1';
    return out;
  }

  friend bool operator==(const OccupancyGrid&, const OccupancyGrid&) = default;

 private:
  Point2 origin_{};
  double cell_size_ = 1.0;
  int rows_ = 0;
  int cols_ = 0;
  std::vector<bool> cells_;
};

struct SceneBundle {
  std::string scene_id;
  std::vector<Point3> sample_points;
  std::map<std::string, std::vector<ViewRecord>> views;
  std::optional<OccupancyGrid> occupancy;
  json meta = json::object();
  /// Directory the bundle was loaded from; image_refs resolve against it.
  fs::path base_dir;

  friend bool operator==(const SceneBundle& a, const SceneBundle& b) {
    return a.scene_id == b.scene_id && a.sample_points == b.sample_points && a.views == b.views &&
           a.occupancy == b.occupancy && a.meta == b.meta;
  }
};

namespace detail {

inline bool is_indexed_id(const std::string& id, std::string_view prefix, std::size_t* index) {
  if (id.size() <= prefix.size() || id.compare(0, prefix.size(), prefix) != 0) return false;
  std::size_t value = 0;
  for (std::size_t i = prefix.size(); i < id.size(); ++i) {
    if (id[i] < '0' || id[i] > '9') return false;
    value = value * 10 + static_cast<std::size_t>(id[i] - '0');
  }
  if (id.size() - prefix.size() > 1 && id[prefix.size()] == '0') return false;
  if (index) *index = value;
  return true;
}

}  // namespace detail

/// Checks the bundle invariants. Throws SchemaViolation / InvariantViolation
/// naming the viewpoint or field.
inline void validate_bundle(const SceneBundle& b) {
  if (b.scene_id.empty()) throw Error(ErrorKind::SchemaViolation, "/scene_id", "empty scene id");
  for (std::size_t i = 0; i < b.sample_points.size(); ++i)
    if (!b.sample_points[i].finite())
      throw Error(ErrorKind::InvariantViolation, sample_point_id(i), "non-finite coordinate");
  for (const auto& [vp, list] : b.views) {
    std::size_t idx = 0;
    const bool raw = detail::is_indexed_id(vp, "sp_", &idx);
    if (!raw && !detail::is_indexed_id(vp, "vp_", nullptr))
      throw Error(ErrorKind::SchemaViolation, vp, "view key must be vp_<i> or sp_<i>");
    if (raw && idx >= b.sample_points.size())
      throw Error(ErrorKind::InvariantViolation, vp, "raw sample id out of range");
    if (list.size() != kViewsPerViewpoint)
      throw Error(ErrorKind::SchemaViolation, vp,
                  "expected 6 views, found " + std::to_string(list.size()));
    std::set<int> seen;
    for (const auto& v : list) {
      if (v.view_index < 0 || v.view_index >= kViewsPerViewpoint || !seen.insert(v.view_index).second)
        throw Error(ErrorKind::InvariantViolation, vp, "view indices must be 0..5, each once");
      if (!v.caption && !v.image_ref)
        throw Error(ErrorKind::InvariantViolation, view_id(vp, v.view_index), "needs caption or image_ref");
      if (v.resolution.first <= 0 || v.resolution.second <= 0)
        throw Error(ErrorKind::InvariantViolation, view_id(vp, v.view_index), "bad resolution");
    }
  }
}

inline SceneBundle bundle_from_json(const json& j) {
  SceneBundle b;
  b.scene_id = detail::require_string(j, "scene_id", "");
  const json& pts = detail::require(j, "sample_points", "");
  if (!pts.is_array()) throw Error(ErrorKind::SchemaViolation, "/sample_points", "expected array");
  for (std::size_t i = 0; i < pts.size(); ++i)
    b.sample_points.push_back(detail::parse_point3(pts[i], "/sample_points/" + std::to_string(i)));
  if (auto it = j.find("views"); it != j.end()) {
    if (!it->is_object()) throw Error(ErrorKind::SchemaViolation, "/views", "expected object");
    for (auto v = it->begin(); v != it->end(); ++v) {
      const std::string ptr = "/views/" + v.key();
      if (!v->is_array()) throw Error(ErrorKind::SchemaViolation, v.key(), "expected array of views");
      std::vector<ViewRecord> list;
      for (std::size_t k = 0; k < v->size(); ++k) {
        const json& rec = (*v)[k];
        const std::string rp = ptr + "/" + std::to_string(k);
        ViewRecord vr;
        vr.view_index = static_cast<int>(detail::require_int(rec, "view_index", rp));
        if (auto c = rec.find("caption"); c != rec.end() && !c->is_null()) {
          if (!c->is_string()) throw Error(ErrorKind::SchemaViolation, rp + "/caption", "expected string");
          vr.caption = c->get<std::string>();
        }
        if (auto c = rec.find("image_ref"); c != rec.end() && !c->is_null()) {
          if (!c->is_string()) throw Error(ErrorKind::SchemaViolation, rp + "/image_ref", "expected string");
          vr.image_ref = c->get<std::string>();
        }
        if (auto r = rec.find("resolution"); r != rec.end()) {
          if (!r->is_array() || r->size() != 2 || !(*r)[0].is_number_integer() || !(*r)[1].is_number_integer())
            throw Error(ErrorKind::SchemaViolation, rp + "/resolution", "expected [w,h]");
          vr.resolution = {(*r)[0].get<int>(), (*r)[1].get<int>()};
        }
        list.push_back(std::move(vr));
      }
      std::sort(list.begin(), list.end(), [](const auto& a, const auto& c) { return a.view_index < c.view_index; });
      b.views.emplace(v.key(), std::move(list));
    }
  }
  if (auto o = j.find("occupancy"); o != j.end() && !o->is_null()) {
    const json& org = detail::require(*o, "origin", "/occupancy");
    if (!org.is_array() || org.size() != 2 || !org[0].is_number() || !org[1].is_number())
      throw Error(ErrorKind::SchemaViolation, "/occupancy/origin", "expected [x,y]");
    b.occupancy = OccupancyGrid(Point2{quantize(org[0].get<double>()), quantize(org[1].get<double>())},
                                quantize(detail::require_number(*o, "cell_size", "/occupancy")),
                                detail::require_string_list(*o, "rows", "/occupancy"));
  }
  if (auto m = j.find("meta"); m != j.end() && m->is_object()) b.meta = *m;
  validate_bundle(b);
  return b;
}

inline json bundle_to_json(const SceneBundle& b) {
  json j;
  j["scene_id"] = b.scene_id;
  j["sample_points"] = json::array();
  for (const auto& p : b.sample_points) j["sample_points"].push_back(detail::point_json(p));
  j["views"] = json::object();
  for (const auto& [vp, list] : b.views) {
    json arr = json::array();
    for (const auto& v : list) {
      json r;
      r["view_index"] = v.view_index;
      if (v.caption) r["caption"] = *v.caption;
      if (v.image_ref) r["image_ref"] = *v.image_ref;
      r["resolution"] = json::array({v.resolution.first, v.resolution.second});
      arr.push_back(std::move(r));
    }
    j["views"][vp] = std::move(arr);
  }
  if (b.occupancy) {
    j["occupancy"] = {{"origin", json::array({b.occupancy->origin().x, b.occupancy->origin().y})},
                      {"cell_size", b.occupancy->cell_size()},
                      {"rows", b.occupancy->row_strings()}};
  }
  if (!b.meta.empty()) j["meta"] = b.meta;
  return j;
}

/// Loads `<dir>/bundle.json`.
inline SceneBundle load_scene_bundle(const fs::path& dir) {
  const fs::path file = dir / "bundle.json";
  if (!fs::exists(file)) throw Error(ErrorKind::MissingFile, file.string(), "bundle.json not found");
  SceneBundle b = bundle_from_json(read_json(file));
  b.base_dir = dir;
  return b;
}

inline void save_scene_bundle(const SceneBundle& b, const fs::path& dir) {
  write_text_atomic(dir / "bundle.json", canonical_dump(bundle_to_json(b)));
}

// ---------------------------------------------------------------------------
// NavGraph
// ---------------------------------------------------------------------------

struct GraphNode {
  std::string id;
  Point3 position;
  /// Indices of the bundle sample points merged into this node.
  std::vector<std::size_t> members;

  friend bool operator==(const GraphNode&, const GraphNode&) = default;
};

struct GraphEdge {
  std::size_t a = 0;
  std::size_t b = 0;
  double length = 0.0;
  /// Added by connectivity repair rather than the proximity pass.
  bool repair = false;

  friend bool operator==(const GraphEdge&, const GraphEdge&) = default;
};

struct Adjacent {
  std::size_t node;
  double length;
};

/// Undirected weighted navigation graph over viewpoint nodes. Edge lengths are
/// always recomputed from node positions, so they are exact Euclidean
/// distances of the stored coordinates.
class NavGraph {
 public:
  NavGraph() = default;

  /// Validates structure: unique non-empty ids, finite positions, no self
  /// loops, no duplicate edges. Edges are stored with a < b, sorted.
  NavGraph(std::vector<GraphNode> nodes, std::vector<GraphEdge> edges) : nodes_(std::move(nodes)) {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const auto& n = nodes_[i];
      if (n.id.empty()) throw Error(ErrorKind::InvariantViolation, "node " + std::to_string(i), "empty id");
      if (!n.position.finite()) throw Error(ErrorKind::InvariantViolation, n.id, "non-finite position");
      if (!index_.emplace(n.id, i).second) throw Error(ErrorKind::InvariantViolation, n.id, "duplicate node id");
    }
    adjacency_.resize(nodes_.size());
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (auto e : edges) {
      if (e.a >= nodes_.size() || e.b >= nodes_.size())
        throw Error(ErrorKind::InvariantViolation, "edge", "endpoint out of range");
      if (e.a == e.b) throw Error(ErrorKind::InvariantViolation, nodes_[e.a].id, "self loop");
      if (e.a > e.b) std::swap(e.a, e.b);
      if (!seen.emplace(e.a, e.b).second)
        throw Error(ErrorKind::InvariantViolation, nodes_[e.a].id + "-" + nodes_[e.b].id, "duplicate edge");
      e.length = distance(nodes_[e.a].position, nodes_[e.b].position);
      edges_.push_back(e);
    }
    std::sort(edges_.begin(), edges_.end(),
              [](const GraphEdge& x, const GraphEdge& y) { return std::tie(x.a, x.b) < std::tie(y.a, y.b); });
    for (const auto& e : edges_) {
      adjacency_[e.a].push_back({e.b, e.length});
      adjacency_[e.b].push_back({e.a, e.length});
    }
    for (auto& list : adjacency_)
      std::sort(list.begin(), list.end(), [](const Adjacent& x, const Adjacent& y) { return x.node < y.node; });
  }

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  const std::vector<GraphNode>& nodes() const { return nodes_; }
  const std::vector<GraphEdge>& edges() const { return edges_; }
  const GraphNode& node(std::size_t i) const { return nodes_.at(i); }
  std::span<const Adjacent> neighbors(std::size_t i) const { return adjacency_.at(i); }
  std::size_t degree(std::size_t i) const { return adjacency_.at(i).size(); }

  std::optional<std::size_t> find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  bool contains(const std::string& id) const { return index_.count(id) > 0; }

  /// Index of `id`; throws UnknownNode.
  std::size_t index_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw Error(ErrorKind::UnknownNode, id, "not in graph");
    return it->second;
  }

  std::optional<double> edge_length(std::size_t a, std::size_t b) const {
    for (const auto& adj : adjacency_.at(a))
      if (adj.node == b) return adj.length;
    return std::nullopt;
  }

  /// Component label per node (labels ordered by smallest member index).
  std::vector<std::size_t> components() const {
    std::vector<std::size_t> label(nodes_.size(), SIZE_MAX);
    std::size_t next = 0;
    std::vector<std::size_t> stack;
    for (std::size_t s = 0; s < nodes_.size(); ++s) {
      if (label[s] != SIZE_MAX) continue;
      label[s] = next;
      stack.push_back(s);
      while (!stack.empty()) {
        const std::size_t u = stack.back();
        stack.pop_back();
        for (const auto& adj : adjacency_[u])
          if (label[adj.node] == SIZE_MAX) {
            label[adj.node] = next;
            stack.push_back(adj.node);
          }
      }
      ++next;
    }
    return label;
  }

  bool connected() const {
    const auto label = components();
    return std::all_of(label.begin(), label.end(), [](std::size_t l) { return l == 0; });
  }

  friend bool operator==(const NavGraph& a, const NavGraph& b) { return a.nodes_ == b.nodes_ && a.edges_ == b.edges_; }

 private:
  std::vector<GraphNode> nodes_;
  std::vector<GraphEdge> edges_;
  std::map<std::string, std::size_t> index_;
  std::vector<std::vector<Adjacent>> adjacency_;
};

inline json graph_to_json(const NavGraph& g) {
  json j;
  j["nodes"] = json::array();
  for (const auto& n : g.nodes())
    j["nodes"].push_back({{"id", n.id}, {"position", detail::point_json(n.position)}, {"members", n.members}});
  j["edges"] = json::array();
  for (const auto& e : g.edges())
    j["edges"].push_back(
        {{"a", g.node(e.a).id}, {"b", g.node(e.b).id}, {"length", e.length}, {"repair", e.repair}});
  return j;
}

/// Parses graph.json. Stored lengths must agree with the endpoint distance to
/// the file's 9-digit precision; connectivity is required.
inline NavGraph graph_from_json(const json& j) {
  const json& nodes = detail::require(j, "nodes", "");
  const json& edges = detail::require(j, "edges", "");
  if (!nodes.is_array() || !edges.is_array()) throw Error(ErrorKind::SchemaViolation, "", "nodes/edges must be arrays");
  std::vector<GraphNode> ns;
  std::map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const std::string ptr = "/nodes/" + std::to_string(i);
    GraphNode n;
    n.id = detail::require_string(nodes[i], "id", ptr);
    n.position = detail::parse_point3(detail::require(nodes[i], "position", ptr), ptr + "/position");
    if (auto m = nodes[i].find("members"); m != nodes[i].end()) n.members = m->get<std::vector<std::size_t>>();
    idx.emplace(n.id, i);
    ns.push_back(std::move(n));
  }
  std::vector<GraphEdge> es;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const std::string ptr = "/edges/" + std::to_string(i);
    const std::string a = detail::require_string(edges[i], "a", ptr);
    const std::string b = detail::require_string(edges[i], "b", ptr);
    auto ia = idx.find(a), ib = idx.find(b);
    if (ia == idx.end()) throw Error(ErrorKind::InvariantViolation, a, "edge references unknown node");
    if (ib == idx.end()) throw Error(ErrorKind::InvariantViolation, b, "edge references unknown node");
    GraphEdge e{ia->second, ib->second, 0.0, false};
    if (auto r = edges[i].find("repair"); r != edges[i].end()) e.repair = r->get<bool>();
    if (auto l = edges[i].find("length"); l != edges[i].end()) {
      const double stored = l->get<double>();
      const double actual = distance(ns[e.a].position, ns[e.b].position);
      if (std::abs(stored - actual) > 1e-8 * std::max(1.0, actual))
        throw Error(ErrorKind::InvariantViolation, a + "-" + b, "edge length disagrees with endpoint distance");
    }
    es.push_back(e);
  }
  NavGraph g(std::move(ns), std::move(es));
  if (!g.empty() && !g.connected()) throw Error(ErrorKind::InvariantViolation, "graph", "graph is not connected");
  return g;
}

inline void save_graph(const NavGraph& g, const fs::path& path) { write_text_atomic(path, canonical_dump(graph_to_json(g))); }
inline NavGraph load_graph(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::MissingFile, path.string(), "graph file not found");
  return graph_from_json(read_json(path));
}

// ---------------------------------------------------------------------------
// SceneTree
// ---------------------------------------------------------------------------

struct InstanceNode {
  std::string id;
  std::string name;
  std::string attributes;
  std::string functionality;
  std::string parent_view;
  friend bool operator==(const InstanceNode&, const InstanceNode&) = default;
};

struct ViewNode {
  std::string id;
  std::string description;
  std::vector<std::string> instances;
  std::string parent_viewpoint;
  friend bool operator==(const ViewNode&, const ViewNode&) = default;
};

struct ViewpointNode {
  std::string id;
  std::string area_type;
  std::string layout;
  std::string relations;
  std::string description;
  std::vector<std::string> views;
  std::string parent_zone;
  friend bool operator==(const ViewpointNode&, const ViewpointNode&) = default;
};

struct ZoneNode {
  std::string id;
  std::string zone_type;
  std::string description;
  std::vector<std::string> viewpoints;
  friend bool operator==(const ZoneNode&, const ZoneNode&) = default;
};

struct SceneNode {
  std::vector<std::string> zones;
  std::vector<std::pair<std::string, std::string>> adjacency;
  std::string summary;
  std::string functionality;
  friend bool operator==(const SceneNode&, const SceneNode&) = default;
};

struct SceneTree {
  std::string scene_id;
  std::map<std::string, InstanceNode> instances;
  std::map<std::string, ViewNode> views;
  std::map<std::string, ViewpointNode> viewpoints;
  std::map<std::string, ZoneNode> zones;
  SceneNode scene;
  /// Provenance: prompt template hashes, model id, partition mode.
  std::map<std::string, std::string> meta;
  friend bool operator==(const SceneTree&, const SceneTree&) = default;
};

/// Checks every SceneTree invariant; throws InvariantViolation naming the node.
inline void validate_tree(const SceneTree& t) {
  auto fail = [](const std::string& id, const std::string& msg) { throw Error(ErrorKind::InvariantViolation, id, msg); };
  for (const auto& [id, inst] : t.instances) {
    if (inst.id != id) fail(id, "key/id mismatch");
    auto v = t.views.find(inst.parent_view);
    if (v == t.views.end()) fail(id, "parent view missing");
    if (std::count(v->second.instances.begin(), v->second.instances.end(), id) != 1)
      fail(id, "not listed exactly once by its parent view");
  }
  for (const auto& [id, view] : t.views) {
    if (view.id != id) fail(id, "key/id mismatch");
    for (const auto& c : view.instances) {
      auto it = t.instances.find(c);
      if (it == t.instances.end()) fail(c, "instance referenced by " + id + " missing");
      if (it->second.parent_view != id) fail(c, "parent link does not point back to " + id);
    }
    auto vp = t.viewpoints.find(view.parent_viewpoint);
    if (vp == t.viewpoints.end()) fail(id, "parent viewpoint missing");
    if (std::count(vp->second.views.begin(), vp->second.views.end(), id) != 1)
      fail(id, "not listed exactly once by its parent viewpoint");
  }
  std::map<std::string, int> zone_refs;
  for (const auto& [id, vp] : t.viewpoints) {
    if (vp.id != id) fail(id, "key/id mismatch");
    if (vp.views.size() != kViewsPerViewpoint) fail(id, "viewpoint must have exactly 6 views");
    for (const auto& c : vp.views) {
      auto it = t.views.find(c);
      if (it == t.views.end()) fail(c, "view referenced by " + id + " missing");
      if (it->second.parent_viewpoint != id) fail(c, "parent link does not point back to " + id);
    }
    auto z = t.zones.find(vp.parent_zone);
    if (z == t.zones.end()) fail(id, "parent zone missing");
  }
  std::set<std::string> covered;
  for (const auto& [id, zone] : t.zones) {
    if (zone.id != id) fail(id, "key/id mismatch");
    if (zone.viewpoints.empty()) fail(id, "empty zone");
    for (const auto& m : zone.viewpoints) {
      auto it = t.viewpoints.find(m);
      if (it == t.viewpoints.end()) fail(id, "zone references missing viewpoint " + m);
      if (it->second.parent_zone != id) fail(m, "parent zone link does not point back to " + id);
      if (!covered.insert(m).second) fail(m, "viewpoint belongs to more than one zone");
    }
  }
  if (covered.size() != t.viewpoints.size()) {
    for (const auto& [id, vp] : t.viewpoints)
      if (!covered.count(id)) fail(id, "viewpoint not covered by any zone");
  }
  std::map<std::string, int> scene_refs;
  for (const auto& z : t.scene.zones) {
    if (!t.zones.count(z)) fail(z, "scene references missing zone");
    if (++scene_refs[z] > 1) fail(z, "scene references zone more than once");
  }
  for (const auto& [id, zone] : t.zones)
    if (!scene_refs.count(id)) fail(id, "zone not referenced by scene");
  for (const auto& [a, b] : t.scene.adjacency)
    if (!t.zones.count(a) || !t.zones.count(b)) fail(a + "-" + b, "adjacency references missing zone");
}

inline json tree_to_json(const SceneTree& t) {
  json j;
  j["scene_id"] = t.scene_id;
  j["meta"] = t.meta;
  j["instances"] = json::object();
  for (const auto& [id, n] : t.instances)
    j["instances"][id] = {{"name", n.name},
                          {"attributes", n.attributes},
                          {"functionality", n.functionality},
                          {"parent_view", n.parent_view}};
  j["views"] = json::object();
  for (const auto& [id, n] : t.views)
    j["views"][id] = {{"description", n.description}, {"instances", n.instances}, {"parent_viewpoint", n.parent_viewpoint}};
  j["viewpoints"] = json::object();
  for (const auto& [id, n] : t.viewpoints)
    j["viewpoints"][id] = {{"area_type", n.area_type}, {"layout", n.layout},
                           {"relations", n.relations}, {"description", n.description},
                           {"views", n.views},         {"parent_zone", n.parent_zone}};
  j["zones"] = json::object();
  for (const auto& [id, n] : t.zones)
    j["zones"][id] = {{"zone_type", n.zone_type}, {"description", n.description}, {"viewpoints", n.viewpoints}};
  json adj = json::array();
  for (const auto& [a, b] : t.scene.adjacency) adj.push_back(json::array({a, b}));
  j["scene"] = {{"zones", t.scene.zones},
                {"adjacency", adj},
                {"summary", t.scene.summary},
                {"functionality", t.scene.functionality}};
  return j;
}

/// `validate` = false parses partially built trees (no zone layer yet).
inline SceneTree tree_from_json(const json& j, bool validate = true) {
  using detail::require;
  using detail::require_string;
  using detail::require_string_list;
  SceneTree t;
  t.scene_id = require_string(j, "scene_id", "");
  if (auto m = j.find("meta"); m != j.end()) t.meta = m->get<std::map<std::string, std::string>>();
  auto each = [&](const char* key, auto&& fn) {
    const json& obj = require(j, key, "");
    if (!obj.is_object()) throw Error(ErrorKind::SchemaViolation, std::string("/") + key, "expected object");
    for (auto it = obj.begin(); it != obj.end(); ++it) fn(it.key(), it.value(), std::string("/") + key + "/" + it.key());
  };
  each("instances", [&](const std::string& id, const json& v, const std::string& p) {
    t.instances[id] = {id, require_string(v, "name", p), require_string(v, "attributes", p),
                       require_string(v, "functionality", p), require_string(v, "parent_view", p)};
  });
  each("views", [&](const std::string& id, const json& v, const std::string& p) {
    t.views[id] = {id, require_string(v, "description", p), require_string_list(v, "instances", p),
                   require_string(v, "parent_viewpoint", p)};
  });
  each("viewpoints", [&](const std::string& id, const json& v, const std::string& p) {
    t.viewpoints[id] = {id,
                        require_string(v, "area_type", p),
                        require_string(v, "layout", p),
                        require_string(v, "relations", p),
                        require_string(v, "description", p),
                        require_string_list(v, "views", p),
                        require_string(v, "parent_zone", p)};
  });
  each("zones", [&](const std::string& id, const json& v, const std::string& p) {
    t.zones[id] = {id, require_string(v, "zone_type", p), require_string(v, "description", p),
                   require_string_list(v, "viewpoints", p)};
  });
  const json& s = require(j, "scene", "");
  t.scene.zones = require_string_list(s, "zones", "/scene");
  const json& adj = require(s, "adjacency", "/scene");
  for (std::size_t i = 0; i < adj.size(); ++i) {
    if (!adj[i].is_array() || adj[i].size() != 2 || !adj[i][0].is_string() || !adj[i][1].is_string())
      throw Error(ErrorKind::SchemaViolation, "/scene/adjacency/" + std::to_string(i), "expected [zone, zone]");
    t.scene.adjacency.emplace_back(adj[i][0].get<std::string>(), adj[i][1].get<std::string>());
  }
  t.scene.summary = require_string(s, "summary", "/scene");
  t.scene.functionality = require_string(s, "functionality", "/scene");
  if (validate) validate_tree(t);
  return t;
}

inline void save_scene_tree(const SceneTree& t, const fs::path& path) {
  validate_tree(t);
  write_text_atomic(path, canonical_dump(tree_to_json(t)));
}

inline SceneTree load_scene_tree(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::MissingFile, path.string(), "tree file not found");
  return tree_from_json(read_json(path));
}

// ---------------------------------------------------------------------------
// UserProfile
// ---------------------------------------------------------------------------

struct UserProfile {
  std::string role_id;
  int age = 0;
  std::string gender;
  std::string occupation;
  std::string lifestyle;
  friend bool operator==(const UserProfile&, const UserProfile&) = default;
};

inline void validate_profile(const UserProfile& p) {
  if (p.role_id.empty() || p.gender.empty() || p.occupation.empty() || p.lifestyle.empty())
    throw Error(ErrorKind::InvariantViolation, p.role_id.empty() ? "profile" : p.role_id, "empty profile field");
  if (p.age < 1 || p.age > 120) throw Error(ErrorKind::InvariantViolation, p.role_id, "age outside [1, 120]");
}

/// Profile records use the keys "Age", "Gender", "Occupation" and
/// "Lifestyle Description"; "Role ID" is optional and defaults to role_<NN>.
inline std::vector<UserProfile> profiles_from_json(const json& j) {
  if (!j.is_array()) throw Error(ErrorKind::SchemaViolation, "", "roles must be a JSON array");
  std::vector<UserProfile> out;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string p = "/" + std::to_string(i);
    UserProfile up;
    char buf[16];
    std::snprintf(buf, sizeof buf, "role_%02zu", i);
    up.role_id = buf;
    if (auto r = j[i].find("Role ID"); r != j[i].end()) up.role_id = r->get<std::string>();
    up.age = static_cast<int>(detail::require_int(j[i], "Age", p));
    up.gender = detail::require_string(j[i], "Gender", p);
    up.occupation = detail::require_string(j[i], "Occupation", p);
    up.lifestyle = detail::require_string(j[i], "Lifestyle Description", p);
    validate_profile(up);
    if (!ids.insert(up.role_id).second) throw Error(ErrorKind::InvariantViolation, up.role_id, "duplicate role id");
    out.push_back(std::move(up));
  }
  return out;
}

inline json profile_to_json(const UserProfile& p) {
  return {{"Role ID", p.role_id},
          {"Age", p.age},
          {"Gender", p.gender},
          {"Occupation", p.occupation},
          {"Lifestyle Description", p.lifestyle}};
}

// ---------------------------------------------------------------------------
// Instruction samples, episodes, dataset records
// ---------------------------------------------------------------------------

struct RetrievalTrace {
  std::string zone;
  std::string viewpoint;
  std::string view;
  std::vector<std::string> instances;
  /// Attempts used per step (zone, viewpoint, view); 0 = short-circuited.
  std::map<std::string, int> attempts;
  /// Steps resolved by fallback instead of a valid LLM answer.
  std::vector<std::string> fallbacks;
  friend bool operator==(const RetrievalTrace&, const RetrievalTrace&) = default;
};

inline json trace_to_json(const RetrievalTrace& t) {
  return {{"zone", t.zone},           {"viewpoint", t.viewpoint}, {"view", t.view},
          {"instances", t.instances}, {"attempts", t.attempts},   {"fallbacks", t.fallbacks}};
}

inline RetrievalTrace trace_from_json(const json& j, const std::string& p) {
  RetrievalTrace t;
  t.zone = detail::require_string(j, "zone", p);
  t.viewpoint = detail::require_string(j, "viewpoint", p);
  t.view = detail::require_string(j, "view", p);
  t.instances = detail::require_string_list(j, "instances", p);
  if (auto a = j.find("attempts"); a != j.end()) t.attempts = a->get<std::map<std::string, int>>();
  if (auto f = j.find("fallbacks"); f != j.end()) t.fallbacks = f->get<std::vector<std::string>>();
  return t;
}

/// True iff zone ∋ viewpoint ∋ view ⊇ instances in the tree.
inline bool trace_chain_valid(const RetrievalTrace& t, const SceneTree& tree) {
  auto z = tree.zones.find(t.zone);
  if (z == tree.zones.end()) return false;
  if (std::find(z->second.viewpoints.begin(), z->second.viewpoints.end(), t.viewpoint) == z->second.viewpoints.end())
    return false;
  auto vp = tree.viewpoints.find(t.viewpoint);
  if (vp == tree.viewpoints.end() || vp->second.parent_zone != t.zone) return false;
  if (std::find(vp->second.views.begin(), vp->second.views.end(), t.view) == vp->second.views.end()) return false;
  auto v = tree.views.find(t.view);
  if (v == tree.views.end()) return false;
  for (const auto& inst : t.instances)
    if (std::find(v->second.instances.begin(), v->second.instances.end(), inst) == v->second.instances.end())
      return false;
  return true;
}

struct InstructionSample {
  std::string sample_id;
  std::string scene_id;
  std::string role_id;
  int day_index = 0;
  int seq_index = 0;
  std::string rough_text;
  std::string refined_text;
  std::size_t token_count = 0;
  std::string destination_viewpoint;
  RetrievalTrace trace;
  friend bool operator==(const InstructionSample&, const InstructionSample&) = default;
};

/// Zero-padded so lexicographic order follows (scene, role, day, seq).
inline std::string make_sample_id(const std::string& scene, const std::string& role, int day, int seq) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "/d%03d/s%04d", day, seq);
  return scene + "/" + role + buf;
}

inline json sample_to_json(const InstructionSample& s) {
  return {{"sample_id", s.sample_id},
          {"scene_id", s.scene_id},
          {"role_id", s.role_id},
          {"day_index", s.day_index},
          {"seq_index", s.seq_index},
          {"rough", s.rough_text},
          {"instruction", s.refined_text},
          {"token_count", s.token_count},
          {"destination", s.destination_viewpoint},
          {"trace", trace_to_json(s.trace)}};
}

inline InstructionSample sample_from_json(const json& j, const std::string& p = "") {
  InstructionSample s;
  s.sample_id = detail::require_string(j, "sample_id", p);
  s.scene_id = detail::require_string(j, "scene_id", p);
  s.role_id = detail::require_string(j, "role_id", p);
  s.day_index = static_cast<int>(detail::require_int(j, "day_index", p));
  s.seq_index = static_cast<int>(detail::require_int(j, "seq_index", p));
  s.rough_text = detail::require_string(j, "rough", p);
  s.refined_text = detail::require_string(j, "instruction", p);
  s.token_count = whitespace_token_count(s.refined_text);
  if (auto tc = j.find("token_count"); tc != j.end() && tc->get<std::size_t>() != s.token_count)
    throw Error(ErrorKind::InvariantViolation, s.sample_id, "token_count does not match instruction");
  s.destination_viewpoint = detail::require_string(j, "destination", p);
  s.trace = trace_from_json(detail::require(j, "trace", p), p + "/trace");
  return s;
}

/// Checks a sample against its scene. Throws InvariantViolation naming it.
inline void validate_sample(const InstructionSample& s, const NavGraph& graph, const SceneTree* tree) {
  if (!graph.contains(s.destination_viewpoint))
    throw Error(ErrorKind::InvariantViolation, s.sample_id, "destination not in graph");
  if (s.token_count != whitespace_token_count(s.refined_text))
    throw Error(ErrorKind::InvariantViolation, s.sample_id, "token_count mismatch");
  if (s.destination_viewpoint != s.trace.viewpoint)
    throw Error(ErrorKind::InvariantViolation, s.sample_id, "destination differs from retrieved viewpoint");
  if (tree && !trace_chain_valid(s.trace, *tree))
    throw Error(ErrorKind::InvariantViolation, s.sample_id, "retrieval trace is not a root-to-leaf chain");
}

struct Episode {
  std::string sample_id;
  std::string start;
  std::vector<std::string> path;
  std::string destination;
  friend bool operator==(const Episode&, const Episode&) = default;
};

inline void validate_episode(const Episode& e, const NavGraph& g) {
  if (e.path.empty() || e.path.front() != e.start)
    throw Error(ErrorKind::InvariantViolation, e.sample_id, "path must start at start node");
  if (e.path.back() != e.destination)
    throw Error(ErrorKind::InvariantViolation, e.sample_id, "path must end at destination");
  for (std::size_t i = 0; i + 1 < e.path.size(); ++i) {
    const auto a = g.find(e.path[i]);
    const auto b = g.find(e.path[i + 1]);
    if (!a || !b || !g.edge_length(*a, *b))
      throw Error(ErrorKind::InvariantViolation, e.sample_id, "consecutive path nodes not adjacent");
  }
}

/// One dataset line: an instruction sample paired with one of its episodes.
struct DatasetRecord {
  InstructionSample sample;
  int episode_index = 0;
  Episode episode;
  friend bool operator==(const DatasetRecord&, const DatasetRecord&) = default;
};

inline json record_to_json(const DatasetRecord& r) {
  const auto& s = r.sample;
  return {{"sample_id", s.sample_id},
          {"scene_id", s.scene_id},
          {"role_id", s.role_id},
          {"day_index", s.day_index},
          {"seq_index", s.seq_index},
          {"rough", s.rough_text},
          {"instruction", s.refined_text},
          {"destination", s.destination_viewpoint},
          {"episode_index", r.episode_index},
          {"start", r.episode.start},
          {"path", r.episode.path},
          {"trace", trace_to_json(s.trace)}};
}

inline DatasetRecord record_from_json(const json& j, const std::string& p = "") {
  DatasetRecord r;
  r.sample = sample_from_json(j, p);
  r.episode_index = static_cast<int>(detail::require_int(j, "episode_index", p));
  r.episode.sample_id = r.sample.sample_id;
  r.episode.start = detail::require_string(j, "start", p);
  r.episode.path = detail::require_string_list(j, "path", p);
  r.episode.destination = r.sample.destination_viewpoint;
  return r;
}

/// Writes JSONL sorted by (sample_id, episode_index). Validates every record
/// when a graph is supplied.
inline void save_dataset(std::vector<DatasetRecord> records, const fs::path& path, const NavGraph* graph = nullptr,
                         const SceneTree* tree = nullptr) {
  std::sort(records.begin(), records.end(), [](const DatasetRecord& a, const DatasetRecord& b) {
    return std::tie(a.sample.sample_id, a.episode_index) < std::tie(b.sample.sample_id, b.episode_index);
  });
  std::vector<json> lines;
  lines.reserve(records.size());
  for (const auto& r : records) {
    if (graph) {
      validate_sample(r.sample, *graph, tree);
      validate_episode(r.episode, *graph);
    }
    lines.push_back(record_to_json(r));
  }
  write_text_atomic(path, jsonl_text(lines));
}

inline std::vector<DatasetRecord> load_dataset(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::MissingFile, path.string(), "dataset file not found");
  std::vector<DatasetRecord> out;
  const auto lines = read_jsonl(path);
  for (std::size_t i = 0; i < lines.size(); ++i)
    out.push_back(record_from_json(lines[i], path.string() + ":" + std::to_string(i + 1)));
  return out;
}

inline void save_samples(std::vector<InstructionSample> samples, const fs::path& path) {
  std::sort(samples.begin(), samples.end(),
            [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; });
  std::vector<json> lines;
  for (const auto& s : samples) lines.push_back(sample_to_json(s));
  write_text_atomic(path, jsonl_text(lines));
}

inline std::vector<InstructionSample> load_samples(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::MissingFile, path.string(), "samples file not found");
  std::vector<InstructionSample> out;
  const auto lines = read_jsonl(path);
  for (std::size_t i = 0; i < lines.size(); ++i)
    out.push_back(sample_from_json(lines[i], path.string() + ":" + std::to_string(i + 1)));
  return out;
}

}  // namespace navrag
