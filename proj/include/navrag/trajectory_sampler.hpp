#pragma once

// Shortest paths (shared with the evaluator) and start-point sampling.
// Path lengths are always accumulated from the path's first node, so a
// given path has one length no matter which routine computed it.

#include <algorithm>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "navrag/error.hpp"
#include "navrag/hashing.hpp"
#include "navrag/parallel.hpp"
#include "navrag/scene_model.hpp"

namespace navrag {

struct PathResult {
  std::vector<std::string> path;
  double length = 0.0;
};

/// Single-source shortest paths. Among equal-length paths the one whose
/// id sequence is lexicographically smallest wins.
class ShortestPathTree {
 public:
  ShortestPathTree(const NavGraph& g, std::size_t source) : source_(source) {
    // Dijkstra over (length, id sequence) keys; both components only grow
    // when a path is extended, so the first settled key is optimal.
    struct Item {
      double dist;
      std::vector<std::string> path;
      std::size_t node;
      bool operator>(const Item& o) const { return dist != o.dist ? dist > o.dist : path > o.path; }
    };
    dist_.assign(g.size(), std::numeric_limits<double>::infinity());
    path_.assign(g.size(), {});
    std::vector<bool> done(g.size(), false);
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    dist_[source] = 0.0;
    path_[source] = {g.node(source).id};
    heap.push({0.0, path_[source], source});
    while (!heap.empty()) {
      Item it = heap.top();
      heap.pop();
      if (done[it.node]) continue;
      done[it.node] = true;
      for (const auto& adj : g.neighbors(it.node)) {
        if (done[adj.node]) continue;
        Item next{it.dist + adj.length, it.path, adj.node};
        next.path.push_back(g.node(adj.node).id);
        if (next.dist < dist_[adj.node] || (next.dist == dist_[adj.node] && next.path < path_[adj.node])) {
          dist_[adj.node] = next.dist;
          path_[adj.node] = next.path;
          heap.push(std::move(next));
        }
      }
    }
  }

  std::size_t source() const { return source_; }
  double distance(std::size_t target) const { return dist_.at(target); }
  const std::vector<std::string>& path(std::size_t target) const { return path_.at(target); }

 private:
  std::size_t source_;
  std::vector<double> dist_;
  std::vector<std::vector<std::string>> path_;
};

/// Thread-safe memo of shortest-path trees keyed by source node.
class PathCache {
 public:
  explicit PathCache(const NavGraph& g) : g_(g), trees_(g.size()) {}

  const ShortestPathTree& from(std::size_t source) {
    std::call_once(trees_.at(source).once, [&] { trees_[source].tree = std::make_unique<ShortestPathTree>(g_, source); });
    return *trees_[source].tree;
  }

  /// Throws UnknownNode for ids outside the graph, Unreachable when no path.
  PathResult shortest_path(const std::string& a, const std::string& b) {
    const auto ia = g_.index_of(a);
    const auto ib = g_.index_of(b);
    const auto& t = from(ia);
    if (t.path(ib).empty()) throw Error(ErrorKind::Unreachable, a + "->" + b, "no path between nodes");
    return {t.path(ib), t.distance(ib)};
  }

  const NavGraph& graph() const { return g_; }

 private:
  struct Slot {
    std::once_flag once;
    std::unique_ptr<ShortestPathTree> tree;
  };
  const NavGraph& g_;
  std::vector<Slot> trees_;
};

inline PathResult shortest_path(const NavGraph& g, const std::string& a, const std::string& b) {
  PathCache cache(g);
  return cache.shortest_path(a, b);
}

/// Sum of edge lengths along `path`, accumulated from its first node.
inline double path_length(const NavGraph& g, const std::vector<std::string>& path) {
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    const auto len = g.edge_length(g.index_of(path[i]), g.index_of(path[i + 1]));
    if (!len) throw Error(ErrorKind::InvariantViolation, path[i] + "->" + path[i + 1], "consecutive nodes not adjacent");
    total += *len;
  }
  return total;
}

/// Hop counts from `source` (-1 when unreachable).
inline std::vector<int> hop_distances(const NavGraph& g, std::size_t source) {
  std::vector<int> hops(g.size(), -1);
  std::queue<std::size_t> q;
  hops[source] = 0;
  q.push(source);
  while (!q.empty()) {
    const auto u = q.front();
    q.pop();
    for (const auto& adj : g.neighbors(u))
      if (hops[adj.node] < 0) {
        hops[adj.node] = hops[u] + 1;
        q.push(adj.node);
      }
  }
  return hops;
}

struct SamplerConfig {
  int trajectories_per_instruction = 5;
  int min_hops = 2;
  std::optional<int> max_hops;
  std::uint64_t rng_seed = 0;
  int jobs = 8;

  void validate() const {
    if (trajectories_per_instruction < 1) throw Error(ErrorKind::ConfigError, "trajectories_per_instruction", "must be >= 1");
    if (min_hops < 1) throw Error(ErrorKind::ConfigError, "min_hops", "must be >= 1");
    if (max_hops && *max_hops < min_hops) throw Error(ErrorKind::ConfigError, "max_hops", "must be >= min_hops");
  }

  json to_json() const {
    return {{"trajectories_per_instruction", trajectories_per_instruction},
            {"min_hops", min_hops},
            {"max_hops", max_hops ? json(*max_hops) : json(nullptr)},
            {"rng_seed", rng_seed}};
  }
};

inline constexpr const char* kFlagRelaxedHops = "relaxed_min_hops";
inline constexpr const char* kFlagWithReplacement = "with_replacement";

struct SampledEpisodes {
  std::vector<Episode> episodes;
  std::vector<std::string> flags;
};

/// Starts are drawn from nodes whose hop distance to the destination lies in
/// [min_hops, max_hops]: without replacement when enough exist, otherwise
/// with replacement (flagged). With no eligible node, min_hops drops to 1
/// (flagged); a destination with no neighbours raises NoEligibleStart.
inline SampledEpisodes sample_trajectories(PathCache& paths, const InstructionSample& sample, const SamplerConfig& cfg) {
  const NavGraph& g = paths.graph();
  const std::size_t dest = g.index_of(sample.destination_viewpoint);
  const auto hops = hop_distances(g, dest);
  SampledEpisodes out;
  auto eligible_for = [&](int lo) {
    std::vector<std::size_t> e;
    for (std::size_t u = 0; u < g.size(); ++u)
      if (hops[u] >= lo && (!cfg.max_hops || hops[u] <= *cfg.max_hops)) e.push_back(u);
    return e;
  };
  auto eligible = eligible_for(cfg.min_hops);
  if (eligible.empty() && cfg.min_hops > 1) {
    out.flags.push_back(kFlagRelaxedHops);
    eligible = eligible_for(1);
  }
  if (eligible.empty())
    throw Error(ErrorKind::NoEligibleStart, sample.sample_id, "destination " + sample.destination_viewpoint + " has no eligible start");

  Rng rng(derive_seed(cfg.rng_seed, sample.sample_id));
  const auto k = static_cast<std::size_t>(cfg.trajectories_per_instruction);
  std::vector<std::size_t> starts;
  if (eligible.size() >= k) {
    rng.shuffle(eligible);
    starts.assign(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(k));
  } else {
    out.flags.push_back(kFlagWithReplacement);
    for (std::size_t i = 0; i < k; ++i) starts.push_back(eligible[rng.below(eligible.size())]);
  }
  for (auto s : starts) {
    const auto& tree = paths.from(s);
    out.episodes.push_back({sample.sample_id, g.node(s).id, tree.path(dest), sample.destination_viewpoint});
  }
  return out;
}

struct SamplingResult {
  std::vector<DatasetRecord> records;
  /// sample_id -> flags, only for flagged samples.
  std::map<std::string, std::vector<std::string>> flags;
};

inline SamplingResult sample_dataset(const NavGraph& g, const std::vector<InstructionSample>& samples,
                                     const SamplerConfig& cfg) {
  cfg.validate();
  PathCache paths(g);
  std::vector<SampledEpisodes> per(samples.size());
  parallel_for(samples.size(), cfg.jobs, [&](std::size_t i) { per[i] = sample_trajectories(paths, samples[i], cfg); });
  SamplingResult out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!per[i].flags.empty()) out.flags[samples[i].sample_id] = per[i].flags;
    for (std::size_t k = 0; k < per[i].episodes.size(); ++k)
      out.records.push_back({samples[i], static_cast<int>(k), std::move(per[i].episodes[k])});
  }
  std::sort(out.records.begin(), out.records.end(), [](const DatasetRecord& a, const DatasetRecord& b) {
    if (a.sample.sample_id != b.sample.sample_id) return a.sample.sample_id < b.sample.sample_id;
    return a.episode_index < b.episode_index;
  });
  return out;
}

}  // namespace navrag
