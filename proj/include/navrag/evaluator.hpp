#pragma once

// NE, SR, OSR and SPL for predicted runs against ground-truth episodes, and
// dataset statistics.
//
//   NE   = d(stop, dest)
//   SR   = [d(stop, dest) <= 3 m]
//   OSR  = [min over visited nodes v of d(v, dest) <= 3 m]
//   SPL  = S * l / max(p, l), l = d(start, dest), p = agent path length;
//          an episode with l = 0 contributes S.
// d is the graph shortest-path length (or Euclidean with euclidean_success).

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "navrag/scene_model.hpp"
#include "navrag/trajectory_sampler.hpp"

namespace navrag {

inline constexpr double kSuccessDistance = 3.0;

struct PredictedRun {
  std::string sample_id;
  int episode_index = 0;
  std::vector<std::string> path;
};

inline PredictedRun run_from_json(const json& j, const std::string& p = "") {
  PredictedRun r;
  r.sample_id = detail::require_string(j, "sample_id", p);
  r.episode_index = static_cast<int>(detail::require_int(j, "episode_index", p));
  r.path = detail::require_string_list(j, "path", p);
  return r;
}

inline json run_to_json(const PredictedRun& r) {
  return {{"sample_id", r.sample_id}, {"episode_index", r.episode_index}, {"path", r.path}};
}

inline std::vector<PredictedRun> load_predictions(const fs::path& path) {
  std::vector<PredictedRun> out;
  const auto lines = read_jsonl(path);
  for (std::size_t i = 0; i < lines.size(); ++i) out.push_back(run_from_json(lines[i], "/" + std::to_string(i)));
  return out;
}

struct EvalConfig {
  double success_distance = kSuccessDistance;
  /// Judge success by straight-line distance instead of graph distance.
  bool euclidean_success = false;
};

struct EpisodeMetrics {
  std::string sample_id;
  int episode_index = 0;
  double navigation_error = 0.0;
  bool success = false;
  bool oracle_success = false;
  double spl = 0.0;
  double path_length = 0.0;
  double shortest_length = 0.0;
};

struct EvalReport {
  std::size_t n_episodes = 0;
  double ne = 0.0;
  double osr = 0.0;
  double sr = 0.0;
  double spl = 0.0;
  /// Sorted by (sample_id, episode_index).
  std::vector<EpisodeMetrics> episodes;

  json to_json() const {
    json per = json::array();
    for (const auto& e : episodes)
      per.push_back({{"sample_id", e.sample_id},
                     {"episode_index", e.episode_index},
                     {"ne", quantize(e.navigation_error)},
                     {"success", e.success},
                     {"oracle_success", e.oracle_success},
                     {"spl", quantize(e.spl)},
                     {"path_length", quantize(e.path_length)},
                     {"shortest_length", quantize(e.shortest_length)}});
    return {{"n_episodes", n_episodes},
            {"NE", quantize(ne)},
            {"OSR", quantize(osr)},
            {"SR", quantize(sr)},
            {"SPL", quantize(spl)},
            {"episodes", per}};
  }
};

class Evaluator {
 public:
  explicit Evaluator(const NavGraph& g, EvalConfig cfg = {}) : g_(g), paths_(g), cfg_(cfg) {}

  /// Distance used for NE.
  double navigation_error(const std::string& node, const std::string& dest) {
    return paths_.shortest_path(node, dest).length;
  }

  /// Distance used for the success tests.
  double success_distance(const std::string& node, const std::string& dest) {
    if (cfg_.euclidean_success) return distance(g_.node(g_.index_of(node)).position, g_.node(g_.index_of(dest)).position);
    return navigation_error(node, dest);
  }

  bool success(const PredictedRun& run, const Episode& ep) {
    check_run(run, ep);
    return success_distance(run.path.back(), ep.destination) <= cfg_.success_distance;
  }

  bool oracle_success(const PredictedRun& run, const Episode& ep) {
    check_run(run, ep);
    return std::any_of(run.path.begin(), run.path.end(),
                       [&](const std::string& v) { return success_distance(v, ep.destination) <= cfg_.success_distance; });
  }

  EpisodeMetrics score(const PredictedRun& run, const Episode& ep) {
    check_run(run, ep);
    EpisodeMetrics m;
    m.sample_id = run.sample_id;
    m.episode_index = run.episode_index;
    m.navigation_error = navigation_error(run.path.back(), ep.destination);
    m.success = success(run, ep);
    m.oracle_success = oracle_success(run, ep);
    m.path_length = path_length(g_, run.path);
    m.shortest_length = navigation_error(ep.start, ep.destination);
    if (m.success)
      m.spl = m.shortest_length == 0.0 ? 1.0 : m.shortest_length / std::max(m.path_length, m.shortest_length);
    return m;
  }

  /// Every dataset episode needs exactly one prediction and vice versa;
  /// otherwise Misalignment lists the missing and extra keys.
  EvalReport evaluate(const std::vector<DatasetRecord>& dataset, const std::vector<PredictedRun>& runs) {
    std::map<std::pair<std::string, int>, const Episode*> expected;
    for (const auto& r : dataset) expected[{r.sample.sample_id, r.episode_index}] = &r.episode;
    std::map<std::pair<std::string, int>, const PredictedRun*> got;
    std::vector<std::string> extra, missing;
    auto key_text = [](const std::pair<std::string, int>& k) { return k.first + "#" + std::to_string(k.second); };
    for (const auto& r : runs) {
      const auto key = std::make_pair(r.sample_id, r.episode_index);
      if (!expected.count(key) || !got.emplace(key, &r).second) extra.push_back(key_text(key));
    }
    for (const auto& [k, _] : expected)
      if (!got.count(k)) missing.push_back(key_text(k));
    if (!extra.empty() || !missing.empty()) {
      std::string msg = "missing:";
      for (const auto& m : missing) msg += " " + m;
      msg += "; extra:";
      for (const auto& e : extra) msg += " " + e;
      throw Error(ErrorKind::Misalignment, "predictions", msg);
    }
    EvalReport rep;
    double ne = 0, sr = 0, osr = 0, spl = 0;
    for (const auto& [k, ep] : expected) {
      EpisodeMetrics m = score(*got.at(k), *ep);
      ne += m.navigation_error;
      sr += m.success;
      osr += m.oracle_success;
      spl += m.spl;
      rep.episodes.push_back(std::move(m));
    }
    rep.n_episodes = rep.episodes.size();
    if (rep.n_episodes > 0) {
      const double n = static_cast<double>(rep.n_episodes);
      rep.ne = ne / n;
      rep.sr = 100.0 * sr / n;
      rep.osr = 100.0 * osr / n;
      rep.spl = 100.0 * spl / n;
    }
    return rep;
  }

 private:
  void check_run(const PredictedRun& run, const Episode& ep) const {
    if (run.path.empty()) throw Error(ErrorKind::InvariantViolation, run.sample_id, "empty predicted path");
    for (const auto& v : run.path)
      if (!g_.contains(v)) throw Error(ErrorKind::UnknownNode, v, "predicted path leaves the graph");
    if (run.path.front() != ep.start)
      throw Error(ErrorKind::InvariantViolation, run.sample_id, "predicted path does not begin at the episode start");
    for (std::size_t i = 0; i + 1 < run.path.size(); ++i)
      if (!g_.edge_length(g_.index_of(run.path[i]), g_.index_of(run.path[i + 1])))
        throw Error(ErrorKind::InvariantViolation, run.sample_id, "predicted path steps between non-adjacent nodes");
  }

  const NavGraph& g_;
  PathCache paths_;
  EvalConfig cfg_;
};

// ---------------------------------------------------------------------------
// Dataset statistics
// ---------------------------------------------------------------------------

struct DatasetStats {
  std::size_t scene_count = 0;
  std::size_t instruction_count = 0;
  double mean_token_length = 0.0;
  std::size_t episodes = 0;

  json to_json() const {
    return {{"scene_count", scene_count},
            {"instruction_count", instruction_count},
            {"mean_token_length", quantize(mean_token_length)},
            {"episodes", episodes}};
  }

  /// "#Scene  #Instr.  Instr. length  #Episodes" row.
  std::string table_row() const {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-8s %-10s %-14s %s\n%-8zu %-10zu %-14.2f %zu", "#Scene", "#Instr.", "Instr. length",
                  "#Episodes", scene_count, instruction_count, mean_token_length, episodes);
    return buf;
  }
};

/// Instructions are distinct sample_ids; length is the whitespace token
/// count of the refined instruction, summed in sample_id order.
inline DatasetStats dataset_stats(const std::vector<DatasetRecord>& records) {
  DatasetStats s;
  std::set<std::string> scenes;
  std::map<std::string, std::size_t> tokens;
  for (const auto& r : records) {
    scenes.insert(r.sample.scene_id);
    tokens.emplace(r.sample.sample_id, whitespace_token_count(r.sample.refined_text));
  }
  s.scene_count = scenes.size();
  s.instruction_count = tokens.size();
  s.episodes = records.size();
  double total = 0.0;
  for (const auto& [_, t] : tokens) total += static_cast<double>(t);
  if (s.instruction_count > 0) s.mean_token_length = total / static_cast<double>(s.instruction_count);
  return s;
}

/// Every dataset.jsonl under `root` (or `root` itself when it is a file).
inline std::vector<fs::path> find_dataset_files(const fs::path& root) {
  if (!fs::exists(root)) throw Error(ErrorKind::MissingFile, root.string(), "dataset path not found");
  if (fs::is_regular_file(root)) return {root};
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() == "dataset.jsonl") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

inline DatasetStats dataset_stats(const fs::path& root) {
  std::vector<DatasetRecord> all;
  for (const auto& f : find_dataset_files(root)) {
    auto part = load_dataset(f);
    all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return dataset_stats(all);
}

}  // namespace navrag
