#pragma once

// File-level stages and the checkpointed end-to-end pipeline.
//
// Per scene, under <out>/<scene_id>/:
//   graph.json, build_log.json        build-graph
//   layers.json                       annotate
//   zones.json, tree.json             partition
//   samples.jsonl, generation_log.json generate
//   dataset.jsonl, sampling_log.json  sample
//   stats.json                        stats
//   checkpoint.json                   stage input hashes, output hashes, usage
// plus <out>/manifest.json (deterministic) and <out>/run_log.json (cache and
// timing details of the last invocation).

#include <chrono>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "navrag/evaluator.hpp"
#include "navrag/graph_builder.hpp"
#include "navrag/instruction_generator.hpp"
#include "navrag/llm_gateway.hpp"
#include "navrag/parallel.hpp"
#include "navrag/prompts.hpp"
#include "navrag/roles.hpp"
#include "navrag/trajectory_sampler.hpp"
#include "navrag/tree_annotator.hpp"

namespace navrag {

inline std::string sha256_file(const fs::path& path) { return sha256_hex(read_text(path)); }

inline std::vector<UserProfile> load_profiles(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::MissingFile, path.string(), "roles file not found");
  return profiles_from_json(read_json(path));
}

// ---------------------------------------------------------------------------
// Stages. Each reads and writes files only, so running the subcommands one
// by one gives the same bytes as the pipeline.
// ---------------------------------------------------------------------------

namespace stages {

inline json build_graph(const fs::path& bundle_dir, const GraphBuildConfig& cfg, const fs::path& graph_out,
                        const fs::path& log_out) {
  const SceneBundle bundle = load_scene_bundle(bundle_dir);
  const BuildResult r = navrag::build_graph(bundle, cfg);
  save_graph(r.graph, graph_out);
  write_text_atomic(log_out, canonical_dump(r.log.to_json()));
  return {{"nodes", r.graph.size()},
          {"edges", r.graph.edges().size()},
          {"repair_edges", r.log.repair_edges.size()},
          {"over_cap_nodes", r.log.over_cap_nodes},
          {"dropped_nodes", r.log.dropped_nodes}};
}

inline json annotate(const fs::path& bundle_dir, const fs::path& graph_path, const fs::path& layers_out,
                     LlmGateway& gateway, const PromptSet& prompts, const AnnotatorConfig& cfg) {
  const SceneBundle bundle = load_scene_bundle(bundle_dir);
  const NavGraph graph = load_graph(graph_path);
  const SceneTree layers = annotate_layers(bundle, graph, gateway, prompts, cfg);
  save_layers(layers, layers_out);
  return {{"views", layers.views.size()}, {"instances", layers.instances.size()}};
}

inline json partition(const fs::path& graph_path, const fs::path& layers_path, const fs::path& zones_out,
                      const fs::path& tree_out, LlmGateway& gateway, const PromptSet& prompts,
                      const AnnotatorConfig& cfg) {
  const NavGraph graph = load_graph(graph_path);
  SceneTree layers = load_layers(layers_path);
  const ZonePartition p = make_partition(graph, layers.viewpoints, gateway, prompts, cfg);
  const SceneTree tree = assemble_tree(std::move(layers), p, graph, gateway, prompts, cfg);
  write_text_atomic(zones_out, canonical_dump(partition_to_json(p)));
  save_scene_tree(tree, tree_out);
  std::size_t flagged = 0;
  for (const auto& q : p.query_log) flagged += q.flagged;
  return {{"zones", p.zones.size()}, {"queries", p.query_log.size()}, {"flagged_queries", flagged}, {"baseline", p.baseline}};
}

inline json generate(const fs::path& tree_path, const fs::path& graph_path, const GenerationConfig& cfg,
                     const fs::path& samples_out, const fs::path& log_out, LlmGateway& gateway,
                     const PromptSet& prompts) {
  const SceneTree tree = load_scene_tree(tree_path);
  const NavGraph graph = load_graph(graph_path);
  const GenerationResult r = generate_scene(tree, gateway, prompts, cfg);
  for (const auto& s : r.samples) validate_sample(s, graph, &tree);
  save_samples(r.samples, samples_out);
  const json log = {{"samples", r.samples.size()},
                    {"aborted_days", r.aborted_days},
                    {"retrieval_steps", r.retrieval_steps},
                    {"fallback_steps", r.fallback_steps},
                    {"fallback_fraction", quantize(r.fallback_fraction())},
                    {"config", cfg.to_json()}};
  write_text_atomic(log_out, canonical_dump(log));
  return {{"samples", r.samples.size()},
          {"aborted_days", r.aborted_days.size()},
          {"fallback_fraction", quantize(r.fallback_fraction())}};
}

inline json sample(const fs::path& graph_path, const fs::path& samples_path, const SamplerConfig& cfg,
                   const fs::path& dataset_out, const fs::path& log_out) {
  const NavGraph graph = load_graph(graph_path);
  const auto samples = load_samples(samples_path);
  const SamplingResult r = sample_dataset(graph, samples, cfg);
  save_dataset(r.records, dataset_out, &graph);
  write_text_atomic(log_out, canonical_dump({{"episodes", r.records.size()}, {"flags", r.flags}, {"config", cfg.to_json()}}));
  return {{"episodes", r.records.size()}, {"flagged_samples", r.flags.size()}};
}

inline json stats(const fs::path& dataset_path, const fs::path& stats_out) {
  const DatasetStats s = dataset_stats(dataset_path);
  write_text_atomic(stats_out, canonical_dump(s.to_json()));
  return s.to_json();
}

}  // namespace stages

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& pipeline_stages() {
  static const std::vector<std::string> names = {"build-graph", "annotate", "partition", "generate", "sample", "stats"};
  return names;
}

struct PipelineConfig {
  /// A bundle directory, or a directory of bundle directories.
  fs::path bundles;
  fs::path out;
  /// Defaults to <out>/cache.
  std::optional<fs::path> cache_dir;
  std::optional<fs::path> prompts_dir;
  /// Defaults to the shipped profiles.
  std::optional<fs::path> roles_file;
  GraphBuildConfig graph;
  AnnotatorConfig annotator;
  GenerationConfig generation;
  SamplerConfig sampler;
  GatewayConfig gateway;
  bool mock = false;
  std::uint64_t seed = 0;
  std::size_t mock_verbosity = 12;
  /// Scenes processed in parallel.
  int jobs = 1;
  /// Stop every scene after this stage (used to exercise resume).
  std::optional<std::string> stop_after;

  /// One seed drives graph building, generation, sampling and the mock.
  void apply_seed() {
    graph.rng_seed = seed;
    generation.rng_seed = seed;
    sampler.rng_seed = seed;
    if (mock) gateway.model = mock_model_id(seed);
  }

  fs::path resolved_cache_dir() const { return cache_dir ? *cache_dir : out / "cache"; }

  void validate() const {
    if (bundles.empty()) throw Error(ErrorKind::ConfigError, "bundles", "bundle directory is required");
    if (out.empty()) throw Error(ErrorKind::ConfigError, "out", "output directory is required");
    if (jobs < 1) throw Error(ErrorKind::ConfigError, "jobs", "must be >= 1");
    if (stop_after && std::find(pipeline_stages().begin(), pipeline_stages().end(), *stop_after) == pipeline_stages().end())
      throw Error(ErrorKind::ConfigError, "stop_after", "unknown stage " + *stop_after);
    graph.validate();
    generation.validate();
    sampler.validate();
  }

  /// Everything that influences output bytes; paths are left out so the
  /// manifest does not depend on where the run happened.
  json to_json() const {
    json annot = {{"temperature", quantize(annotator.temperature)},
                  {"max_tokens", annotator.max_tokens},
                  {"zone_temperature", quantize(annotator.zones.temperature)},
                  {"zone_max_tokens", annotator.zones.max_tokens},
                  {"baseline_threshold", annotator.baseline_threshold ? json(quantize(*annotator.baseline_threshold)) : json(nullptr)}};
    return {{"graph", graph.to_json()},
            {"annotator", annot},
            {"generation", generation.to_json()},
            {"sampler", sampler.to_json()},
            {"model", gateway.model},
            {"json_attempts", gateway.json_attempts},
            {"mock", mock},
            {"seed", seed},
            {"mock_verbosity", mock ? json(mock_verbosity) : json(nullptr)}};
  }
};

struct SceneOutcome {
  std::string scene_id;
  fs::path bundle_dir;
  bool ok = true;
  std::string error;
  ErrorKind error_kind = ErrorKind::IoError;
  /// Deterministic record for the manifest.
  json manifest = json::object();
  /// Per-invocation record for the run log.
  json run = json::object();
};

struct PipelineResult {
  std::vector<SceneOutcome> scenes;
  json manifest;
  bool all_ok() const {
    return std::all_of(scenes.begin(), scenes.end(), [](const SceneOutcome& s) { return s.ok; });
  }
};

/// Bundle directories in id order: `root` itself when it holds bundle.json,
/// else its immediate subdirectories that do.
inline std::vector<fs::path> discover_bundles(const fs::path& root) {
  if (!fs::exists(root)) throw Error(ErrorKind::MissingFile, root.string(), "bundle directory not found");
  if (fs::exists(root / "bundle.json")) return {root};
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "bundle.json")) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw Error(ErrorKind::MissingFile, (root / "bundle.json").string(), "no scene bundles found");
  return out;
}

namespace detail {

inline json deterministic_usage(const Accounting& acc) {
  json j = json::object();
  for (const auto& [stage, s] : acc.snapshot())
    j[stage] = {{"requests", s.requests},
                {"json_reprompts", s.json_reprompts},
                {"schema_failures", s.schema_failures},
                {"prompt_tokens", s.prompt_tokens},
                {"completion_tokens", s.completion_tokens}};
  return j;
}

inline json volatile_usage(const Accounting& acc) {
  json j = json::object();
  for (const auto& [stage, s] : acc.snapshot())
    j[stage] = {{"backend_calls", s.backend_calls}, {"cache_hits", s.cache_hits}, {"network_retries", s.network_retries}};
  return j;
}

/// Hash of a stage's inputs: its name, the config that matters to it and
/// the bytes of every input file.
inline std::string stage_key(const std::string& stage, const json& config, const std::vector<fs::path>& inputs) {
  json j = {{"stage", stage}, {"config", config}, {"inputs", json::array()}};
  for (const auto& p : inputs) j["inputs"].push_back(sha256_file(p));
  return sha256_hex(canonical_line(j));
}

class SceneRunner {
 public:
  SceneRunner(const PipelineConfig& cfg, const fs::path& bundle_dir, const std::string& scene_id,
              const std::shared_ptr<Backend>& backend, const std::shared_ptr<ConcurrencyLimiter>& limiter,
              const PromptSet& prompts, const std::vector<UserProfile>& roles)
      : cfg_(cfg), bundle_dir_(bundle_dir), dir_(cfg.out / scene_id), prompts_(prompts), roles_(roles),
        gateway_(backend, gateway_config(cfg), limiter) {
    if (fs::exists(dir_ / "checkpoint.json")) checkpoint_ = read_json(dir_ / "checkpoint.json");
    if (!checkpoint_.is_object()) checkpoint_ = json::object();
  }

  void run(SceneOutcome& outcome) {
    const fs::path d = dir_;
    const json prompt_cfg = {{"model", gateway_.model()}, {"prompts", prompts_.hashes()}};
    const json& full = cfg_.to_json();
    const fs::path bundle_file = bundle_dir_ / "bundle.json";

    step(outcome, "build-graph", full["graph"], {bundle_file}, {d / "graph.json", d / "build_log.json"},
         [&] { return stages::build_graph(bundle_dir_, cfg_.graph, d / "graph.json", d / "build_log.json"); });
    if (stopped_) return;
    step(outcome, "annotate", {{"annotator", full["annotator"]}, {"llm", prompt_cfg}}, {bundle_file, d / "graph.json"},
         {d / "layers.json"},
         [&] { return stages::annotate(bundle_dir_, d / "graph.json", d / "layers.json", gateway_, prompts_, cfg_.annotator); });
    if (stopped_) return;
    step(outcome, "partition", {{"annotator", full["annotator"]}, {"llm", prompt_cfg}}, {d / "graph.json", d / "layers.json"},
         {d / "zones.json", d / "tree.json"}, [&] {
           return stages::partition(d / "graph.json", d / "layers.json", d / "zones.json", d / "tree.json", gateway_,
                                    prompts_, cfg_.annotator);
         });
    if (stopped_) return;
    json roles_json = json::array();
    for (const auto& r : roles_) roles_json.push_back(profile_to_json(r));
    step(outcome, "generate", {{"generation", full["generation"]}, {"roles", roles_json}, {"llm", prompt_cfg}},
         {d / "tree.json", d / "graph.json"}, {d / "samples.jsonl", d / "generation_log.json"}, [&] {
           GenerationConfig g = cfg_.generation;
           g.roles = roles_;
           return stages::generate(d / "tree.json", d / "graph.json", g, d / "samples.jsonl", d / "generation_log.json",
                                   gateway_, prompts_);
         });
    if (stopped_) return;
    step(outcome, "sample", full["sampler"], {d / "graph.json", d / "samples.jsonl"},
         {d / "dataset.jsonl", d / "sampling_log.json"}, [&] {
           return stages::sample(d / "graph.json", d / "samples.jsonl", cfg_.sampler, d / "dataset.jsonl",
                                 d / "sampling_log.json");
         });
    if (stopped_) return;
    step(outcome, "stats", json::object(), {d / "dataset.jsonl"}, {d / "stats.json"},
         [&] { return stages::stats(d / "dataset.jsonl", d / "stats.json"); });
  }

 private:
  static GatewayConfig gateway_config(const PipelineConfig& cfg) {
    GatewayConfig g = cfg.gateway;
    g.cache_dir = cfg.resolved_cache_dir();
    return g;
  }

  template <class Fn>
  void step(SceneOutcome& outcome, const std::string& stage, const json& config, const std::vector<fs::path>& inputs,
            const std::vector<fs::path>& outputs, Fn&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::string key = stage_key(stage, config, inputs);
    json record;
    bool skipped = false;
    if (checkpoint_.contains(stage) && checkpoint_[stage].value("key", "") == key) {
      skipped = true;
      for (const auto& p : outputs) {
        const auto name = p.filename().string();
        if (!fs::exists(p) || checkpoint_[stage]["outputs"].value(name, "") != sha256_file(p)) skipped = false;
      }
      if (skipped) record = checkpoint_[stage];
    }
    json run_info = {{"skipped", skipped}};
    if (!skipped) {
      gateway_.accounting().reset();
      const json summary = fn();
      record = {{"key", key}, {"outputs", json::object()}, {"summary", summary},
                {"usage", deterministic_usage(gateway_.accounting())}};
      for (const auto& p : outputs) record["outputs"][p.filename().string()] = sha256_file(p);
      run_info["usage"] = volatile_usage(gateway_.accounting());
      checkpoint_[stage] = record;
      // Later stages keyed on stale outputs will miss on their own; the
      // checkpoint is written before moving on so a kill here is resumable.
      write_text_atomic(dir_ / "checkpoint.json", canonical_dump(checkpoint_));
    }
    run_info["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    outcome.manifest["stages"][stage] = record;
    outcome.run["stages"][stage] = run_info;
    if (cfg_.stop_after && *cfg_.stop_after == stage) stopped_ = true;
  }

  const PipelineConfig& cfg_;
  fs::path bundle_dir_;
  fs::path dir_;
  const PromptSet& prompts_;
  const std::vector<UserProfile>& roles_;
  LlmGateway gateway_;
  json checkpoint_;
  bool stopped_ = false;
};

}  // namespace detail

/// Runs every scene through all stages, skipping stages whose inputs and
/// outputs match the checkpoint. A failing scene is recorded and does not
/// stop the others.
inline PipelineResult run_pipeline(PipelineConfig cfg, std::shared_ptr<Backend> backend) {
  cfg.validate();
  const auto bundle_dirs = discover_bundles(cfg.bundles);
  const PromptSet prompts = cfg.prompts_dir ? PromptSet::load(*cfg.prompts_dir) : PromptSet();
  const std::vector<UserProfile> roles = cfg.roles_file ? load_profiles(*cfg.roles_file) : default_profiles();
  fs::create_directories(cfg.out);
  auto limiter = std::make_shared<ConcurrencyLimiter>(cfg.gateway.max_concurrency);

  PipelineResult result;
  result.scenes.resize(bundle_dirs.size());
  std::map<std::string, fs::path> ids;
  for (std::size_t i = 0; i < bundle_dirs.size(); ++i) {
    auto& s = result.scenes[i];
    s.bundle_dir = bundle_dirs[i];
    try {
      s.scene_id = bundle_from_json(read_json(bundle_dirs[i] / "bundle.json")).scene_id;
    } catch (const Error& e) {
      s.scene_id = bundle_dirs[i].filename().string();
      s.ok = false;
      s.error = e.what();
      s.error_kind = e.kind();
      continue;
    }
    if (!ids.emplace(s.scene_id, bundle_dirs[i]).second)
      throw Error(ErrorKind::ConfigError, s.scene_id, "scene id used by two bundles");
  }

  parallel_for(result.scenes.size(), cfg.jobs, [&](std::size_t i) {
    auto& s = result.scenes[i];
    if (!s.ok) return;
    try {
      detail::SceneRunner runner(cfg, s.bundle_dir, s.scene_id, backend, limiter, prompts, roles);
      runner.run(s);
    } catch (const Error& e) {
      s.ok = false;
      s.error = e.what();
      s.error_kind = e.kind();
    }
  });

  json scenes = json::object();
  json run_scenes = json::object();
  std::size_t instructions = 0, episodes = 0;
  for (const auto& s : result.scenes) {
    json m = s.manifest;
    m["status"] = s.ok ? "ok" : "failed";
    if (!s.ok) m["error"] = s.error;
    if (m.contains("stages") && m["stages"].contains("stats")) {
      instructions += m["stages"]["stats"]["summary"].value("instruction_count", std::size_t{0});
      episodes += m["stages"]["stats"]["summary"].value("episodes", std::size_t{0});
    }
    scenes[s.scene_id] = m;
    run_scenes[s.scene_id] = s.run;
  }
  result.manifest = {{"config", cfg.to_json()},
                     {"prompts", prompts.hashes()},
                     {"prompts_combined", prompts.combined_hash()},
                     {"model", cfg.gateway.model},
                     {"scenes", scenes},
                     {"totals",
                      {{"scenes", result.scenes.size()},
                       {"failed_scenes", std::count_if(result.scenes.begin(), result.scenes.end(),
                                                       [](const SceneOutcome& s) { return !s.ok; })},
                       {"instructions", instructions},
                       {"episodes", episodes}}}};
  write_text_atomic(cfg.out / "manifest.json", canonical_dump(result.manifest));
  write_text_atomic(cfg.out / "run_log.json", canonical_dump({{"scenes", run_scenes}}));
  return result;
}

}  // namespace navrag
