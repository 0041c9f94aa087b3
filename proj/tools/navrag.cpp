// navrag command-line interface.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "navrag/evaluator.hpp"
#include "navrag/http_backend.hpp"
#include "navrag/pipeline.hpp"

using namespace navrag;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitPartial = 4;

struct GlobalOptions {
  bool mock = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> mock_seed;
  std::size_t mock_verbosity = 12;
  std::optional<std::string> model;
  std::optional<std::string> cache;
  std::optional<std::string> prompts;
  int concurrency = 10;
  int jobs = 8;
  bool print_config = false;
  bool print_prompts = false;

  bool mock_mode() const { return mock || mock_seed.has_value(); }
  std::uint64_t resolved_seed() const { return seed ? *seed : mock_seed.value_or(0); }

  /// In CI every seeded command must name its seed.
  void require_seed(const std::string& command) const {
    if (std::getenv("CI") && !seed && !mock_seed)
      throw Error(ErrorKind::ConfigError, command, "--seed is mandatory when CI is set");
  }

  PromptSet prompt_set() const { return prompts ? PromptSet::load(*prompts) : PromptSet(); }

  GatewayConfig gateway_config() const {
    GatewayConfig g;
    g.max_concurrency = concurrency;
    if (mock_mode()) {
      g.model = mock_model_id(resolved_seed());
    } else if (model) {
      g.model = *model;
    }
    if (cache) g.cache_dir = fs::path(*cache);
    return g;
  }

  std::shared_ptr<Backend> backend(const fs::path& image_root = {}) const {
    if (mock_mode()) return std::make_shared<MockBackend>(MockOptions{resolved_seed(), mock_verbosity});
    HttpBackendConfig h;
    h.image_root = image_root;
    h = http_config_from_env(h);
    if (h.endpoint.empty())
      throw Error(ErrorKind::ConfigError, "NAVRAG_LLM_ENDPOINT", "no LLM endpoint configured; set it or pass --mock");
    return std::make_shared<HttpBackend>(h);
  }

  LlmGateway gateway(const fs::path& image_root = {}) const { return LlmGateway(backend(image_root), gateway_config()); }
};

void add_graph_options(CLI::App* app, GraphBuildConfig& g) {
  app->add_option("--min-sep", g.min_separation, "Minimum separation between kept sample points (m)")->capture_default_str();
  app->add_option("--cluster", g.cluster_threshold, "Single-linkage merge threshold (m)")->capture_default_str();
  app->add_option("--radius", g.edge_radius, "Candidate edge radius (m)")->capture_default_str();
  app->add_option("--max-degree", g.max_degree, "Degree cap before repair")->capture_default_str();
}

void add_annotator_options(CLI::App* app, AnnotatorConfig& a, std::optional<double>& baseline) {
  app->add_option("--annotate-temperature", a.temperature, "Temperature for annotation calls")->capture_default_str();
  app->add_option("--baseline-threshold", baseline, "Use position-only clustering zones at this threshold (m)");
}

void add_generation_options(CLI::App* app, GenerationConfig& g) {
  app->add_option("--per-day", g.instructions_per_day, "Instructions per role and day")->capture_default_str();
  app->add_option("--days", g.days_per_role, "Simulated days per role")->capture_default_str();
  app->add_option("--history", g.history_window, "Prior instructions shown to the role")->capture_default_str();
  app->add_option("--generation-temperature", g.generation_temperature)->capture_default_str();
}

void add_sampler_options(CLI::App* app, SamplerConfig& s) {
  app->add_option("--per-instruction", s.trajectories_per_instruction, "Trajectories per instruction")->capture_default_str();
  app->add_option("--min-hops", s.min_hops, "Minimum start-to-destination hops")->capture_default_str();
  app->add_option("--max-hops", s.max_hops, "Maximum start-to-destination hops");
}

fs::path sibling(const fs::path& p, const std::string& name) { return p.parent_path() / name; }

void print_json(const json& j) { std::cout << canonical_dump(j); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NavRAG data generation: navigation graphs, scene trees, instructions, trajectories, metrics"};
  app.require_subcommand(0, 1);
  app.fallthrough();
  app.set_config("--config", "", "TOML config file; command-line flags override it");

  GlobalOptions opt;
  app.add_flag("--mock", opt.mock, "Use the deterministic offline LLM backend");
  app.add_option("--seed", opt.seed, "Seed for graph building, generation, sampling and the mock backend");
  app.add_option("--mock-seed", opt.mock_seed, "Same as --mock --seed N");
  app.add_option("--mock-verbosity", opt.mock_verbosity, "Mean word count of mock strings")->capture_default_str();
  app.add_option("--model", opt.model, "Model id for the HTTP backend")->envname("NAVRAG_LLM_MODEL");
  app.add_option("--cache", opt.cache, "Response cache directory");
  app.add_option("--prompts", opt.prompts, "Directory of <name>.txt prompt overrides");
  app.add_option("--concurrency", opt.concurrency, "Maximum in-flight LLM calls")->capture_default_str();
  app.add_option("--jobs", opt.jobs, "Worker threads (scenes for pipeline, items otherwise)")->capture_default_str();
  app.add_flag("--print-config", opt.print_config, "Print the resolved configuration and exit");
  app.add_flag("--print-prompts", opt.print_prompts, "Print prompt template hashes and exit");

  // build-graph
  auto* bg = app.add_subcommand("build-graph", "Build a navigation graph from a scene bundle");
  std::string bg_bundle, bg_out;
  std::optional<std::string> bg_log;
  GraphBuildConfig bg_cfg;
  bg->add_option("--bundle", bg_bundle, "Scene bundle directory")->required();
  bg->add_option("--out", bg_out, "Output graph.json")->required();
  bg->add_option("--log", bg_log, "Build log (default: build_log.json next to --out)");
  add_graph_options(bg, bg_cfg);

  // annotate
  auto* an = app.add_subcommand("annotate", "Annotate views and viewpoints of a scene");
  std::string an_bundle, an_graph, an_out;
  an->add_option("--bundle", an_bundle)->required();
  an->add_option("--graph", an_graph)->required();
  an->add_option("--out", an_out, "Output tree file holding the view and viewpoint layers")->required();

  // partition
  auto* pa = app.add_subcommand("partition", "Partition viewpoints into zones and complete the scene tree");
  std::string pa_graph, pa_tree, pa_out;
  std::optional<std::string> pa_tree_out;
  std::optional<double> pa_baseline;
  pa->add_option("--graph", pa_graph)->required();
  pa->add_option("--tree", pa_tree, "Annotated layers from `annotate`")->required();
  pa->add_option("--out", pa_out, "Output zones.json")->required();
  pa->add_option("--tree-out", pa_tree_out, "Completed tree (default: tree.json next to --out)");
  pa->add_option("--baseline-threshold", pa_baseline, "Position-only clustering baseline at this threshold (m)");

  // generate
  auto* ge = app.add_subcommand("generate", "Generate instructions by role simulation and retrieval");
  std::string ge_tree, ge_graph, ge_out;
  std::optional<std::string> ge_roles;
  GenerationConfig ge_cfg;
  ge->add_option("--tree", ge_tree)->required();
  ge->add_option("--graph", ge_graph)->required();
  ge->add_option("--roles", ge_roles, "roles.json (default: the shipped profiles)");
  ge->add_option("--out", ge_out, "Output directory for samples.jsonl and generation_log.json")->required();
  add_generation_options(ge, ge_cfg);

  // sample
  auto* sa = app.add_subcommand("sample", "Sample shortest-path trajectories for instructions");
  std::string sa_graph, sa_samples, sa_out;
  std::optional<std::string> sa_log;
  SamplerConfig sa_cfg;
  sa->add_option("--graph", sa_graph)->required();
  sa->add_option("--samples", sa_samples)->required();
  sa->add_option("--out", sa_out, "Output dataset.jsonl")->required();
  sa->add_option("--log", sa_log, "Sampling log (default: sampling_log.json next to --out)");
  add_sampler_options(sa, sa_cfg);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Score predicted runs with NE, OSR, SR and SPL");
  std::string ev_dataset, ev_predictions, ev_graph;
  std::optional<std::string> ev_out;
  EvalConfig ev_cfg;
  ev->add_option("--dataset", ev_dataset)->required();
  ev->add_option("--predictions", ev_predictions)->required();
  ev->add_option("--graph", ev_graph)->required();
  ev->add_option("--out", ev_out, "Report JSON");
  ev->add_option("--success-distance", ev_cfg.success_distance)->capture_default_str();
  ev->add_flag("--euclidean-success", ev_cfg.euclidean_success, "Judge success by straight-line distance");

  // stats
  auto* st = app.add_subcommand("stats", "Dataset statistics");
  std::string st_dataset;
  std::optional<std::string> st_out;
  st->add_option("--dataset", st_dataset, "dataset.jsonl or a directory searched recursively")->required();
  st->add_option("--out", st_out, "Stats JSON");

  // pipeline
  auto* pl = app.add_subcommand("pipeline", "Run every stage for every scene with checkpoints");
  PipelineConfig pl_cfg;
  std::string pl_bundles, pl_out;
  std::optional<std::string> pl_roles, pl_stop;
  std::optional<double> pl_baseline;
  pl->add_option("--bundles", pl_bundles, "Bundle directory or directory of bundles");
  pl->add_option("--out", pl_out, "Output directory");
  pl->add_option("--roles", pl_roles, "roles.json (default: the shipped profiles)");
  pl->add_option("--stop-after", pl_stop, "Stop each scene after this stage");
  add_graph_options(pl, pl_cfg.graph);
  add_annotator_options(pl, pl_cfg.annotator, pl_baseline);
  add_generation_options(pl, pl_cfg.generation);
  add_sampler_options(pl, pl_cfg.sampler);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (opt.print_prompts) {
      const PromptSet p = opt.prompt_set();
      for (const auto& [name, hash] : p.hashes()) std::printf("%-20s %s\n", name.c_str(), hash.c_str());
      std::printf("%-20s %s\n", "combined", p.combined_hash().c_str());
      return kExitOk;
    }

    auto resolve_pipeline = [&] {
      PipelineConfig c = pl_cfg;
      c.bundles = pl_bundles;
      c.out = pl_out;
      if (opt.cache) c.cache_dir = fs::path(*opt.cache);
      if (opt.prompts) c.prompts_dir = fs::path(*opt.prompts);
      if (pl_roles) c.roles_file = fs::path(*pl_roles);
      c.stop_after = pl_stop;
      c.annotator.baseline_threshold = pl_baseline;
      c.annotator.jobs = 8;
      c.generation.jobs = 8;
      c.sampler.jobs = 8;
      c.jobs = opt.jobs;
      c.mock = opt.mock_mode();
      c.seed = opt.resolved_seed();
      c.mock_verbosity = opt.mock_verbosity;
      c.gateway = opt.gateway_config();
      c.apply_seed();
      return c;
    };

    if (opt.print_config) {
      const PipelineConfig c = resolve_pipeline();
      json j = c.to_json();
      j["jobs"] = c.jobs;
      j["max_concurrency"] = c.gateway.max_concurrency;
      j["bundles"] = c.bundles.string();
      j["out"] = c.out.string();
      j["cache"] = c.out.empty() && !c.cache_dir ? json(nullptr) : json(c.resolved_cache_dir().string());
      j["prompts"] = opt.prompt_set().combined_hash();
      print_json(j);
      return kExitOk;
    }

    if (*bg) {
      opt.require_seed("build-graph");
      bg_cfg.rng_seed = opt.resolved_seed();
      const fs::path out = bg_out;
      const json s = stages::build_graph(bg_bundle, bg_cfg, out, bg_log ? fs::path(*bg_log) : sibling(out, "build_log.json"));
      print_json(s);
      return kExitOk;
    }
    if (*an) {
      opt.require_seed("annotate");
      LlmGateway gw = opt.gateway(an_bundle);
      AnnotatorConfig cfg;
      cfg.jobs = opt.jobs;
      print_json(stages::annotate(an_bundle, an_graph, an_out, gw, opt.prompt_set(), cfg));
      return kExitOk;
    }
    if (*pa) {
      opt.require_seed("partition");
      LlmGateway gw = opt.gateway();
      AnnotatorConfig cfg;
      cfg.baseline_threshold = pa_baseline;
      const fs::path out = pa_out;
      print_json(stages::partition(pa_graph, pa_tree, out, pa_tree_out ? fs::path(*pa_tree_out) : sibling(out, "tree.json"),
                                   gw, opt.prompt_set(), cfg));
      return kExitOk;
    }
    if (*ge) {
      opt.require_seed("generate");
      LlmGateway gw = opt.gateway();
      ge_cfg.rng_seed = opt.resolved_seed();
      ge_cfg.jobs = opt.jobs;
      if (ge_roles) ge_cfg.roles = load_profiles(*ge_roles);
      const fs::path out = ge_out;
      print_json(stages::generate(ge_tree, ge_graph, ge_cfg, out / "samples.jsonl", out / "generation_log.json", gw,
                                  opt.prompt_set()));
      return kExitOk;
    }
    if (*sa) {
      opt.require_seed("sample");
      sa_cfg.rng_seed = opt.resolved_seed();
      sa_cfg.jobs = opt.jobs;
      const fs::path out = sa_out;
      print_json(stages::sample(sa_graph, sa_samples, sa_cfg, out, sa_log ? fs::path(*sa_log) : sibling(out, "sampling_log.json")));
      return kExitOk;
    }
    if (*ev) {
      const NavGraph g = load_graph(ev_graph);
      Evaluator evaluator(g, ev_cfg);
      const EvalReport rep = evaluator.evaluate(load_dataset(ev_dataset), load_predictions(ev_predictions));
      if (ev_out) write_text_atomic(*ev_out, canonical_dump(rep.to_json()));
      std::printf("episodes %zu  NE %.2f  OSR %.2f  SR %.2f  SPL %.2f\n", rep.n_episodes, rep.ne, rep.osr, rep.sr, rep.spl);
      return kExitOk;
    }
    if (*st) {
      const DatasetStats s = dataset_stats(fs::path(st_dataset));
      if (st_out) write_text_atomic(*st_out, canonical_dump(s.to_json()));
      std::printf("%s\n", s.table_row().c_str());
      return kExitOk;
    }
    if (*pl) {
      opt.require_seed("pipeline");
      PipelineConfig c = resolve_pipeline();
      if (c.bundles.empty()) throw Error(ErrorKind::ConfigError, "--bundles", "required");
      if (c.out.empty()) throw Error(ErrorKind::ConfigError, "--out", "required");
      const PipelineResult r = run_pipeline(c, opt.backend(c.bundles));
      for (const auto& s : r.scenes) {
        if (s.ok)
          std::fprintf(stderr, "%s: ok\n", s.scene_id.c_str());
        else
          std::fprintf(stderr, "%s: failed: %s\n", s.scene_id.c_str(), s.error.c_str());
      }
      print_json(r.manifest["totals"]);
      return r.all_ok() ? kExitOk : kExitPartial;
    }
    std::cout << app.help();
    return kExitValidation;
  } catch (const Error& e) {
    std::fprintf(stderr, "navrag: %s\n", e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "navrag: %s\n", e.what());
    return kExitValidation;
  }
}
