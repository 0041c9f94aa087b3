#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>

#include "navrag/pipeline.hpp"
#include "support.hpp"

using namespace navrag;
namespace nt = navrag::testing;

namespace {

const fs::path kGrid = fs::path(NAVRAG_SOURCE_DIR) / "fixtures" / "grid6x6";

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + std::string(NAVRAG_CLI) + " " + args + " 2>/dev/null";
  CliRun r;
  FILE* p = popen(cmd.c_str(), "r");
  char buf[4096];
  for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, p)) > 0;) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

PipelineConfig small_config(const fs::path& out, const fs::path& bundles = kGrid) {
  PipelineConfig c;
  c.bundles = bundles;
  c.out = out;
  c.mock = true;
  c.seed = 5;
  const fs::path roles = out.parent_path() / "roles.json";
  if (!fs::exists(roles)) {
    json arr = json::array({profile_to_json(default_profiles()[0]), profile_to_json(default_profiles()[1])});
    write_text_atomic(roles, canonical_dump(arr));
  }
  c.roles_file = roles;
  c.generation.instructions_per_day = 3;
  c.apply_seed();
  return c;
}

std::shared_ptr<Backend> mock(std::uint64_t seed = 5) { return std::make_shared<MockBackend>(MockOptions{seed, 12}); }

const std::vector<std::string> kSceneFiles = {"graph.json",    "build_log.json",      "layers.json",
                                              "zones.json",    "tree.json",           "samples.jsonl",
                                              "generation_log.json", "dataset.jsonl", "sampling_log.json",
                                              "stats.json"};

}  // namespace

TEST(Pipeline, SmallRunProducesEveryArtifact) {
  const auto dir = nt::temp_dir("pipe_small");
  const auto cfg = small_config(dir / "out");
  const auto r = run_pipeline(cfg, mock());
  ASSERT_TRUE(r.all_ok()) << r.scenes[0].error;
  for (const auto& f : kSceneFiles) EXPECT_TRUE(fs::exists(dir / "out" / "grid6x6" / f)) << f;
  EXPECT_EQ(load_dataset(dir / "out" / "grid6x6" / "dataset.jsonl").size(), 2u * 3u * 5u);
  const json m = read_json(dir / "out" / "manifest.json");
  EXPECT_EQ(m.at("model"), mock_model_id(5));
  EXPECT_EQ(m.at("prompts_combined"), PromptSet().combined_hash());
  EXPECT_EQ(m.at("totals").at("instructions"), 6);
  EXPECT_TRUE(m.at("scenes").at("grid6x6").at("stages").at("annotate").at("usage").contains("view"));
}

TEST(Pipeline, DeletingDatasetFilesSkipsAnnotation) {
  const auto dir = nt::temp_dir("pipe_rerun");
  const auto cfg = small_config(dir / "out");
  run_pipeline(cfg, mock());
  const std::string before = read_text(dir / "out" / "grid6x6" / "dataset.jsonl");
  const std::string manifest = read_text(dir / "out" / "manifest.json");
  fs::remove(dir / "out" / "grid6x6" / "dataset.jsonl");
  fs::remove(dir / "out" / "grid6x6" / "stats.json");
  auto backend = std::make_shared<MockBackend>(MockOptions{5, 12});
  run_pipeline(cfg, backend);
  EXPECT_EQ(backend->calls(), 0u);
  const json log = read_json(dir / "out" / "run_log.json").at("scenes").at("grid6x6").at("stages");
  EXPECT_TRUE(log.at("annotate").at("skipped").get<bool>());
  EXPECT_TRUE(log.at("generate").at("skipped").get<bool>());
  EXPECT_FALSE(log.at("sample").at("skipped").get<bool>());
  EXPECT_EQ(read_text(dir / "out" / "grid6x6" / "dataset.jsonl"), before);
  EXPECT_EQ(read_text(dir / "out" / "manifest.json"), manifest);
}

TEST(Pipeline, LostCheckpointIsServedFromCache) {
  const auto dir = nt::temp_dir("pipe_cache");
  const auto cfg = small_config(dir / "out");
  run_pipeline(cfg, mock());
  const std::string before = read_text(dir / "out" / "grid6x6" / "dataset.jsonl");
  fs::remove(dir / "out" / "grid6x6" / "checkpoint.json");
  auto backend = std::make_shared<MockBackend>(MockOptions{5, 12});
  run_pipeline(cfg, backend);
  EXPECT_EQ(backend->calls(), 0u);
  const json log = read_json(dir / "out" / "run_log.json").at("scenes").at("grid6x6").at("stages");
  EXPECT_FALSE(log.at("annotate").at("skipped").get<bool>());
  EXPECT_GT(log.at("annotate").at("usage").at("view").at("cache_hits").get<int>(), 0);
  EXPECT_EQ(read_text(dir / "out" / "grid6x6" / "dataset.jsonl"), before);
}

TEST(Pipeline, EditedOutputIsRebuilt) {
  const auto dir = nt::temp_dir("pipe_edit");
  const auto cfg = small_config(dir / "out");
  run_pipeline(cfg, mock());
  const fs::path tree = dir / "out" / "grid6x6" / "tree.json";
  const std::string good = read_text(tree);
  write_text_atomic(tree, good.substr(0, good.size() / 2));
  run_pipeline(cfg, mock());
  EXPECT_EQ(read_text(tree), good);
}

TEST(Pipeline, StopAfterThenResumeMatches) {
  const auto dir = nt::temp_dir("pipe_stop");
  run_pipeline(small_config(dir / "full"), mock());
  for (const auto& stage : pipeline_stages()) {
    auto cfg = small_config(dir / stage);
    cfg.stop_after = stage;
    run_pipeline(cfg, mock());
    cfg.stop_after.reset();
    run_pipeline(cfg, mock());
    for (const auto& f : kSceneFiles)
      EXPECT_EQ(read_text(dir / stage / "grid6x6" / f), read_text(dir / "full" / "grid6x6" / f)) << stage << " " << f;
    EXPECT_EQ(read_text(dir / stage / "manifest.json"), read_text(dir / "full" / "manifest.json")) << stage;
  }
}

TEST(Pipeline, FailingSceneIsIsolated) {
  const auto dir = nt::temp_dir("pipe_partial");
  fs::create_directories(dir / "bundles");
  fs::copy(kGrid, dir / "bundles" / "a_grid", fs::copy_options::recursive);
  SceneBundle empty;
  empty.scene_id = "b_empty";
  save_scene_bundle(empty, dir / "bundles" / "b_empty");
  const auto r = run_pipeline(small_config(dir / "out", dir / "bundles"), mock());
  ASSERT_EQ(r.scenes.size(), 2u);
  EXPECT_TRUE(r.scenes[0].ok);
  EXPECT_FALSE(r.scenes[1].ok);
  EXPECT_EQ(r.scenes[1].error_kind, ErrorKind::EmptyScene);
  EXPECT_TRUE(fs::exists(dir / "out" / "grid6x6" / "dataset.jsonl"));
  EXPECT_EQ(r.manifest.at("scenes").at("b_empty").at("status"), "failed");
}

TEST(Pipeline, SceneParallelismDoesNotChangeBytes) {
  const auto dir = nt::temp_dir("pipe_jobs");
  fs::create_directories(dir / "bundles");
  for (int k = 0; k < 3; ++k) save_scene_bundle(nt::make_grid_bundle(3 + k, 1.0, "g" + std::to_string(k)), dir / "bundles" / ("g" + std::to_string(k)));
  auto cfg = small_config(dir / "serial", dir / "bundles");
  run_pipeline(cfg, mock());
  cfg.out = dir / "parallel";
  cfg.jobs = 3;
  run_pipeline(cfg, mock());
  for (int k = 0; k < 3; ++k)
    EXPECT_EQ(read_text(dir / "serial" / ("g" + std::to_string(k)) / "dataset.jsonl"),
              read_text(dir / "parallel" / ("g" + std::to_string(k)) / "dataset.jsonl"));
  EXPECT_EQ(read_text(dir / "serial" / "manifest.json"), read_text(dir / "parallel" / "manifest.json"));
}

TEST(Pipeline, ExitCodeMapping) {
  EXPECT_EQ(exit_code_for(ErrorKind::MissingFile), 2);
  EXPECT_EQ(exit_code_for(ErrorKind::ConfigError), 2);
  EXPECT_EQ(exit_code_for(ErrorKind::NetworkError), 3);
  EXPECT_EQ(exit_code_for(ErrorKind::SchemaExhausted), 3);
}

TEST(Cli, SubcommandsComposeToPipelineOutput) {
  const auto dir = nt::temp_dir("cli_compose");
  const std::string d = dir.string();
  const std::string common = "--mock --seed 3 --cache " + d + "/cache";
  ASSERT_EQ(cli(common + " pipeline --bundles " + kGrid.string() + " --out " + d + "/pipe --per-day 2").code, 0);
  const std::string s = d + "/steps";
  ASSERT_EQ(cli(common + " build-graph --bundle " + kGrid.string() + " --out " + s + "/graph.json").code, 0);
  ASSERT_EQ(cli(common + " annotate --bundle " + kGrid.string() + " --graph " + s + "/graph.json --out " + s + "/layers.json").code, 0);
  ASSERT_EQ(cli(common + " partition --graph " + s + "/graph.json --tree " + s + "/layers.json --out " + s + "/zones.json").code, 0);
  ASSERT_EQ(cli(common + " generate --tree " + s + "/tree.json --graph " + s + "/graph.json --roles " + NAVRAG_SOURCE_DIR +
                "/fixtures/roles.json --out " + s + " --per-day 2").code, 0);
  ASSERT_EQ(cli(common + " sample --graph " + s + "/graph.json --samples " + s + "/samples.jsonl --out " + s + "/dataset.jsonl").code, 0);
  for (const auto& f : {"graph.json", "build_log.json", "layers.json", "zones.json", "tree.json", "samples.jsonl",
                        "generation_log.json", "dataset.jsonl", "sampling_log.json"})
    EXPECT_EQ(read_text(fs::path(s) / f), read_text(fs::path(d) / "pipe" / "grid6x6" / f)) << f;
  const CliRun st = cli("stats --dataset " + s + "/dataset.jsonl");
  EXPECT_EQ(st.code, 0);
  EXPECT_NE(st.out.find("#Scene"), std::string::npos);
}

TEST(Cli, EvaluatePerfectPredictions) {
  const auto dir = nt::temp_dir("cli_eval");
  const std::string d = dir.string();
  ASSERT_EQ(cli("--mock --seed 3 pipeline --bundles " + kGrid.string() + " --out " + d + " --per-day 1").code, 0);
  std::vector<json> preds;
  for (const auto& r : load_dataset(dir / "grid6x6" / "dataset.jsonl"))
    preds.push_back(run_to_json({r.sample.sample_id, r.episode_index, r.episode.path}));
  write_text_atomic(dir / "preds.jsonl", jsonl_text(preds));
  const CliRun r = cli("evaluate --dataset " + d + "/grid6x6/dataset.jsonl --predictions " + d + "/preds.jsonl --graph " + d +
                    "/grid6x6/graph.json --out " + d + "/report.json");
  ASSERT_EQ(r.code, 0);
  const json rep = read_json(dir / "report.json");
  EXPECT_EQ(rep.at("SR"), 100.0);
  EXPECT_EQ(rep.at("SPL"), 100.0);
  EXPECT_EQ(rep.at("NE"), 0.0);
  preds.pop_back();
  write_text_atomic(dir / "preds.jsonl", jsonl_text(preds));
  EXPECT_EQ(cli("evaluate --dataset " + d + "/grid6x6/dataset.jsonl --predictions " + d + "/preds.jsonl --graph " + d +
                "/grid6x6/graph.json").code, 2);
}

TEST(Cli, ErrorsAndExitCodes) {
  const auto dir = nt::temp_dir("cli_err");
  const std::string d = dir.string();
  EXPECT_EQ(cli("--mock --seed 1 pipeline --bundles " + d + "/missing --out " + d + "/o").code, 2);
  EXPECT_EQ(cli("build-graph --bundle " + kGrid.string() + " --out " + d + "/g.json", "CI=1").code, 2);
  EXPECT_EQ(cli("build-graph --bundle " + kGrid.string() + " --out " + d + "/g.json --seed 1", "CI=1").code, 0);
  EXPECT_EQ(cli("annotate --bundle " + kGrid.string() + " --graph " + d + "/g.json --out " + d + "/l.json",
                "NAVRAG_LLM_ENDPOINT=").code, 2);
  EXPECT_EQ(cli("build-graph --bundle").code, 2);
  EXPECT_EQ(cli("--help").code, 0);
  fs::create_directories(dir / "bundles");
  fs::copy(kGrid, dir / "bundles" / "a", fs::copy_options::recursive);
  SceneBundle empty;
  empty.scene_id = "b";
  save_scene_bundle(empty, dir / "bundles" / "b");
  EXPECT_EQ(cli("--mock --seed 1 pipeline --bundles " + d + "/bundles --out " + d + "/o --per-day 1").code, 4);
}

TEST(Cli, PrintConfigAndPrompts) {
  const CliRun c = cli("--print-config");
  ASSERT_EQ(c.code, 0);
  const json j = json::parse(c.out);
  EXPECT_EQ(j.at("graph").at("min_separation"), 0.4);
  EXPECT_EQ(j.at("graph").at("cluster_threshold"), 1.0);
  EXPECT_EQ(j.at("graph").at("edge_radius"), 5.0);
  EXPECT_EQ(j.at("graph").at("max_degree"), 5);
  EXPECT_EQ(json::parse(cli("--mock --seed 42 --print-config").out).at("seed"), 42);

  const auto dir = nt::temp_dir("cli_prompts");
  const CliRun base = cli("--print-prompts");
  write_text_atomic(dir / "refine.txt",
                    "{{profile}} {{rough}} {{zone}} {{viewpoint}} {{view}} {{instance}} {{affordance}} Be brief.");
  const CliRun edited = cli("--print-prompts --prompts " + dir.string());
  ASSERT_EQ(edited.code, 0);
  auto line = [](const std::string& text, const std::string& name) {
    const auto a = text.find(name + " ");
    return text.substr(a, text.find('\n', a) - a);
  };
  EXPECT_NE(line(base.out, "refine"), line(edited.out, "refine"));
  EXPECT_EQ(line(base.out, "view"), line(edited.out, "view"));
  EXPECT_NE(line(base.out, "combined"), line(edited.out, "combined"));
}

TEST(Cli, TomlConfigWithFlagOverride) {
  const auto dir = nt::temp_dir("cli_toml");
  write_text_atomic(dir / "navrag.toml", "seed = 9\nmock = true\n\n[pipeline]\nper-day = 4\nmin-hops = 3\n");
  const std::string cfg = "--config " + (dir / "navrag.toml").string();
  const json a = json::parse(cli(cfg + " --print-config pipeline").out);
  EXPECT_EQ(a.at("seed"), 9);
  EXPECT_EQ(a.at("mock"), true);
  EXPECT_EQ(a.at("generation").at("instructions_per_day"), 4);
  EXPECT_EQ(a.at("sampler").at("min_hops"), 3);
  const json b = json::parse(cli(cfg + " --print-config pipeline --per-day 7").out);
  EXPECT_EQ(b.at("generation").at("instructions_per_day"), 7);
}
