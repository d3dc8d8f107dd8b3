#include <gtest/gtest.h>

#include "pipeline.hpp"
#include "support.hpp"

namespace vrag {
namespace {

using testing::run_cli;
using testing::TempDir;

std::filesystem::path bundled() { return testing::source_dir() / "data" / "synthetic"; }

TEST(Cli, HelpExitsZero) {
  EXPECT_EQ(run_cli({"--help"}), cli::kExitOk);
  EXPECT_EQ(run_cli({"probe", "--help"}), cli::kExitOk);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli({}), cli::kExitUsage);
  EXPECT_EQ(run_cli({"frobnicate"}), cli::kExitUsage);
  EXPECT_EQ(run_cli({"probe", "--no-such-flag"}), cli::kExitUsage);
  EXPECT_EQ(run_cli({"probe", "--idx", "x"}), cli::kExitUsage);  // required options missing
}

TEST(Cli, MissingIndexExitsOne) {
  TempDir run("cli");
  write_file(run / "probes.jsonl", "");
  EXPECT_EQ(run_cli({"--run-dir", run.path().string(), "--fixture", (bundled() / "fixture.json").string(), "probe",
                     "--manifest", (bundled() / "manifest.jsonl").string(), "--idx", (run / "missing.hnsw").string(),
                     "--probes", (run / "probes.jsonl").string()}),
            cli::kExitRuntime);
  EXPECT_FALSE(std::filesystem::exists(run / ".vrag.lock"));
}

TEST(Cli, MissingFixtureExitsOne) {
  TempDir run("cli");
  EXPECT_EQ(run_cli({"--run-dir", run.path().string(), "--fixture", "nope.json", "ingest", "--manifest",
                     (bundled() / "manifest.jsonl").string()}),
            cli::kExitRuntime);
}

TEST(Cli, BadModeExitsOne) {
  TempDir run("cli");
  EXPECT_EQ(run_cli({"--run-dir", run.path().string(), "--fixture", (bundled() / "fixture.json").string(), "--mode",
                     "sideways", "ingest", "--manifest", (bundled() / "manifest.jsonl").string()}),
            cli::kExitRuntime);
}

TEST(Cli, LockedRunDirExitsOne) {
  TempDir run("cli");
  write_file(run / ".vrag.lock", "12345\n");
  EXPECT_EQ(run_cli({"--run-dir", run.path().string(), "--fixture", (bundled() / "fixture.json").string(), "ingest",
                     "--manifest", (bundled() / "manifest.jsonl").string(), "--split-mode", "ratio"}),
            cli::kExitRuntime);
  EXPECT_FALSE(std::filesystem::exists(run / "corpus.jsonl"));
}

TEST(Cli, FullMockPipelineOnBundledCorpus) {
  TempDir root("cli");
  const auto result = testing::run_pipeline(bundled(), root / "run");
  for (const auto& [stage, code] : result.exit_codes) EXPECT_EQ(code, 0) << stage;
  for (const std::string mode : {"none", "image", "text", "rar", "vrag"}) {
    const auto path = root / "run" / ("metrics_" + mode + ".json");
    ASSERT_TRUE(std::filesystem::exists(path)) << mode;
    const auto m = Json::parse(read_file(path));
    EXPECT_TRUE(m.contains("f1"));
    EXPECT_TRUE(m["strata"].contains("rare"));
  }
  const auto manifest = Json::parse(read_file(root / "run" / "probe.manifest.json"));
  EXPECT_EQ(manifest["subcommand"], "probe");
  EXPECT_TRUE(manifest["outputs"].contains("transcripts_vrag.jsonl"));
  EXPECT_EQ(manifest["config"]["retrieval"]["mode"], "vrag");
  EXPECT_FALSE(std::filesystem::exists(root / "run" / ".vrag.lock"));
}

TEST(Cli, SameSeedSameDigests) {
  TempDir root("cli");
  const auto a = testing::run_pipeline(bundled(), root / "a");
  const auto b = testing::run_pipeline(bundled(), root / "b");
  ASSERT_TRUE(a.ok());
  ASSERT_TRUE(b.ok());
  EXPECT_EQ(a.digests, b.digests);
  EXPECT_EQ(Json::parse(read_file(root / "a" / "rewrite.manifest.json"))["config_digest"],
            Json::parse(read_file(root / "b" / "rewrite.manifest.json"))["config_digest"]);
}

TEST(Cli, IndexQueryPrintsNeighbours) {
  TempDir root("cli");
  const auto run = (root / "run").string();
  const auto fixture = (bundled() / "fixture.json").string();
  ASSERT_EQ(run_cli({"--run-dir", run, "--fixture", fixture, "index", "build", "--manifest",
                     (bundled() / "manifest.jsonl").string(), "--split", "all", "--out", run + "/i.hnsw"}),
            0);
  ASSERT_EQ(run_cli({"--run-dir", run, "--fixture", fixture, "-k", "2", "index", "query", "--idx", run + "/i.hnsw",
                     "--image", (bundled() / "images" / "syn00004.bin").string(), "--out", run + "/n.jsonl"}),
            0);
  const auto lines = read_file(root / "run" / "n.jsonl");
  EXPECT_EQ(Json::parse(lines.substr(0, lines.find('\n')))["id"], "syn00004");
}

TEST(Cli, ConfigFileWithFlagOverride) {
  TempDir root("cli");
  const auto run = root / "run";
  Json cfg = {{"backend", "mock"},
              {"mock", {{"fixture", (bundled() / "fixture.json").string()}}},
              {"retrieval", {{"mode", "text_only"}, {"k", 3}}},
              {"seed", 11}};
  write_file(root / "cfg.json", cfg.dump());
  ASSERT_EQ(run_cli({"--config", (root / "cfg.json").string(), "--run-dir", run.string(), "-k", "2", "ingest",
                     "--manifest", (bundled() / "manifest.jsonl").string(), "--split-mode", "ratio"}),
            0);
  const auto m = Json::parse(read_file(run / "ingest.manifest.json"));
  EXPECT_EQ(m["config"]["retrieval"]["mode"], "text_only");
  EXPECT_EQ(m["config"]["retrieval"]["k"], 2);
  EXPECT_EQ(m["config"]["seed"], 11);
  EXPECT_EQ(m["seeds"]["split"], 11);
}

TEST(Cli, UrlBackendWithoutEndpointsFailsCleanly) {
  TempDir root("cli");
  EXPECT_EQ(run_cli({"--run-dir", (root / "run").string(), "--backend", "url", "index", "build", "--manifest",
                     (bundled() / "manifest.jsonl").string(), "--split", "all"}),
            cli::kExitRuntime);
}

}  // namespace
}  // namespace vrag
