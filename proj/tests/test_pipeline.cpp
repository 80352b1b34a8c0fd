#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace oodbench;
using oodbench::testing::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig two_session_config(const std::filesystem::path& root) {
  RunConfig config;
  for (std::uint64_t s = 0; s < 2; ++s) {
    auto c = oodbench::testing::small_config(s + 10);
    c.session_id = "pipe_" + std::to_string(s);
    config.sessions.push_back(synth::write_session(c, root / c.session_id));
  }
  config.source_tags = {"synth/features"};
  config.seed = 5;
  config.output_dir = root / "out";
  config.workers = 2;
  return config;
}

}  // namespace

TEST(RunConfig, SeedIsMandatory) {
  const nlohmann::json j = {{"sessions", {"a/manifest.json"}}, {"source_tags", {"x"}}};
  EXPECT_THROW(run_config_from_json(j), ValidationError);
  nlohmann::json ok = j;
  ok["seed"] = 3;
  EXPECT_EQ(run_config_from_json(ok, "/base").sessions.front(), std::filesystem::path("/base/a/manifest.json"));
}

TEST(RunConfig, ParsesSections) {
  const nlohmann::json j = {{"sessions", {"m.json"}},
                            {"source_tags", {"x"}},
                            {"seed", 1},
                            {"splits", {{"attributes", {"hue"}}, {"strategies", {"mid"}}, {"mid_band", {42.5, 67.5}}}},
                            {"encoder", {{"lambda_grid", {1.0}}, {"ceiling_source", "all"}}},
                            {"metrics", {{"cov", false}}}};
  const RunConfig c = run_config_from_json(j);
  EXPECT_EQ(c.splits.attributes.size(), 1u);
  EXPECT_EQ(c.splits.mid_band.upper, 67.5);
  EXPECT_EQ(c.encoder.ceiling_source, CeilingSource::AllTrials);
  EXPECT_FALSE(c.metrics.cov);
  EXPECT_THROW(run_config_from_json({{"sessions", nlohmann::json::array()}, {"source_tags", {"x"}}, {"seed", 1}}),
               ValidationError);
}

TEST(Pipeline, SplitCountForTwoSessions) {
  TempDir dir;
  const RunConfig config = two_session_config(dir.path());
  const PipelineOutcome out = run_pipeline(config);
  EXPECT_EQ(out.succeeded.size(), 2u);
  std::size_t degenerate = 0;  // none expected, but the count allows for dropped attribute splits
  EXPECT_EQ(out.report.split_scores.size() + degenerate, 2u * (1 + 15 + 3));
  EXPECT_EQ(out.report.shifts.size(), 2u * 19);
  for (const char* f : {"encoding_results.csv", "shift_measurements.jsonl", "splits.jsonl", "report.json", "ratios.csv"}) {
    EXPECT_TRUE(std::filesystem::exists(config.output_dir / f)) << f;
  }
}

TEST(Pipeline, DeterministicAcrossRunsAndWorkers) {
  TempDir dir;
  RunConfig config = two_session_config(dir.path());
  run_pipeline(config);
  const std::string first = slurp(config.output_dir / "encoding_results.csv");
  const std::string first_ratios = slurp(config.output_dir / "ratios.csv");
  config.workers = 1;
  config.output_dir = dir.path() / "out_serial";
  run_pipeline(config);
  EXPECT_EQ(slurp(config.output_dir / "encoding_results.csv"), first);
  EXPECT_EQ(slurp(config.output_dir / "ratios.csv"), first_ratios);
}

TEST(Pipeline, CorruptSessionIsIsolated) {
  TempDir dir;
  RunConfig config = two_session_config(dir.path());
  std::filesystem::remove(config.sessions[0].parent_path() / "responses.bin");
  const PipelineOutcome out = run_pipeline(config);
  EXPECT_EQ(out.succeeded, std::vector<std::string>{"pipe_1"});
  EXPECT_EQ(out.failed.size(), 1u);
}

TEST(Pipeline, NoSuccessfulSessionThrows) {
  TempDir dir;
  RunConfig config;
  config.sessions = {dir.path() / "nope" / "manifest.json"};
  config.source_tags = {"x"};
  config.output_dir = dir.path() / "out";
  EXPECT_THROW(run_pipeline(config), ValidationError);
}

TEST(Pipeline, AddingSessionDoesNotPerturbOthers) {
  TempDir dir;
  RunConfig config = two_session_config(dir.path());
  config.sessions.resize(1);
  run_pipeline(config);
  const auto solo = read_encoding_csv(config.output_dir / "encoding_results.csv");
  RunConfig both = two_session_config(dir.path());
  both.output_dir = dir.path() / "out_both";
  run_pipeline(both);
  const auto pair = read_encoding_csv(both.output_dir / "encoding_results.csv");
  ASSERT_GT(pair.size(), solo.size());
  for (std::size_t i = 0; i < solo.size(); ++i) {
    EXPECT_EQ(pair[i].result.r_pred, solo[i].result.r_pred);
    EXPECT_EQ(pair[i].result.score, solo[i].result.score);
  }
}

TEST(Pipeline, AttributesComputedFromImagesWhenCsvMissing) {
  TempDir dir;
  auto c = oodbench::testing::small_config(21);
  c.image_mode = synth::ImageMode::ProceduralRasters;
  const auto manifest = synth::write_session(c, dir.path() / "r");
  {
    std::ifstream in(manifest);
    auto j = nlohmann::json::parse(in);
    j.erase("attributes");
    std::ofstream out(manifest);
    out << j.dump();
  }
  RunConfig config;
  config.sessions = {manifest};
  config.source_tags = {c.source_tag};
  config.output_dir = dir.path() / "out";
  config.workers = 2;
  const auto out = run_pipeline(config);
  EXPECT_EQ(out.succeeded.size(), 1u);
  EXPECT_GE(out.report.split_scores.size(), 17u);
}
