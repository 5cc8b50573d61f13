#include "apdr/cli.hpp"

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace apdr;
using testing_util::scratch_dir;
using testing_util::slurp;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "apdr");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(int(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> tiny_data(const fs::path& dir) {
  return {"generate", "--identities", "10", "--test-identities", "4", "--samples-per-id", "4", "--seed", "5",
          "--out",    dir.string()};
}

// Small network, short schedule.
std::vector<std::string> tiny_train(const fs::path& data, const fs::path& out) {
  return {"train",           "--data",        data.string(), "--out",           out.string(),   "--model.widths",
          "[4,8,8,8]",       "--model.feat_dim", "16",       "--model.fusion_dim", "16",         "--model.attr_dim",
          "8",               "--model.gate_hidden", "8",     "--train.p",       "3",            "--train.k_per_id",
          "2",               "--train.epochs_stage1", "2",   "--train.epochs_stage2", "1",      "--train.checkpoint_every",
          "1"};
}

std::size_t count_files(const fs::path& dir) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.is_regular_file();
  return n;
}

}  // namespace

TEST(Cli, HelpExitsZero) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("generate"), std::string::npos);
}

TEST(Cli, MissingSubcommandIsUsageError) { EXPECT_EQ(run({}).code, 2); }

TEST(Cli, UnknownOptionIsUsageError) { EXPECT_EQ(run({"generate", "--bogus", "1"}).code, 2); }

TEST(Cli, DefaultGenerateHasFiftyTrainIdentities) {
  const auto dir = scratch_dir();
  const auto r = run({"generate", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = load_manifest(dir / "manifest.json");
  EXPECT_EQ(m.train_identities().size(), 50u);
  EXPECT_TRUE(fs::exists(dir / "config.json"));
}

TEST(Cli, OneIdentityIsRejected) {
  const auto dir = scratch_dir();
  const auto r = run({"generate", "--identities", "1", "--out", (dir / "d").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(r.err.empty());
}

TEST(Cli, OccupiedDirectoryNeedsForce) {
  const auto dir = scratch_dir();
  ASSERT_EQ(run(tiny_data(dir)).code, 0);
  EXPECT_EQ(run(tiny_data(dir)).code, 2);
  auto forced = tiny_data(dir);
  forced.push_back("--force");
  EXPECT_EQ(run(forced).code, 0);
}

TEST(Cli, GenerateIsDeterministic) {
  const auto dir = scratch_dir();
  ASSERT_EQ(run(tiny_data(dir / "a")).code, 0);
  ASSERT_EQ(run(tiny_data(dir / "b")).code, 0);
  fs::remove(dir / "a" / "config.json");
  fs::remove(dir / "b" / "config.json");
  EXPECT_TRUE(testing_util::same_tree(dir / "a", dir / "b"));
}

TEST(Cli, TrainWithoutDataIsUsageError) {
  const auto dir = scratch_dir();
  EXPECT_EQ(run({"train", "--out", dir.string()}).code, 2);
  EXPECT_EQ(run({"train", "--data", (dir / "missing").string(), "--out", dir.string()}).code, 2);
}

TEST(Cli, StageTwoWithoutCheckpointIsUsageError) {
  const auto dir = scratch_dir();
  ASSERT_EQ(run(tiny_data(dir / "data")).code, 0);
  auto args = tiny_train(dir / "data", dir / "run");
  args.insert(args.end(), {"--stage", "2"});
  const auto r = run(args);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("stage-1 checkpoint"), std::string::npos);
}

TEST(Cli, DivergingRunExitsWithNumericalCode) {
  const auto dir = scratch_dir();
  ASSERT_EQ(run(tiny_data(dir / "data")).code, 0);
  auto args = tiny_train(dir / "data", dir / "run");
  args.insert(args.end(), {"--train.base_lr", "1e30"});
  const auto r = run(args);
  EXPECT_EQ(r.code, 3) << r.err;
}

// One trained run shared by the eval / inspect-masks tests.
class TrainedRun : public ::testing::Test {
 protected:
  static fs::path root() { return fs::temp_directory_path() / "apdr_tests" / "Cli.TrainedRun"; }
  static void SetUpTestSuite() {
    fs::remove_all(root());
    ASSERT_EQ(run(tiny_data(root() / "data")).code, 0);
    const auto r = run(tiny_train(root() / "data", root() / "run"));
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static fs::path data() { return root() / "data"; }
  static fs::path run_dir() { return root() / "run"; }
  static fs::path final_checkpoint() { return run_dir() / "ckpt_stage2_e1.bin"; }
};

TEST_F(TrainedRun, WritesCheckpointsLogAndConfig) {
  for (const char* f : {"ckpt_stage1_e1.bin", "ckpt_stage1_e2.bin", "ckpt_stage2_e1.bin", "log.csv", "config.json"})
    EXPECT_TRUE(fs::exists(run_dir() / f)) << f;
  const auto cfg = read_config_file(run_dir() / "config.json");
  EXPECT_EQ(cfg["provenance"]["train.epochs_stage1"], "flag");
  EXPECT_EQ(cfg["provenance"]["train.margin"], "default");
}

TEST_F(TrainedRun, RerunFromConfigIsBitIdentical) {
  const auto dir = scratch_dir();
  fs::copy(run_dir(), dir / "first", fs::copy_options::recursive);
  auto cfg = read_config_file(run_dir() / "config.json");
  cfg["paths"]["out"] = (dir / "second").string();
  std::ofstream(dir / "config.json") << cfg.dump(2);
  ASSERT_EQ(run({"train", "--config", (dir / "config.json").string()}).code, 0);
  for (const char* f : {"ckpt_stage1_e2.bin", "ckpt_stage2_e1.bin", "log.csv"})
    EXPECT_TRUE(slurp(dir / "first" / f) == slurp(dir / "second" / f)) << f;
}

TEST_F(TrainedRun, StageTwoPicksUpLatestStageOneCheckpoint) {
  const auto dir = scratch_dir();
  for (const char* f : {"ckpt_stage1_e1.bin", "ckpt_stage1_e2.bin"}) fs::copy(run_dir() / f, dir / f);
  auto args = tiny_train(data(), dir);
  args.insert(args.end(), {"--stage", "2"});
  const auto r = run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("ckpt_stage1_e2.bin"), std::string::npos);
  EXPECT_TRUE(slurp(dir / "ckpt_stage2_e1.bin") == slurp(final_checkpoint()));
}

TEST_F(TrainedRun, EvalWithRerankReportsBothBlocks) {
  const auto dir = scratch_dir();
  const auto r = run({"eval", "--data", data().string(), "--checkpoint", final_checkpoint().string(), "--rerank", "--out",
                      dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
  EXPECT_EQ(report["branch"], "full");
  EXPECT_TRUE(report["reranked"].get<bool>());
  EXPECT_TRUE(report.contains("rerank"));
  EXPECT_EQ(report["mask_iou"].size(), 8u);
  EXPECT_TRUE(fs::exists(dir / "cmc.csv"));
  EXPECT_TRUE(fs::exists(dir / "rerank_cmc.csv"));
  EXPECT_NE(r.out.find("re-ranked: rank-1"), std::string::npos);
}

TEST_F(TrainedRun, GlobalOnlyBaselineScoresG) {
  const auto dir = scratch_dir();
  const auto r = run({"eval", "--data", data().string(), "--checkpoint", final_checkpoint().string(), "--baseline",
                      "global-only", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(slurp(dir / "report.json"))["branch"], "global");
  EXPECT_EQ(run({"eval", "--data", data().string(), "--checkpoint", final_checkpoint().string(), "--baseline", "other",
                 "--out", dir.string()})
                .code,
            2);
}

TEST_F(TrainedRun, EvalIsDeterministic) {
  const auto dir = scratch_dir();
  for (const char* sub : {"a", "b"})
    ASSERT_EQ(run({"eval", "--data", data().string(), "--checkpoint", final_checkpoint().string(), "--out",
                   (dir / sub).string()})
                  .code,
              0);
  EXPECT_EQ(slurp(dir / "a" / "report.json"), slurp(dir / "b" / "report.json"));
}

TEST_F(TrainedRun, StageOneCheckpointDefaultsToGlobalBranch) {
  const auto dir = scratch_dir();
  const auto r = run({"eval", "--data", data().string(), "--checkpoint", (run_dir() / "ckpt_stage1_e2.bin").string(),
                      "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(slurp(dir / "report.json"))["branch"], "global");
}

TEST_F(TrainedRun, CorruptCheckpointIsRejected) {
  const auto dir = scratch_dir();
  std::ofstream(dir / "bad.bin") << "not a checkpoint";
  const auto r = run({"eval", "--data", data().string(), "--checkpoint", (dir / "bad.bin").string(), "--out",
                      (dir / "o").string()});
  EXPECT_EQ(r.code, 2);
}

TEST_F(TrainedRun, InspectMasksDumpsOneImagePerMaskAndProbe) {
  const auto dir = scratch_dir();
  const auto r = run({"inspect-masks", "--data", data().string(), "--checkpoint", final_checkpoint().string(), "--probes",
                      "3", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_files(dir / "masks"), 3u * 8u);
  const auto summary = nlohmann::json::parse(slurp(dir / "mask_iou.json"));
  EXPECT_EQ(summary["iou"].size(), 8u);
}

TEST(Cli, UntrainedMasksAreHalfGrey) {
  const auto dir = scratch_dir();
  ASSERT_EQ(run(tiny_data(dir / "data")).code, 0);
  const auto m = load_manifest(dir / "data" / "manifest.json");
  RunConfig c = resolve_config("train", nullptr, {{"model.widths", "[4,8,8,8]"}, {"model.feat_dim", "16"}});
  TrainState s = make_train_state(c.model_config(m), c.train_config());
  save_checkpoint(dir / "init.bin", s, c.train_config());
  ASSERT_EQ(run({"inspect-masks", "--data", (dir / "data").string(), "--checkpoint", (dir / "init.bin").string(), "--out",
                 (dir / "o").string()})
                .code,
            0);
  std::size_t images = 0;
  for (const auto& e : fs::directory_iterator(dir / "o" / "masks")) {
    const Image8 img = read_pnm(e.path());
    for (auto p : img.pixels) EXPECT_NEAR(p, 128, 1);
    ++images;
  }
  EXPECT_EQ(images, 4u * 8u);
}

TEST(Cli, GradcheckSingleOpAndSeed) {
  const auto dir = scratch_dir();
  const auto r = run({"gradcheck", "--op", "weighted_average_pool", "--seed", "3", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = slurp(dir / "gradcheck.csv");
  EXPECT_NE(csv.find("weighted_average_pool,3,"), std::string::npos);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);  // header + one row
  EXPECT_EQ(run({"gradcheck", "--op", "no_such_op"}).code, 2);
}

TEST(Cli, GradcheckFailureExitsWithNumericalCode) {
  EXPECT_EQ(run({"gradcheck", "--op", "weighted_average_pool", "--seed", "1", "--gradcheck.op_tolerance", "1e-30"}).code,
            3);
}
