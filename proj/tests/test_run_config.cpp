#include "scnn/run_config.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

namespace scnn {
namespace {

using nlohmann::json;

std::string config_error(const json& doc) {
  try {
    parse_run_config(doc);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

TEST(RunConfigParse, EmptyDocumentGivesDefaults) {
  const auto cfg = parse_run_config(json::object());
  EXPECT_EQ(cfg.seed, 1u);
  EXPECT_EQ(cfg.pipeline.proposal_threshold, 0.7);
  EXPECT_EQ(cfg.pipeline.loss.lambda, 1.0);
  EXPECT_EQ(cfg.pipeline.windows.lengths, (std::vector<FrameIndex>{16, 32, 64, 128}));
}

TEST(RunConfigParse, UnknownKeysAreAllReported) {
  const auto msg = config_error(json{{"bogus", 1}, {"loss", {{"lamda", 2.0}}}});
  EXPECT_NE(msg.find("bogus"), std::string::npos) << msg;
  EXPECT_NE(msg.find("loss.lamda"), std::string::npos) << msg;
}

TEST(RunConfigParse, WrongTypesAndRangeErrorsAreReported) {
  const auto msg = config_error(json{{"seed", "one"}, {"loss", {{"alpha", -1.0}}}});
  EXPECT_NE(msg.find("seed"), std::string::npos) << msg;
  EXPECT_NE(msg.find("alpha"), std::string::npos) << msg;
}

TEST(RunConfigParse, HistogramThetaMustBeEvaluated) {
  const auto msg = config_error(json{{"eval", {{"thetas", {0.1, 0.3}}, {"histogram_theta", 0.5}}}});
  EXPECT_NE(msg.find("histogram_theta"), std::string::npos) << msg;
}

TEST(RunConfigParse, SeedPropagatesToEveryStage) {
  auto cfg = parse_run_config(json{{"seed", 5}});
  EXPECT_EQ(cfg.pipeline.seed, 5u);
  EXPECT_EQ(cfg.pipeline.proposal_sgd.seed, 16u);
  EXPECT_EQ(cfg.pipeline.classification_sgd.seed, 17u);
  EXPECT_EQ(cfg.pipeline.localization_sgd.seed, 18u);
}

TEST(RunConfigParse, JsonRoundTripAndStableHash) {
  const auto a = parse_run_config(json{{"seed", 9}, {"loss", {{"alpha", 0.5}}}, {"window", {{"lengths", {16, 32}}}}});
  const auto b = parse_run_config(a.to_json());
  EXPECT_EQ(a.to_json(), b.to_json());
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.hash().size(), 16u);
  EXPECT_NE(a.hash(), parse_run_config(json::object()).hash());
}

class ConfigFile : public ::testing::Test {
 protected:
  void SetUp() override {
    path_ = std::filesystem::temp_directory_path() /
            ("scnn_cfg_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) + ".json");
  }
  void TearDown() override { std::filesystem::remove(path_); }
  std::filesystem::path path_;
};

TEST_F(ConfigFile, OverridesApplyOnTopOfTheFile) {
  std::ofstream(path_) << R"({"loss": {"alpha": 0.5}, "paths": {"data_dir": "d"}})";
  const auto cfg = load_run_config(path_, {"loss.alpha=1.0", "paths.model_dir=m", "sgd.proposal.iterations=7",
                                           "sgd.proposal.drop_interval=7"});
  EXPECT_EQ(cfg.pipeline.loss.alpha, 1.0);
  EXPECT_EQ(cfg.paths.data_dir, "d");
  EXPECT_EQ(cfg.paths.model_dir, "m");
  EXPECT_EQ(cfg.pipeline.proposal_sgd.iterations, 7);
}

TEST_F(ConfigFile, MalformedOverrideOrDocumentIsConfigError) {
  std::ofstream(path_) << "{}";
  EXPECT_THROW(load_run_config(path_, {"no_equals_sign"}), ConfigError);
  std::ofstream(path_) << "{not json";
  EXPECT_THROW(load_run_config(path_), ConfigError);
  EXPECT_THROW(load_run_config(path_.string() + ".missing"), ConfigError);
}

TEST(RunConfigFiles, ShippedConfigsParse) {
  for (const char* name : {"acceptance.json", "smoke.json"}) {
    const auto path = std::filesystem::path(SCNN_SOURCE_DIR) / "configs" / name;
    EXPECT_NO_THROW(load_run_config(path)) << name;
  }
}

TEST(RunConfigReference, ListsEveryTopLevelSection) {
  const auto ref = config_reference();
  for (const char* key : {"seed", "synth.noise", "window.overlap", "labeling.rescue_iou", "loss.alpha", "network.hidden",
                          "sgd.localization.base_lr", "pipeline.nms_offset", "eval.thetas", "ablation.alphas"})
    EXPECT_NE(ref.find(key), std::string::npos) << key;
}

}  // namespace
}  // namespace scnn
