#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>

#include "i2i/config.hpp"
#include "i2i/errors.hpp"

namespace i2i {
namespace {

std::string config_error(const std::string& text) {
  try {
    parse_run_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(Config, EmptyDocumentGivesDefaults) {
  const RunConfig c = parse_run_config("{}");
  EXPECT_EQ(c.train, TrainConfig{});
  EXPECT_EQ(c.checkpoint_every, 1000u);
  EXPECT_FALSE(c.log_wall_time);
  EXPECT_EQ(c.eval.diversity_k, 20u);
}

TEST(Config, ReadsNestedFields) {
  const RunConfig c = parse_run_config(R"({
    "seed": 9, "data_dir": "d", "out_dir": "o",
    "arch": {"code_dim": 4, "x": {"channels": 1, "height": 32, "width": 32}},
    "train": {"steps": 12, "lambda2": 0, "alpha": {"cycle2": {"alpha3": 0.5}}},
    "logging": {"log_wall_time": true},
    "eval": {"probe_specs": 7}
  })");
  EXPECT_EQ(c.train.seed, 9u);
  EXPECT_EQ(c.data_dir, "d");
  EXPECT_EQ(c.train.arch.code_dim, 4u);
  EXPECT_EQ(c.train.steps, 12u);
  EXPECT_EQ(c.train.lambda2, 0.0);
  EXPECT_EQ(c.train.alpha[1].alpha3, 0.5);
  EXPECT_EQ(c.train.alpha[0], CycleWeights{});
  EXPECT_TRUE(c.log_wall_time);
  EXPECT_EQ(c.eval.probe_specs, 7u);
}

TEST(Config, UnknownKeyNamesItsPath) {
  EXPECT_NE(config_error(R"({"train": {"lamda2": 1}})").find("'train.lamda2'"), std::string::npos);
  EXPECT_NE(config_error(R"({"arch": {"x": {"depth": 1}}})").find("'arch.x.depth'"), std::string::npos);
  EXPECT_NE(config_error(R"({"extra": 1})").find("'extra'"), std::string::npos);
}

TEST(Config, WrongTypesAndInvalidValues) {
  EXPECT_NE(config_error(R"({"train": {"steps": -1}})").find("'train.steps'"), std::string::npos);
  EXPECT_NE(config_error(R"({"train": {"learning_rate": "fast"}})").find("'train.learning_rate'"), std::string::npos);
  EXPECT_NE(config_error(R"({"logging": {"log_wall_time": 1}})").find("'logging.log_wall_time'"), std::string::npos);
  EXPECT_FALSE(config_error(R"({"train": {"batch_size": 1}})").empty());
  EXPECT_FALSE(config_error(R"({"eval": {"diversity_k": 1}})").empty());
  EXPECT_FALSE(config_error("{not json").empty());
  EXPECT_FALSE(config_error("[]").empty());
}

TEST(Config, BetaSetsAlpha4FromAlpha1) {
  const RunConfig c =
      parse_run_config(R"({"train": {"beta": 0.5, "alpha": {"cycle1": {"alpha1": 2}, "cycle2": {"alpha1": 4}}}})");
  EXPECT_EQ(c.train.alpha[0].alpha4, 1.0);
  EXPECT_EQ(c.train.alpha[1].alpha4, 2.0);
  EXPECT_FALSE(config_error(R"({"train": {"beta": 1, "alpha": {"cycle1": {"alpha4": 1}}}})").empty());
  EXPECT_FALSE(config_error(R"({"train": {"beta": -1}})").empty());
  EXPECT_FALSE(config_error(R"({"train": {"beta": 1, "alpha": {"cycle1": {"alpha1": 0}}}})").empty());
}

TEST(Config, ResolvedJsonRoundTrips) {
  RunConfig c = parse_run_config(R"({"seed": 4, "train": {"lambda1": 3.25, "mmd_sigma": 0.125}})");
  c.out_dir = "somewhere/else";
  c.eval.fid_samples = 321;
  const std::string text = to_json(c);
  const RunConfig back = parse_run_config(text);
  EXPECT_EQ(back.train, c.train);
  EXPECT_EQ(back.out_dir, c.out_dir);
  EXPECT_EQ(back.eval.fid_samples, 321u);
  EXPECT_EQ(to_json(back), text);
}

TEST(Config, MissingFileIsIoError) {
  EXPECT_THROW(load_run_config("/nonexistent/config.json"), IoError);
  const auto path = std::filesystem::temp_directory_path() / ("i2i_config_test_" + std::to_string(::getpid()) + ".json");
  std::ofstream(path) << R"({"train": {"steps": 3}})";
  EXPECT_EQ(load_run_config(path).train.steps, 3u);
}

}  // namespace
}  // namespace i2i
