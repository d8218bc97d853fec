#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "lwanet/run_config.hpp"

using namespace lwanet;
namespace fs = std::filesystem;

namespace {

std::string error_of(const nlohmann::json& j) {
  try {
    RunConfig::from_json(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(RunConfig, DefaultsAreValidAndRoundTrip) {
  RunConfig c;
  EXPECT_NO_THROW(c.validate());
  c.network.num_classes = 4;
  c.train.epochs = 7;
  c.augment.rotation_deg = 5;
  c.data.synthetic = 12;
  c.workers = 2;
  const RunConfig back = RunConfig::from_json(nlohmann::json::parse(c.to_json().dump()));
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.train.augmentation.rotation_deg, 5);
}

TEST(RunConfig, UnknownKeysAreNamedAtEveryLevel) {
  EXPECT_NE(error_of({{"netwrk", {}}}).find("netwrk"), std::string::npos);
  EXPECT_NE(error_of({{"train", {{"gama", 2}}}}).find("gama"), std::string::npos);
  EXPECT_NE(error_of({{"network", {{"se_ration", 2}}}}).find("se_ration"), std::string::npos);
  EXPECT_NE(error_of({{"augment", {{"flip", 0.5}}}}).find("flip"), std::string::npos);
  EXPECT_NE(error_of({{"data", {{"rooot", "x"}}}}).find("rooot"), std::string::npos);
}

TEST(RunConfig, BadValuesAndTypesAreConfigErrors) {
  EXPECT_FALSE(error_of({{"train", {{"lr", "fast"}}}}).empty());
  EXPECT_FALSE(error_of({{"train", {{"batch_size", 0}}}}).empty());
  EXPECT_FALSE(error_of({{"network", {{"input_size", {100, 96}}}}}).empty());
  EXPECT_FALSE(error_of({{"workers", 0}}).empty());
}

TEST(RunConfig, LoadFromFile) {
  const fs::path p = fs::path(::testing::TempDir()) / "lwanet_cfg.json";
  std::ofstream(p) << R"({"network": {"num_classes": 3}, "train": {"epochs": 2}, "data": {"synthetic": 4}})";
  const RunConfig c = RunConfig::load(p.string());
  EXPECT_EQ(c.network.num_classes, 3);
  EXPECT_EQ(c.train.epochs, 2);
  EXPECT_EQ(c.data.synthetic, 4);
  EXPECT_THROW(RunConfig::load((fs::path(::testing::TempDir()) / "nope.json").string()), ConfigError);
  std::ofstream(p) << "{not json";
  EXPECT_THROW(RunConfig::load(p.string()), ConfigError);
}

TEST(RunConfig, SeedEnvironmentOverride) {
  RunConfig c;
  c.train.seed = 1;
  ::setenv("LWA_SEED", "1234", 1);
  apply_env_overrides(c);
  EXPECT_EQ(c.train.seed, 1234u);
  ::setenv("LWA_SEED", "12x", 1);
  EXPECT_THROW(apply_env_overrides(c), ConfigError);
  ::unsetenv("LWA_SEED");
  apply_env_overrides(c);
  EXPECT_EQ(c.train.seed, 1234u);
}
