#include <gtest/gtest.h>

#include <fstream>

#include "test_support.hpp"

using namespace smsd;
using namespace smsd::fixtures;

namespace {

const std::filesystem::path kConfigs = SMSD_CONFIG_DIR;

void write(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "<no ConfigError>";
}

}  // namespace

TEST(Config, ParsesKeysCommentsAndBlankLines) {
  const auto c = ConfigFile::parse("# comment\n\nn_harmonics = 20   # trailing\n  use_z=true\nlearning_rate = 2e-4\n");
  EXPECT_EQ(c.get("n_harmonics"), "20");
  const auto t = c.to_train_config();
  EXPECT_EQ(t.model.n_harmonics, 20u);
  EXPECT_TRUE(t.model.use_z);
  EXPECT_DOUBLE_EQ(t.learning_rate, 2e-4);
  EXPECT_EQ(t.model.n_noise, 65u);  // untouched keys keep their defaults
}

TEST(Config, LaterKeysOverrideIncludedOnes) {
  const auto dir = temp_dir("cfg_override");
  write(dir / "base.conf", "n_harmonics = 60\nsteps = 100\n");
  write(dir / "child.conf", "steps = 5\ninclude base.conf\nn_harmonics = 20\n");
  const auto c = ConfigFile::load(dir / "child.conf");
  EXPECT_EQ(c.get("n_harmonics"), "20");
  EXPECT_EQ(c.get("steps"), "100");  // include is processed in place
}

TEST(Config, IncludeIsRelativeToTheIncludingFile) {
  const auto dir = temp_dir("cfg_rel");
  std::filesystem::create_directories(dir / "sub");
  write(dir / "sub" / "a.conf", "include b.conf\n");
  write(dir / "sub" / "b.conf", "gru_units = 7\n");
  EXPECT_EQ(ConfigFile::load(dir / "sub" / "a.conf").get("gru_units"), "7");
}

TEST(Config, IncludeCycleRejected) {
  const auto dir = temp_dir("cfg_cycle");
  write(dir / "a.conf", "include b.conf\n");
  write(dir / "b.conf", "steps = 1\ninclude a.conf\n");
  EXPECT_NE(error_of([&] { ConfigFile::load(dir / "a.conf"); }).find("cycle"), std::string::npos);
  write(dir / "self.conf", "include self.conf\n");
  EXPECT_THROW(ConfigFile::load(dir / "self.conf"), ConfigError);
}

TEST(Config, DiamondIncludeIsNotACycle) {
  const auto dir = temp_dir("cfg_diamond");
  write(dir / "base.conf", "steps = 3\n");
  write(dir / "l.conf", "include base.conf\n");
  write(dir / "r.conf", "include base.conf\n");
  write(dir / "top.conf", "include l.conf\ninclude r.conf\n");
  EXPECT_EQ(ConfigFile::load(dir / "top.conf").get("steps"), "3");
}

TEST(Config, UnknownKeyNamesLine) {
  const auto dir = temp_dir("cfg_unknown");
  write(dir / "a.conf", "# header\nsteps = 3\nn_harmonix = 20\n");
  const auto msg = error_of([&] { ConfigFile::load(dir / "a.conf"); });
  EXPECT_NE(msg.find("a.conf:3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("n_harmonix"), std::string::npos) << msg;
}

TEST(Config, BadValuesNameLine) {
  EXPECT_NE(error_of([] { ConfigFile::parse("\nsteps = ten\n").to_train_config(); }).find(":2"), std::string::npos);
  EXPECT_NE(error_of([] { ConfigFile::parse("use_z = maybe\n").to_train_config(); }).find(":1"), std::string::npos);
  EXPECT_THROW(ConfigFile::parse("steps = -1\n").to_train_config(), ConfigError);
  EXPECT_THROW(ConfigFile::parse("learning_rate = 1e-3x\n").to_train_config(), ConfigError);
  EXPECT_THROW(ConfigFile::parse("steps\n"), ConfigError);
  EXPECT_THROW(ConfigFile::parse("steps =\n"), ConfigError);
  EXPECT_THROW(ConfigFile::parse("include\n"), ConfigError);
  EXPECT_THROW(ConfigFile::parse("steps = 0\n").to_train_config(), ConfigError);
  EXPECT_THROW(ConfigFile::load("/nonexistent/a.conf"), ConfigError);
}

TEST(Config, TextRoundTrip) {
  TrainConfig c;
  c.model.n_harmonics = 33;
  c.model.use_z = true;
  c.learning_rate = 0.1 + 1e-12;
  c.seed = 123456789012345ull;
  c.example_seconds = 1.0 / 3.0;
  EXPECT_EQ(ConfigFile::parse(to_config_text(c)).to_train_config(), c);
}

TEST(Config, SingingDefaults) {
  const auto c = ConfigFile::load(kConfigs / "singing.conf").to_train_config();
  EXPECT_EQ(c.model.n_harmonics, 60u);
  EXPECT_EQ(c.model.n_noise, 65u);
  EXPECT_TRUE(c.model.use_reverb);
  EXPECT_FALSE(c.model.use_z);
  EXPECT_EQ(c.batch_size, 16u);
  EXPECT_EQ(c.steps, 40000u);
}

TEST(Config, SingingZInheritsSinging) {
  const auto c = ConfigFile::load(kConfigs / "singing_z.conf").to_train_config();
  EXPECT_TRUE(c.model.use_z);
  EXPECT_EQ(c.model.n_harmonics, 60u);
  EXPECT_EQ(c.model.n_noise, 65u);
  EXPECT_EQ(c.model.z_dim, 16u);
  EXPECT_EQ(c.model.mfcc_count, 30u);
}

TEST(Config, DeskDimensions) {
  const auto c = ConfigFile::load(kConfigs / "desk.conf").to_train_config();
  EXPECT_EQ(c.model.n_harmonics, 20u);
  EXPECT_EQ(c.model.n_noise, 33u);
  EXPECT_EQ(c.model.gru_units, 64u);
  EXPECT_EQ(c.model.mlp_units, 128u);
  EXPECT_EQ(c.batch_size, 4u);
  EXPECT_EQ(c.steps, 2000u);
  EXPECT_EQ(c.example_seconds, 1.0);
}

TEST(Config, SweepConfigsParse) {
  for (std::size_t h : {20u, 60u, 100u})
    for (std::size_t n : {10u, 35u, 65u}) {
      const auto path = kConfigs / "sweep" / ("h" + std::to_string(h) + "_n" + std::to_string(n) + ".conf");
      const auto c = ConfigFile::load(path).to_train_config();
      EXPECT_EQ(c.model.n_harmonics, h) << path;
      EXPECT_EQ(c.model.n_noise, n) << path;
      EXPECT_EQ(c.model.gru_units, 64u) << path;
    }
}
