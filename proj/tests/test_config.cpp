#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "sfi/commands.hpp"
#include "sfi/config.hpp"

using namespace sfi;

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

const std::filesystem::path kConfigDir = SFI_CONFIG_DIR;

}  // namespace

TEST(Config, TextRoundTripIsIdentity) {
  for (const auto* name : {"desk", "tiny", "paper-protocol"}) {
    auto cfg = RunConfig::preset(name);
    const auto text = cfg.to_text();
    EXPECT_EQ(parse_config(text).to_text(), text) << name;
  }
  RunConfig cfg;
  cfg.train.lr = 0.0123456789;
  cfg.ambiguity.beta_h = 1.0 / 3.0;
  auto back = parse_config(cfg.to_text());
  EXPECT_EQ(back.train.lr, cfg.train.lr);
  EXPECT_EQ(back.ambiguity.beta_h, cfg.ambiguity.beta_h);
}

TEST(Config, UnknownKeyIsNamed) {
  auto msg = error_of([] { parse_config("train.learning_rate = 0.1\n"); });
  EXPECT_NE(msg.find("train.learning_rate"), std::string::npos) << msg;
  EXPECT_THROW(parse_config("train.learning_rate = 0.1\n"), ConfigError);
}

TEST(Config, MalformedValueNamesTheField) {
  auto msg = error_of([] { parse_config("mff.gamma1 = lots\n"); });
  EXPECT_NE(msg.find("mff.gamma1"), std::string::npos) << msg;
  EXPECT_THROW(parse_config("train.epochs = -3\n"), ConfigError);
  EXPECT_THROW(parse_config("backbone.strides = 4,x\n"), ConfigError);
  EXPECT_THROW(parse_config("train.augment = maybe\n"), ConfigError);
  EXPECT_THROW(parse_config("no equals sign here\n"), ConfigError);
}

TEST(Config, CommentsAndBlankLinesAreIgnored) {
  auto cfg = parse_config("# header\n\n  train.epochs = 7   # trailing\nmff.k=2\n");
  EXPECT_EQ(cfg.train.epochs, 7u);
  EXPECT_EQ(cfg.ambiguity.k, 2u);
}

TEST(Config, OverridesApplyOnTop) {
  RunConfig cfg;
  apply_override(cfg, "train.lr=0");
  apply_override(cfg, "backbone.channels=8,8,16,16");
  apply_override(cfg, "sir.adjacency_init=0.25");
  EXPECT_EQ(cfg.train.lr, 0.0);
  EXPECT_EQ(cfg.backbone.channels, (std::vector<std::size_t>{8, 8, 16, 16}));
  EXPECT_EQ(cfg.sir.adjacency_init, 0.25);
  EXPECT_THROW(apply_override(cfg, "train.lr"), ConfigError);
}

TEST(Config, ValidationRejectsInconsistentSettings) {
  RunConfig cfg;
  cfg.sir.heads = 5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.backbone.strides = {4, 2};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.ambiguity.k = 9;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.ambiguity.gamma1 = 0.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.out_dir.clear();
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_THROW(RunConfig::preset("huge"), ConfigError);
}

TEST(Config, PresetsAndShippedFilesValidate) {
  for (const auto* name : {"desk", "tiny", "paper-protocol"}) EXPECT_NO_THROW(RunConfig::preset(name).validate());
  for (const auto* file : {"desk.cfg", "ambiguous.cfg", "paper-protocol.cfg"}) {
    RunConfig cfg;
    ASSERT_NO_THROW(cfg = load_config(kConfigDir / file)) << file;
    EXPECT_NO_THROW(cfg.validate()) << file;
  }
  auto desk = load_config(kConfigDir / "desk.cfg");
  desk.out_dir = RunConfig{}.out_dir;
  EXPECT_EQ(desk.to_text(), RunConfig{}.to_text());
}

TEST(Config, ModelDerivesInputFromData) {
  RunConfig cfg;
  cfg.data.image_size = 24;
  cfg.data.channels = 1;
  cfg.data.classes = 6;
  auto m = cfg.model();
  EXPECT_EQ(m.backbone.input_width, 24u);
  EXPECT_EQ(m.backbone.input_height, 24u);
  EXPECT_EQ(m.backbone.input_channels, 1u);
  EXPECT_EQ(m.num_classes, 6u);
}

TEST(ConfigResolution, PrecedenceIsFileThenEnvThenOverride) {
  cli::ConfigSource src;
  src.path = kConfigDir / "desk.cfg";
  ::setenv(cli::kSeedEnv, "77", 1);
  EXPECT_EQ(cli::resolve_config(src).train.seed, 77u);
  src.overrides = {"train.seed=5"};
  EXPECT_EQ(cli::resolve_config(src).train.seed, 5u);
  ::unsetenv(cli::kSeedEnv);
  src.overrides.clear();
  EXPECT_EQ(cli::resolve_config(src).train.seed, kDefaultSeed);
}

TEST(ConfigResolution, MissingFileNamesThePath) {
  cli::ConfigSource src;
  src.path = "/nonexistent/run.cfg";
  auto msg = error_of([&] { cli::resolve_config(src); });
  EXPECT_NE(msg.find("/nonexistent/run.cfg"), std::string::npos) << msg;
  EXPECT_THROW(cli::resolve_config(src), FormatError);
}
