#include "sfanet/config.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace sfanet;

TEST(Config, DefaultsAreValid) {
  RunConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.train.batch_size, 30);
  EXPECT_EQ(c.augment.crop_width, 400);
  EXPECT_DOUBLE_EQ(c.train.alpha, 0.1);
  EXPECT_DOUBLE_EQ(c.train.weight_decay, 5e-3);
}

TEST(Config, ParsesEverySection) {
  const auto c = parse_config(R"(
[model]
width_multiplier = 0.25
conv_algorithm = direct
[train]
lr = 3e-4
batch_size = 8
epochs = 2
max_steps = 100
reduction = mean
seed = 77
[augment]
crop_width = 128
crop_height = 96
gamma_p = 0.0
[groundtruth]
density_mu = 9
density_rho = 2.5
threshold = 0.002
[normalize]
mean = 0.5, 0.5, 0.5
std = 0.25,0.25,0.25
[data]
train_manifest = train/manifest.json
out_dir = /tmp/abs
)",
                              "/base");
  EXPECT_DOUBLE_EQ(c.model.width_multiplier, 0.25);
  EXPECT_EQ(c.model.conv_algorithm, ConvAlgorithm::Direct);
  EXPECT_DOUBLE_EQ(c.train.lr, 3e-4);
  EXPECT_EQ(c.train.batch_size, 8);
  EXPECT_EQ(c.train.max_steps, 100);
  EXPECT_EQ(c.train.reduction, PixelReduction::Mean);
  EXPECT_EQ(c.train.seed, 77u);
  EXPECT_EQ(c.augment.crop_height, 96);
  EXPECT_EQ(c.groundtruth.density_kernel.mu, 9);
  EXPECT_DOUBLE_EQ(c.groundtruth.density_kernel.rho, 2.5);
  EXPECT_DOUBLE_EQ(c.groundtruth.threshold, 0.002);
  EXPECT_FLOAT_EQ(c.normalize.stddev[2], 0.25f);
  EXPECT_EQ(*c.train_manifest, std::filesystem::path("/base/train/manifest.json"));
  EXPECT_EQ(*c.out_dir, std::filesystem::path("/tmp/abs"));
}

TEST(Config, ValuesOverrideThePresetBase) {
  const auto c = parse_config("[train]\nlr = 0.5\n", ".", preset("desk"));
  EXPECT_DOUBLE_EQ(c.model.width_multiplier, 0.125);
  EXPECT_EQ(c.augment.crop_width, 128);
  EXPECT_DOUBLE_EQ(c.train.lr, 0.5);
}

TEST(Config, AttentionSwitchesStayInStep) {
  const auto off = parse_config("[model]\namp_enabled = false\n", ".");
  EXPECT_FALSE(off.model.amp_enabled);
  EXPECT_FALSE(off.train.amp_enabled);
  const auto off2 = parse_config("[train]\namp_enabled = no\n", ".");
  EXPECT_FALSE(off2.model.amp_enabled);
  EXPECT_THROW(parse_config("[model]\namp_enabled = true\n[train]\namp_enabled = false\n", "."), ConfigError);
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config("[train]\nlearning_rate = 1\n", "."), ConfigError);
  EXPECT_THROW(parse_config("[nosuch]\nx = 1\n", "."), ConfigError);
  EXPECT_THROW(parse_config("lr = 1\n", "."), ConfigError);
  EXPECT_THROW(parse_config("[train]\nlr = fast\n", "."), ConfigError);
  EXPECT_THROW(parse_config("[train]\nbatch_size = 2.5\n", "."), ConfigError);
  EXPECT_THROW(parse_config("[normalize]\nmean = 1, 2\n", "."), ConfigError);
  EXPECT_THROW(parse_config("[model]\nupsample = bilinear\n", "."), ConfigError);
  EXPECT_THROW(parse_config("[groundtruth]\ndensity_mu = 4\n", "."), std::invalid_argument);
  EXPECT_THROW(parse_config("[train\nlr = 1\n", "."), ConfigError);
}

TEST(Config, LoadNamesTheFile) {
  testutil::TempDir dir("cfg");
  {
    std::ofstream f(dir / "run.ini");
    f << "[train]\nbogus = 1\n";
  }
  try {
    load_config(dir / "run.ini");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.ini"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("train.bogus"), std::string::npos);
  }
  EXPECT_THROW(load_config(dir / "absent.ini"), ConfigError);
}

TEST(Config, Presets) {
  for (const auto& name : preset_names()) EXPECT_NO_THROW(preset(name).validate()) << name;
  EXPECT_DOUBLE_EQ(preset("parta").augment.gray_p, 0.1);
  EXPECT_DOUBLE_EQ(preset("partb").augment.gray_p, 0.0);
  EXPECT_TRUE(preset("qnrf").ingest.qnrf_resize);
  EXPECT_EQ(preset("qnrf").groundtruth.density_kernel.mu, 15);
  EXPECT_TRUE(preset("ucsd").ingest.ucsd_upscale);
  EXPECT_THROW(preset("shanghai"), ConfigError);
}

TEST(Config, SetSeedReachesEveryConsumer) {
  RunConfig c;
  c.set_seed(123);
  EXPECT_EQ(c.model.init_seed, 123u);
  EXPECT_EQ(c.train.seed, 123u);
  EXPECT_EQ(c.augment.seed, 123u);
}
