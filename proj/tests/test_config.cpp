#include <gtest/gtest.h>

#include "lapir/config.hpp"

using namespace lapir;

TEST(RunConfig, DeskDefaults) {
  const RunConfig c = RunConfig::desk();
  EXPECT_EQ(c.network.scale, 2);
  EXPECT_EQ(c.network.levels, 2u);
  EXPECT_EQ(c.network.blocks_per_level, 1u);
  EXPECT_EQ(c.network.channels, 16u);
  EXPECT_EQ(c.network.input_patch, 27u);
  EXPECT_EQ(c.stage1.batch_size, 8u);
  EXPECT_EQ(c.stage2.batch_size, 8u);
  EXPECT_EQ(c.stage1.epochs, 4u);
  EXPECT_EQ(c.stage2.epochs, 2u);
  EXPECT_EQ(c.data.stride, 14u);
  EXPECT_EQ(c.eval.psnr_tolerance, 0.15);
  EXPECT_EQ(c.eval.ssim_tolerance, 0.01);
  EXPECT_EQ(c.network.loss.beta, 0.05);
  EXPECT_EQ(c.network.rank.window, 3u);
  EXPECT_EQ(c.network.rank.delta, 4.0 / 255.0);
  EXPECT_NO_THROW(c.validate());
}

TEST(RunConfig, FullSizePresets) {
  EXPECT_EQ(RunConfig::paper(2).network.levels, 2u);
  EXPECT_EQ(RunConfig::paper(3).network.levels, 4u);
  const RunConfig c = RunConfig::paper(4);
  EXPECT_EQ(c.network.levels, 6u);
  EXPECT_EQ(c.network.scale, 4);
  EXPECT_EQ(c.network.channels, 64u);
  EXPECT_EQ(c.stage1.batch_size, 128u);
  EXPECT_EQ(c.stage1.lr_conv, 0.1);
  EXPECT_EQ(c.stage1.clip, TrainSchedule::stage1().clip);
  EXPECT_NO_THROW(c.validate());
}

TEST(RunConfig, TextRoundTripIsExact) {
  RunConfig c = RunConfig::paper(3);
  c.stage2.rmsprop_eps = 1.0 / 3.0;
  c.network.loss.level_weights = {0.5, 1.25, 1.0, 2.0};
  c.data.augment = false;
  const std::string text = c.to_text();
  const RunConfig back = RunConfig::from_text(text);
  EXPECT_EQ(back.to_text(), text);
  EXPECT_EQ(back.stage2.rmsprop_eps, 1.0 / 3.0);
  EXPECT_EQ(back.network.loss.level_weights, c.network.loss.level_weights);
  EXPECT_FALSE(back.data.augment);
  EXPECT_EQ(RunConfig::from_text(RunConfig::desk().to_text()).to_text(), RunConfig::desk().to_text());
}

TEST(RunConfig, EveryFieldIsAddressable) {
  const std::string text = RunConfig::desk().to_text();
  for (const char* section : {"[network]", "[loss]", "[train.stage1]", "[train.stage2]", "[data]", "[eval]"}) {
    EXPECT_NE(text.find(section), std::string::npos) << section;
  }
  for (const char* key : {"lr_conv=", "lr_transposed=", "clip=", "momentum=", "rmsprop_decay=", "rmsprop_eps=",
                          "batch_size=", "weight_decay=", "epochs=", "beta=", "delta=", "tau=", "window=",
                          "channels=", "levels=", "blocks_per_level=", "input_patch="}) {
    EXPECT_NE(text.find(key), std::string::npos) << key;
  }
}

TEST(RunConfig, SetOverridesAndRejectsUnknownKeys) {
  RunConfig c;
  c.set("train.stage1.lr_conv", "0.05");
  c.set("network.levels", "3");
  c.set("data.augment", "false");
  EXPECT_EQ(c.stage1.lr_conv, 0.05);
  EXPECT_EQ(c.network.levels, 3u);
  EXPECT_FALSE(c.data.augment);
  EXPECT_THROW(c.set("train.stage1.lr_cnov", "1"), Error);
  EXPECT_THROW(c.set("lr_conv", "1"), Error);
  EXPECT_THROW(c.set("network.levels", "two"), Error);
  EXPECT_THROW(c.set("network.levels", "2x"), Error);
  EXPECT_THROW(c.set("data.augment", "maybe"), Error);
}

TEST(RunConfig, FromTextRejectsTypos) {
  EXPECT_THROW(RunConfig::from_text("[network]\nchanels=8\n"), Error);
  EXPECT_THROW(RunConfig::from_text("[netwrok]\nchannels=8\n"), Error);
  EXPECT_THROW(RunConfig::from_text("channels=8\n"), Error);
  EXPECT_THROW(RunConfig::from_text("[network\nchannels=8\n"), Error);
  const RunConfig c = RunConfig::from_text("[network]\nchannels=8\n\n[meta]\nanything=1\n");
  EXPECT_EQ(c.network.channels, 8u);
  EXPECT_EQ(c.network.levels, 2u);
}

TEST(RunConfig, ValidateCatchesBadValues) {
  RunConfig c;
  c.data.stride = 0;
  EXPECT_THROW(c.validate(), Error);
  RunConfig d;
  d.network.scale = 5;
  EXPECT_THROW(d.validate(), Error);
  RunConfig e;
  e.stage1.batch_size = 0;
  EXPECT_THROW(e.validate(), Error);
}
