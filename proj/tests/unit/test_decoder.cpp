#include <gtest/gtest.h>

#include "maskdepth/decoder.hpp"
#include "maskdepth/model.hpp"

namespace maskdepth {
namespace {

Matrix<double> scalar(double v) { return Matrix<double>::Constant(1, 1, v); }

TEST(DepthFromSigmoid, Midpoint) { EXPECT_DOUBLE_EQ(depth_from_sigmoid(scalar(0.5), 0.0, 80.0)(0, 0), 40.0); }

TEST(DepthFromSigmoid, HandValue) { EXPECT_DOUBLE_EQ(depth_from_sigmoid(scalar(0.25), 1.0, 10.0)(0, 0), 3.25); }

TEST(DepthFromSigmoid, Limits) {
  const auto lin = DepthOutput::linear_depth;
  const auto inv = DepthOutput::affine_inverse_depth;
  EXPECT_NEAR(depth_from_sigmoid(scalar(0.0), 1e-3, 80.0, lin)(0, 0), 1e-3, 1e-12);
  EXPECT_NEAR(depth_from_sigmoid(scalar(1.0), 1e-3, 80.0, lin)(0, 0), 80.0, 1e-9);
  // sigma is affine in inverse depth: 1 is the near plane
  EXPECT_NEAR(depth_from_sigmoid(scalar(1.0), 1e-3, 80.0, inv)(0, 0), 1e-3, 1e-12);
  EXPECT_NEAR(depth_from_sigmoid(scalar(0.0), 1e-3, 80.0, inv)(0, 0), 80.0, 1e-9);
  // inverse mode is decreasing in sigma
  EXPECT_GT(depth_from_sigmoid(scalar(0.2), 1.0, 80.0, DepthOutput::affine_inverse_depth)(0, 0),
            depth_from_sigmoid(scalar(0.3), 1.0, 80.0, DepthOutput::affine_inverse_depth)(0, 0));
}

TEST(DepthFromSigmoid, RejectsEmptyRange) {
  EXPECT_THROW((void)depth_from_sigmoid(scalar(0.5), 5.0, 5.0), ConfigError);
  EXPECT_THROW((void)depth_from_sigmoid(scalar(0.5), 0.0, 5.0, DepthOutput::affine_inverse_depth), ConfigError);
}

TEST(Decoder, ZeroFeaturesAndBiasesGiveMidpoint) {
  DecoderConfig cfg;
  cfg.d_min = 0.0;
  Decoder<double> dec(cfg);
  Rng rng(1);
  dec.init(rng);
  dec.visit(nn::ParamVisitor<double>([](nn::Param<double>& p) {
    if (p.name.ends_with("bias")) p.value.setZero();
  }));
  const std::vector<Matrix<double>> skips(4, Matrix<double>::Zero(128, 64));
  const auto pred = dec.forward(skips, 8, 16, nullptr);
  ASSERT_EQ(pred.depth.rows(), 32);
  ASSERT_EQ(pred.depth.cols(), 64);
  EXPECT_TRUE(pred.sigmoid.isApproxToConstant(0.5, 0));
  EXPECT_TRUE(pred.log_uncertainty.isZero(0));
  EXPECT_TRUE(pred.depth.isApproxToConstant(40.0, 0));
}

TEST(Decoder, DeskResolution) {
  Model<float> model(ModelConfig::desk());
  model.init(2);
  const ImageTensor image(3, 32, 64);
  const auto out = model.forward(image, nullptr, nullptr);
  EXPECT_EQ(out.prediction.depth.rows(), 32);
  EXPECT_EQ(out.prediction.depth.cols(), 64);
  EXPECT_EQ(out.prediction.log_uncertainty.rows(), 32);
  EXPECT_EQ(out.features.rows(), 128);
  EXPECT_GT(out.prediction.depth.minCoeff(), 0.0f);
  EXPECT_LT(out.prediction.depth.maxCoeff(), 80.0f);
}

TEST(Decoder, FullResolutionFromTokenGrid) {
  // Full-size geometry (p=16, 12x40 grid) with narrow widths to keep the test fast.
  DecoderConfig cfg;
  cfg.d_model = 768;
  cfg.patch_size = 16;
  cfg.level_widths = {4, 4, 4, 4};
  cfg.fusion_width = 4;
  cfg.head_width = 2;
  cfg.validate(192, 640);
  Decoder<float> dec(cfg);
  Rng rng(3);
  dec.init(rng);
  const std::vector<Matrix<float>> skips(4, Matrix<float>::Zero(480, 768));
  const auto pred = dec.forward(skips, 12, 40, nullptr);
  EXPECT_EQ(pred.depth.rows(), 192);
  EXPECT_EQ(pred.depth.cols(), 640);
}

TEST(Decoder, ResampleFactors) {
  DecoderConfig desk;
  desk.patch_size = 4;
  EXPECT_EQ(desk.resample_factor(0), 1);
  EXPECT_EQ(desk.resample_factor(1), -2);
  DecoderConfig full;
  full.patch_size = 16;
  EXPECT_EQ(full.resample_factor(0), 4);
  EXPECT_EQ(full.resample_factor(1), 2);
  EXPECT_EQ(full.resample_factor(2), 1);
  EXPECT_EQ(full.resample_factor(3), -2);
}

TEST(Decoder, RejectsIncompatibleImage) {
  DecoderConfig cfg;
  EXPECT_THROW(cfg.validate(40, 64), ShapeError);
}

}  // namespace
}  // namespace maskdepth
