#include <gtest/gtest.h>

#include "maskdepth/rng.hpp"
#include "maskdepth/tokens.hpp"

namespace maskdepth {
namespace {

FeatureMap<float> ramp(int c, int h, int w) {
  FeatureMap<float> img(c, h, w);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) img.at(ch, y, x) = static_cast<float>(ch * 100 + y * w + x);
  return img;
}

TEST(Patchify, SinglePatchIsChannelInterleaved) {
  const auto img = ramp(3, 2, 2);
  const Matrix<float> p = patchify(img, 2);
  ASSERT_EQ(p.rows(), 1);
  ASSERT_EQ(p.cols(), 12);
  const float expected[12] = {0, 100, 200, 1, 101, 201, 2, 102, 202, 3, 103, 203};
  for (int i = 0; i < 12; ++i) EXPECT_EQ(p(0, i), expected[i]) << i;
}

TEST(Patchify, RowOneIsTopRightPatch) {
  const auto img = ramp(3, 4, 4);
  const Matrix<float> p = patchify(img, 2);
  ASSERT_EQ(p.rows(), 4);
  ASSERT_EQ(p.cols(), 12);
  // top-right patch covers y in {0,1}, x in {2,3}
  int col = 0;
  for (int py = 0; py < 2; ++py)
    for (int px = 0; px < 2; ++px)
      for (int c = 0; c < 3; ++c) EXPECT_EQ(p(1, col++), img.at(c, py, 2 + px));
  EXPECT_EQ(p(1, 0), 2.0f);
  EXPECT_EQ(p(3, 0), 10.0f);
}

TEST(Patchify, FullResolutionShape) {
  FeatureMap<float> img(3, 192, 640);
  const Matrix<float> p = patchify(img, 16);
  EXPECT_EQ(p.rows(), 480);
  EXPECT_EQ(p.cols(), 768);
}

TEST(Patchify, RejectsIndivisibleShape) {
  FeatureMap<float> img(3, 6, 8);
  EXPECT_THROW((void)patchify(img, 4), ShapeError);
}

TEST(Patchify, UnpatchifyInvertsOnRandomShapes) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int p = static_cast<int>(rng.uniform_int(1, 5));
    const int h = p * static_cast<int>(rng.uniform_int(1, 6));
    const int w = p * static_cast<int>(rng.uniform_int(1, 6));
    const int c = static_cast<int>(rng.uniform_int(1, 4));
    FeatureMap<double> img(c, h, w);
    for (Eigen::Index i = 0; i < img.data.size(); ++i) img.data.data()[i] = rng.normal();
    const auto back = unpatchify(patchify(img, p), h, w, p, c);
    ASSERT_EQ(back.data, img.data) << "p=" << p << " h=" << h << " w=" << w;
  }
}

TEST(Embed, ZeroParamsGiveZeroTokens) {
  PatchEmbedding<float> emb(12, 8, 4);
  const Matrix<float> tokens = emb.forward(Matrix<float>::Zero(4, 12));
  EXPECT_TRUE(tokens.isZero(0));
}

TEST(Embed, IdentityProjectionPassesPatches) {
  PatchEmbedding<double> emb(6, 6, 3);
  emb.projection.weight.value = Matrix<double>::Identity(6, 6);
  Rng rng(1);
  Matrix<double> patches(3, 6);
  for (Eigen::Index i = 0; i < patches.size(); ++i) patches.data()[i] = rng.normal();
  EXPECT_EQ(emb.forward(patches), patches);
}

TEST(Embed, FullResolutionShape) {
  PatchEmbedding<float> emb(768, 768, 480);
  Rng rng(2);
  emb.init(rng);
  const Matrix<float> tokens = emb.forward(Matrix<float>::Ones(480, 768));
  EXPECT_EQ(tokens.rows(), 480);
  EXPECT_EQ(tokens.cols(), 768);
}

TEST(Grid, SingleToken) {
  Matrix<float> t(1, 5);
  t << 1, 2, 3, 4, 5;
  const auto g = to_grid(t, 1, 1);
  EXPECT_EQ(g.channels, 5);
  EXPECT_EQ(g.height, 1);
  EXPECT_EQ(g.width, 1);
  EXPECT_EQ(g.at(3, 0, 0), 4.0f);
}

TEST(Grid, RoundTripAndLayout) {
  Rng rng(3);
  Matrix<float> t(12, 4);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<float>(rng.normal());
  const auto g = to_grid(t, 3, 4);
  EXPECT_EQ(g.at(2, 1, 3), t(1 * 4 + 3, 2));
  EXPECT_EQ(flatten_grid(g), t);
}

TEST(Grid, FullResolutionShape) {
  const Matrix<float> zeros = Matrix<float>::Zero(480, 768);
  const auto g = to_grid(zeros, 12, 40);
  EXPECT_EQ(g.channels, 768);
  EXPECT_EQ(g.height, 12);
  EXPECT_EQ(g.width, 40);
}

TEST(Grid, RejectsShuffledSequence) {
  TokenSequence<float> seq;
  seq.tokens = Matrix<float>::Zero(4, 2);
  seq.rows = 2;
  seq.cols = 2;
  seq.patch_size = 1;
  seq.permutation = std::vector<int>{1, 0, 2, 3};
  EXPECT_THROW((void)to_grid(seq), ShapeError);
}

}  // namespace
}  // namespace maskdepth
