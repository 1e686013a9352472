#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "maskdepth/data.hpp"
#include "maskdepth/png_io.hpp"

namespace maskdepth {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::path(::testing::TempDir()) / ("maskdepth_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TEST(GenerateScene, FlatPlaneWithoutObjects) {
  SceneConfig cfg;
  cfg.min_objects = cfg.max_objects = 0;
  cfg.plane_far_min = cfg.plane_far_max = 10.0;
  cfg.plane_near_min = cfg.plane_near_max = 10.0;
  Rng rng(1);
  const Scene s = generate_scene(cfg, rng);
  EXPECT_TRUE(s.depth.isApproxToConstant(10.0f, 0));
}

TEST(GenerateScene, DeterministicPerSeed) {
  Rng a(7), b(7), c(8);
  const Scene sa = generate_scene(SceneConfig{}, a);
  const Scene sb = generate_scene(SceneConfig{}, b);
  const Scene sc = generate_scene(SceneConfig{}, c);
  EXPECT_EQ(sa.depth, sb.depth);
  EXPECT_EQ(sa.image.data, sb.image.data);
  EXPECT_NE(sa.depth, sc.depth);
}

TEST(GenerateScene, RangesAndShapes) {
  SceneConfig cfg;
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const Scene s = generate_scene(cfg, rng);
    ASSERT_EQ(s.depth.rows(), 32);
    ASSERT_EQ(s.depth.cols(), 64);
    ASSERT_EQ(s.image.channels, 3);
    EXPECT_GE(s.depth.minCoeff(), cfg.d_min);
    EXPECT_LE(s.depth.maxCoeff(), cfg.d_max);
    EXPECT_GE(s.image.data.minCoeff(), 0.0f);
    EXPECT_LE(s.image.data.maxCoeff(), 1.0f);
  }
}

TEST(GenerateScene, TextureSeedOnlyChangesAppearance) {
  SceneConfig a;
  SceneConfig b = a;
  b.texture_seed = 99;
  Rng ra(4), rb(4);
  const Scene sa = generate_scene(a, ra);
  const Scene sb = generate_scene(b, rb);
  EXPECT_EQ(sa.depth, sb.depth);
  EXPECT_NE(sa.image.data, sb.image.data);
}

TEST(Sparsify, FullDensityKeepsEverything) {
  Rng rng(1);
  const Matrix<float> d = Matrix<float>::Constant(32, 64, 5.0f);
  EXPECT_EQ(sparsify(d, 1.0, rng).valid_count(), 32 * 64);
}

TEST(Sparsify, CountWithinBinomialBound) {
  const Matrix<float> d = Matrix<float>::Constant(32, 64, 5.0f);
  const double n = 32 * 64, p = 0.05;
  const double mean = n * p;  // 102.4
  const double sd = std::sqrt(n * p * (1 - p));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const double count = static_cast<double>(sparsify(d, p, rng).valid_count());
    EXPECT_LE(std::abs(count - mean), 4 * sd) << "seed " << seed;
  }
}

TEST(Sparsify, SameSeedSameMask) {
  const Matrix<float> d = Matrix<float>::Constant(8, 8, 5.0f);
  Rng a(3), b(3);
  EXPECT_TRUE((sparsify(d, 0.3, a).valid == sparsify(d, 0.3, b).valid).all());
}

TEST(Sparsify, RejectsBadDensity) {
  Rng rng(1);
  const Matrix<float> d = Matrix<float>::Constant(2, 2, 1.0f);
  EXPECT_ANY_THROW((void)sparsify(d, 0.0, rng));
  EXPECT_ANY_THROW((void)sparsify(d, 1.5, rng));
}

TEST(DepthEncoding, KittiConvention) {
  Pixels16 px(1, 3);
  px << 20480, 0, 1;
  const SparseDepth<float> d = decode_depth(px);
  EXPECT_EQ(d.values(0, 0), 80.0f);
  EXPECT_TRUE(d.valid(0, 0));
  EXPECT_FALSE(d.valid(0, 1));
  EXPECT_EQ(d.values(0, 2), 1.0f / 256.0f);
}

TEST(DepthEncoding, RoundTripQuantization) {
  Rng rng(2);
  SparseDepth<float> d;
  d.values = Matrix<float>(4, 16);
  d.valid = Mask(4, 16);
  for (Eigen::Index i = 0; i < d.values.size(); ++i) {
    d.values.data()[i] = static_cast<float>(rng.uniform(0.01, 250.0));
    d.valid.data()[i] = rng.bernoulli(0.7);
  }
  const SparseDepth<float> back = decode_depth(encode_depth(d));
  EXPECT_TRUE((back.valid == d.valid).all());
  for (Eigen::Index i = 0; i < d.values.size(); ++i) {
    if (!d.valid.data()[i]) continue;
    const double expected = std::round(static_cast<double>(d.values.data()[i]) * 256.0) / 256.0;
    ASSERT_EQ(static_cast<double>(back.values.data()[i]), expected);
    ASSERT_LE(std::abs(back.values.data()[i] - d.values.data()[i]), 0.5f / 256.0f + 1e-6f);
  }
}

TEST(Dataset, IndexCountsLabeledSamples) {
  const fs::path root = scratch_dir("index");
  Rng rng(3);
  for (int i = 0; i < 3; ++i) {
    const Scene s = generate_scene(SceneConfig{}, rng);
    const SparseDepth<float> d = sparsify(s.depth, 1.0, rng);
    write_sample(root, sample_id(i), s.image, i == 1 ? &d : nullptr);
  }
  const DatasetIndex index = load_dataset(root);
  ASSERT_EQ(index.entries.size(), 3u);
  EXPECT_EQ(index.labeled_count(), 1u);
  EXPECT_EQ(index.entries[0].id, "000000");
  EXPECT_TRUE(index.entries[1].depth.has_value());
}

TEST(Dataset, WriteReadRoundTrip) {
  const fs::path root = scratch_dir("roundtrip");
  Rng rng(4);
  const Scene s = generate_scene(SceneConfig{}, rng);
  const SparseDepth<float> d = sparsify(s.depth, 0.5, rng);
  write_sample(root, "a", s.image, &d);
  const Sample back = read_sample(load_dataset(root), "a");
  ASSERT_TRUE(back.depth.has_value());
  EXPECT_TRUE((back.depth->valid == d.valid).all());
  for (Eigen::Index i = 0; i < d.values.size(); ++i) {
    if (!d.valid.data()[i]) continue;
    ASSERT_EQ(back.depth->values.data()[i], static_cast<float>(std::round(d.values.data()[i] * 256.0) / 256.0));
  }
  // 8-bit image quantization
  EXPECT_LE((back.image.data - s.image.data).cwiseAbs().maxCoeff(), 0.5f / 255.0f + 1e-6f);
}

TEST(Dataset, MissingDirectoryAndSizeMismatch) {
  EXPECT_THROW((void)load_dataset(scratch_dir("missing") / "nope"), DataError);
  const fs::path root = scratch_dir("mismatch");
  Rng rng(5);
  const Scene s = generate_scene(SceneConfig{}, rng);
  write_sample(root, "a", s.image, nullptr);
  fs::create_directories(root / "depth");
  write_png_gray16(root / "depth" / "a.png", Pixels16::Constant(4, 4, 256));
  EXPECT_THROW((void)read_sample(load_dataset(root), "a"), DataError);
}

TEST(Dataset, SampleIdsSortNumerically) {
  EXPECT_EQ(sample_id(7), "000007");
  EXPECT_LT(sample_id(9), sample_id(10));
}

}  // namespace
}  // namespace maskdepth
