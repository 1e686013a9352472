#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "maskdepth/encoder.hpp"
#include "maskdepth/masking.hpp"

namespace maskdepth {
namespace {

template <class T>
Matrix<T> randn(int rows, int cols, Rng& rng) {
  Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.normal());
  return m;
}

template <class T>
TokenSequence<T> spatial_sequence(int rows, int cols, int d, Rng& rng) {
  TokenSequence<T> seq;
  seq.tokens = randn<T>(rows * cols, d, rng);
  seq.rows = rows;
  seq.cols = cols;
  seq.patch_size = 1;
  return seq;
}

EncoderConfig small_config(int d, int depth, int heads) {
  EncoderConfig cfg;
  cfg.d_model = d;
  cfg.depth = depth;
  cfg.heads = heads;
  cfg.skip_blocks.clear();
  for (int b = 0; b < depth; ++b) cfg.skip_blocks.push_back(b);
  return cfg;
}

TEST(MaskedAttention, AllTrueMaskMatchesUnmasked) {
  Rng rng(1);
  const auto q = randn<float>(10, 8, rng);
  const auto k = randn<float>(10, 8, rng);
  const auto v = randn<float>(10, 8, rng);
  const AttentionMask all(10, true);
  const AttentionOptions opts;
  const Matrix<float> a = masked_attention(q, k, v, 2, &all, opts);
  const Matrix<float> b = masked_attention(q, k, v, 2, nullptr, opts);
  EXPECT_EQ((a - b).cwiseAbs().maxCoeff(), 0.0f);
}

TEST(MaskedAttention, SingletonRowCopiesValue) {
  Rng rng(2);
  const auto q = randn<double>(3, 4, rng);
  const auto k = randn<double>(3, 4, rng);
  const auto v = randn<double>(3, 4, rng);
  const AttentionMask mask = build_attention_mask(make_partition({0, 1, 2}, {2}));
  const Matrix<double> out = masked_attention(q, k, v, 1, &mask, AttentionOptions{});
  EXPECT_EQ(out.row(2), v.row(2));
}

TEST(MaskedAttention, HandSoftmaxWithTwoPlusOneBlocks) {
  Matrix<double> q(3, 1), k(3, 1), v(3, 1);
  q << 0.5, -1.0, 2.0;
  k << 1.0, 2.0, -0.5;
  v << 3.0, -1.0, 7.0;
  const AttentionMask mask = build_attention_mask(make_partition({0, 1, 2}, {2}));
  const Matrix<double> out = masked_attention(q, k, v, 1, &mask, AttentionOptions{});
  const auto pair = [&](int i) {
    const double a = std::exp(q(i, 0) * k(0, 0));
    const double b = std::exp(q(i, 0) * k(1, 0));
    return (a * v(0, 0) + b * v(1, 0)) / (a + b);
  };
  EXPECT_NEAR(out(0, 0), pair(0), 1e-14);
  EXPECT_NEAR(out(1, 0), pair(1), 1e-14);
  EXPECT_NEAR(out(2, 0), 7.0, 1e-14);
}

TEST(MaskedAttention, LegacyFillLeaksAcrossBlocks) {
  Rng rng(3);
  const auto q = randn<double>(6, 4, rng);
  const auto k = randn<double>(6, 4, rng);
  const auto v = randn<double>(6, 4, rng);
  const AttentionMask mask = build_attention_mask(make_partition({0, 1, 2, 3, 4, 5}, {3}));
  AttentionOptions legacy;
  legacy.fill = MaskFill::legacy;
  const Matrix<double> exact = masked_attention(q, k, v, 1, &mask, AttentionOptions{});
  const Matrix<double> leaky = masked_attention(q, k, v, 1, &mask, legacy);
  EXPECT_GT((exact - leaky).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Encoder, ZeroDepthIsIdentity) {
  Encoder<float> enc(small_config(8, 0, 2));
  Rng rng(4);
  enc.init(rng);
  const auto seq = spatial_sequence<float>(2, 3, 8, rng);
  EXPECT_EQ(encode(enc, seq, nullptr).final, seq.tokens);
}

TEST(Encoder, ZeroOutputProjectionsAreResidualIdentity) {
  Encoder<double> enc(small_config(8, 2, 2));
  Rng rng(5);
  enc.init(rng);
  for (auto& block : enc.blocks) {
    block.proj.weight.value.setZero();
    block.proj.bias.value.setZero();
    block.fc2.weight.value.setZero();
    block.fc2.bias.value.setZero();
  }
  const auto seq = spatial_sequence<double>(2, 4, 8, rng);
  EXPECT_EQ(encode(enc, seq, nullptr).final, seq.tokens);
}

TEST(Encoder, SingleSubsetMaskMatchesUnmasked) {
  Encoder<float> enc(small_config(32, 2, 2));
  Rng rng(6);
  enc.init(rng);
  const auto seq = spatial_sequence<float>(4, 4, 32, rng);
  const AttentionMask all(16, true);
  const auto a = encode(enc, seq, &all);
  const auto b = encode(enc, seq, nullptr);
  EXPECT_LE((a.final - b.final).cwiseAbs().maxCoeff(), 1e-6f);
}

TEST(Oracle, SingleSubsetEqualsPlainEncode) {
  Encoder<double> enc(small_config(16, 2, 2));
  Rng rng(7);
  enc.init(rng);
  const auto seq = spatial_sequence<double>(3, 4, 16, rng);
  const Partition part = sample_partition(12, 1, rng);
  const auto oracle = encode_subsets_oracle(enc, seq, part);
  const auto plain = encode(enc, seq, nullptr);
  EXPECT_LE((oracle.final - plain.final).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Oracle, MaskedJointEncodingMatchesIndependentSubsets) {
  Encoder<float> enc(small_config(32, 2, 4));
  Rng rng(8);
  enc.init(rng);
  const auto seq = spatial_sequence<float>(4, 4, 32, rng);
  for (int trial = 0; trial < 10; ++trial) {
    const Partition part = sample_partition(16, 4, rng);
    const auto joint = encode_masked(enc, seq, part);
    const auto oracle = encode_subsets_oracle(enc, seq, part);
    ASSERT_LE((joint.final - oracle.final).cwiseAbs().maxCoeff(), 1e-5f);
    for (std::size_t s = 0; s < joint.skips.size(); ++s) {
      ASSERT_LE((joint.skips[s] - oracle.skips[s]).cwiseAbs().maxCoeff(), 1e-5f);
    }
  }
}

TEST(Oracle, EmptySubsetIsDropped) {
  Encoder<double> enc(small_config(16, 2, 2));
  Rng rng(9);
  enc.init(rng);
  const auto seq = spatial_sequence<double>(2, 4, 16, rng);
  std::vector<int> perm(8);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(std::span<int>(perm));
  const auto with_empty = encode_subsets_oracle(enc, seq, make_partition(perm, {3, 3, 5}));
  const auto without = encode_subsets_oracle(enc, seq, make_partition(perm, {3, 5}));
  EXPECT_EQ(with_empty.final, without.final);
}

TEST(Oracle, SubsetOutputsIgnoreOtherSubsets) {
  // Perturbing tokens of one subset must leave every other subset's outputs unchanged.
  Encoder<double> enc(small_config(16, 3, 2));
  Rng rng(10);
  enc.init(rng);
  auto seq = spatial_sequence<double>(4, 4, 16, rng);
  const Partition part = sample_partition(16, 3, rng);
  const auto before = encode_masked(enc, seq, part);
  int target = 0;
  while (part.subset_size(target) == 0) ++target;
  for (int idx : part.subsets[target]) seq.tokens.row(idx).array() += 1.0;
  const auto after = encode_masked(enc, seq, part);
  const auto owner = part.subset_of_position();
  for (int p = 0; p < 16; ++p) {
    const int spatial = part.perm[p];
    if (owner[p] == target) continue;
    EXPECT_LE((before.final.row(spatial) - after.final.row(spatial)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

}  // namespace
}  // namespace maskdepth
