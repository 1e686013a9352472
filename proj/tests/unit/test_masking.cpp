#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "maskdepth/masking.hpp"

namespace maskdepth {
namespace {

std::vector<int> identity(int n) {
  std::vector<int> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  return p;
}

std::vector<int> sizes(const Partition& part) {
  std::vector<int> out;
  for (int s = 0; s < part.k; ++s) out.push_back(part.subset_size(s));
  return out;
}

TEST(Partition, SingleSubsetCoversAll) {
  Rng rng(1);
  const Partition part = sample_partition(6, 1, rng);
  ASSERT_EQ(part.k, 1);
  auto all = part.subsets[0];
  std::sort(all.begin(), all.end());
  EXPECT_EQ(all, identity(6));
  EXPECT_TRUE(build_attention_mask(part).all_allowed());
}

TEST(Partition, EvenSplits) {
  const Partition part = make_partition(identity(6), {4, 2});
  EXPECT_EQ(sizes(part), (std::vector<int>{2, 2, 2}));
}

TEST(Partition, DuplicateSplitLeavesEmptySubset) {
  const Partition part = make_partition(identity(4), {2, 2});
  EXPECT_EQ(sizes(part), (std::vector<int>{2, 0, 2}));
  EXPECT_EQ(part.non_empty_subsets(), 2);
}

TEST(Partition, SampledSplitsFollowDrawnCuts) {
  // Find a stream whose cuts come out as {2, 4} and check the subset sizes.
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    Rng rng(seed);
    const Partition part = sample_partition(6, 3, rng);
    if (part.split_points == std::vector<int>{0, 2, 4, 6}) {
      EXPECT_EQ(sizes(part), (std::vector<int>{2, 2, 2}));
      return;
    }
  }
  FAIL() << "no seed produced cuts {2, 4}";
}

TEST(Partition, SingleTokenSequence) {
  Rng rng(2);
  const Partition part = sample_partition(1, 4, rng);
  EXPECT_EQ(part.non_empty_subsets(), 1);
  EXPECT_EQ(part.split_points.back(), 1);
}

TEST(Partition, RejectsBadInput) {
  Rng rng(3);
  EXPECT_THROW((void)sample_partition(4, 0, rng), ConfigError);
  EXPECT_THROW((void)make_partition({0, 0, 1}, {}), ConfigError);
  EXPECT_THROW((void)make_partition(identity(3), {5}), ConfigError);
}

TEST(AttentionMask, BlockDiagonal) {
  const Partition part = make_partition(identity(4), {2});
  const AttentionMask mask = build_attention_mask(part);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_EQ(mask.allowed(i, j), (i < 2) == (j < 2)) << i << "," << j;
}

TEST(AttentionMask, EmptySubsetChangesNothing) {
  Rng rng(4);
  std::vector<int> perm = identity(8);
  rng.shuffle(std::span<int>(perm));
  EXPECT_EQ(build_attention_mask(make_partition(perm, {3, 3, 6})), build_attention_mask(make_partition(perm, {3, 6})));
}

TEST(Reassemble, IdentityPermutation) {
  Matrix<float> t(4, 2);
  t << 1, 2, 3, 4, 5, 6, 7, 8;
  const Partition part = make_partition(identity(4), {2});
  EXPECT_EQ(shuffle_tokens(t, part), t);
  EXPECT_EQ(reassemble(t, part), t);
}

TEST(Reassemble, ReversalPermutation) {
  Matrix<float> t(4, 1);
  t << 1, 2, 3, 4;
  const Partition part = make_partition({3, 2, 1, 0}, {});
  Matrix<float> reversed(4, 1);
  reversed << 4, 3, 2, 1;
  EXPECT_EQ(reassemble(t, part), reversed);
}

class PartitionProperty : public ::testing::TestWithParam<std::pair<int, int>> {};

TEST_P(PartitionProperty, CoverRoundTripAndMaskConsistency) {
  const auto [n, k] = GetParam();
  Rng rng(static_cast<std::uint64_t>(n * 1000 + k));
  for (int trial = 0; trial < 40; ++trial) {
    const Partition part = sample_partition(n, k, rng);
    std::vector<int> all;
    for (const auto& s : part.subsets) all.insert(all.end(), s.begin(), s.end());
    std::sort(all.begin(), all.end());
    ASSERT_EQ(all, identity(n));

    Matrix<double> t(n, 3);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.normal();
    ASSERT_EQ(reassemble(shuffle_tokens(t, part), part), t);

    const AttentionMask mask = build_attention_mask(part);
    const auto owner = part.subset_of_position();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) ASSERT_EQ(mask.allowed(i, j), owner[i] == owner[j]);
    std::size_t expected = 0;
    for (int s = 0; s < part.k; ++s) expected += static_cast<std::size_t>(part.subset_size(s)) * part.subset_size(s);
    ASSERT_EQ(mask.count_allowed(), expected);
  }
}

INSTANTIATE_TEST_SUITE_P(Shapes, PartitionProperty,
                         ::testing::Values(std::pair{1, 1}, std::pair{2, 8}, std::pair{16, 4}, std::pair{64, 64},
                                           std::pair{128, 64}, std::pair{37, 200}));

}  // namespace
}  // namespace maskdepth
