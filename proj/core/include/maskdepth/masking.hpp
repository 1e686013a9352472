#pragma once

#include <cstdint>
#include <vector>

#include "maskdepth/common.hpp"
#include "maskdepth/rng.hpp"

namespace maskdepth {

/// K disjoint token subsets produced by shuffling the N token indices and
/// cutting the shuffled order at K-1 sorted split points.
///
/// Shuffled position p holds spatial token perm[p]; subset k is the block of
/// shuffled positions [split_points[k], split_points[k+1]). Repeated split
/// points produce empty subsets.
struct Partition {
  int n = 0;
  int k = 0;
  std::vector<int> perm;
  std::vector<int> inv_perm;
  std::vector<int> split_points;          // size k+1, starts at 0, ends at n
  std::vector<std::vector<int>> subsets;  // spatial indices, in shuffled order

  [[nodiscard]] int subset_size(int subset) const { return split_points[subset + 1] - split_points[subset]; }
  /// Subset id of each shuffled position.
  [[nodiscard]] std::vector<int> subset_of_position() const;
  [[nodiscard]] int non_empty_subsets() const;
};

/// Builds a partition from an explicit permutation and K-1 split points
/// (unsorted, each in [0, n]).
Partition make_partition(std::vector<int> perm, std::vector<int> cut_points);

/// Uniform random permutation plus K-1 split points drawn uniformly from
/// {1..N-1} with replacement. For N == 1 every split point is N.
Partition sample_partition(int n, int k, Rng& rng);

/// allow(i, j) is true iff shuffled positions i and j share a subset.
class AttentionMask {
 public:
  AttentionMask() = default;
  explicit AttentionMask(int n, bool fill = true) : n_(n), allow_(static_cast<std::size_t>(n) * n, fill ? 1 : 0) {}

  [[nodiscard]] int size() const { return n_; }
  [[nodiscard]] bool allowed(int i, int j) const { return allow_[static_cast<std::size_t>(i) * n_ + j] != 0; }
  void set(int i, int j, bool value) { allow_[static_cast<std::size_t>(i) * n_ + j] = value ? 1 : 0; }
  [[nodiscard]] std::size_t count_allowed() const;
  [[nodiscard]] bool all_allowed() const { return count_allowed() == allow_.size(); }

  bool operator==(const AttentionMask&) const = default;

 private:
  int n_ = 0;
  std::vector<std::uint8_t> allow_;
};

AttentionMask build_attention_mask(const Partition& part);

/// out[p] = in[perm[p]] (spatial → shuffled order).
template <class T>
Matrix<T> shuffle_tokens(const Matrix<T>& spatial, const Partition& part);

/// out[i] = in[inv_perm[i]] (shuffled → spatial order).
template <class T>
Matrix<T> reassemble(const Matrix<T>& shuffled, const Partition& part);

}  // namespace maskdepth
