#include "maskdepth/masking.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace maskdepth {

std::vector<int> Partition::subset_of_position() const {
  std::vector<int> ids(static_cast<std::size_t>(n));
  for (int s = 0; s < k; ++s) {
    for (int p = split_points[s]; p < split_points[s + 1]; ++p) ids[p] = s;
  }
  return ids;
}

int Partition::non_empty_subsets() const {
  int count = 0;
  for (int s = 0; s < k; ++s) count += subset_size(s) > 0 ? 1 : 0;
  return count;
}

Partition make_partition(std::vector<int> perm, std::vector<int> cut_points) {
  const int n = static_cast<int>(perm.size());
  if (n < 1) throw ConfigError("partition needs at least one token");
  std::vector<int> inv(perm.size(), -1);
  for (int p = 0; p < n; ++p) {
    const int idx = perm[p];
    if (idx < 0 || idx >= n || inv[idx] != -1) throw ConfigError("partition: not a permutation");
    inv[idx] = p;
  }
  for (int cut : cut_points) {
    if (cut < 0 || cut > n) throw ConfigError("partition: split point " + std::to_string(cut) + " out of range");
  }
  std::sort(cut_points.begin(), cut_points.end());

  Partition part;
  part.n = n;
  part.k = static_cast<int>(cut_points.size()) + 1;
  part.split_points.reserve(cut_points.size() + 2);
  part.split_points.push_back(0);
  part.split_points.insert(part.split_points.end(), cut_points.begin(), cut_points.end());
  part.split_points.push_back(n);
  part.subsets.resize(static_cast<std::size_t>(part.k));
  for (int s = 0; s < part.k; ++s) {
    part.subsets[s].assign(perm.begin() + part.split_points[s], perm.begin() + part.split_points[s + 1]);
  }
  part.perm = std::move(perm);
  part.inv_perm = std::move(inv);
  return part;
}

Partition sample_partition(int n, int k, Rng& rng) {
  if (k < 1) throw ConfigError("partition: K must be >= 1, got " + std::to_string(k));
  if (n < 1) throw ConfigError("partition: N must be >= 1, got " + std::to_string(n));
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(std::span<int>(perm));
  std::vector<int> cuts(static_cast<std::size_t>(k - 1));
  for (int& cut : cuts) cut = n > 1 ? static_cast<int>(rng.uniform_int(1, n - 1)) : n;
  return make_partition(std::move(perm), std::move(cuts));
}

std::size_t AttentionMask::count_allowed() const {
  return static_cast<std::size_t>(std::count(allow_.begin(), allow_.end(), std::uint8_t{1}));
}

AttentionMask build_attention_mask(const Partition& part) {
  AttentionMask mask(part.n, false);
  for (int s = 0; s < part.k; ++s) {
    for (int i = part.split_points[s]; i < part.split_points[s + 1]; ++i) {
      for (int j = part.split_points[s]; j < part.split_points[s + 1]; ++j) mask.set(i, j, true);
    }
  }
  return mask;
}

template <class T>
Matrix<T> shuffle_tokens(const Matrix<T>& spatial, const Partition& part) {
  if (spatial.rows() != part.n) {
    throw ShapeError("shuffle: " + std::to_string(spatial.rows()) + " tokens for partition of " +
                     std::to_string(part.n));
  }
  Matrix<T> out(spatial.rows(), spatial.cols());
  for (int p = 0; p < part.n; ++p) out.row(p) = spatial.row(part.perm[p]);
  return out;
}

template <class T>
Matrix<T> reassemble(const Matrix<T>& shuffled, const Partition& part) {
  if (shuffled.rows() != part.n) {
    throw ShapeError("reassemble: " + std::to_string(shuffled.rows()) + " tokens for partition of " +
                     std::to_string(part.n));
  }
  Matrix<T> out(shuffled.rows(), shuffled.cols());
  for (int i = 0; i < part.n; ++i) out.row(i) = shuffled.row(part.inv_perm[i]);
  return out;
}

template Matrix<float> shuffle_tokens<float>(const Matrix<float>&, const Partition&);
template Matrix<double> shuffle_tokens<double>(const Matrix<double>&, const Partition&);
template Matrix<float> reassemble<float>(const Matrix<float>&, const Partition&);
template Matrix<double> reassemble<double>(const Matrix<double>&, const Partition&);

}  // namespace maskdepth
