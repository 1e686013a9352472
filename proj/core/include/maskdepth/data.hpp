#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "maskdepth/common.hpp"
#include "maskdepth/losses.hpp"
#include "maskdepth/png_io.hpp"
#include "maskdepth/rng.hpp"

namespace maskdepth {

/// Procedural scene parameters. Depths are meters.
struct SceneConfig {
  int height = 32;
  int width = 64;
  double d_min = 2.0;
  double d_max = 80.0;
  int min_objects = 1;
  int max_objects = 5;
  // Ground plane: depth interpolates linearly from `far` at the top row to
  // `near` at the bottom row.
  double plane_far_min = 40.0;
  double plane_far_max = 80.0;
  double plane_near_min = 2.0;
  double plane_near_max = 10.0;
  double texture_noise = 0.04;
  // Global brightness factor drawn per scene from [illumination_min, 1].
  double illumination_min = 0.75;
  // Mixed into the appearance stream only; geometry never depends on it.
  std::uint64_t texture_seed = 0;

  void validate() const;
};

struct Scene {
  ImageTensor image;
  Matrix<float> depth;
};

/// Rectangles and ellipses at sampled depths over a ground plane, z-buffered.
/// Colour hue is a monotone function of depth, modulated by illumination
/// and texture noise drawn from a separate appearance stream.
Scene generate_scene(const SceneConfig& cfg, Rng& rng);

/// Bernoulli(density) validity mask over a dense depth map.
SparseDepth<float> sparsify(const Matrix<float>& depth, double density, Rng& rng);

/// KITTI convention: value = round(depth * 256), 0 marks invalid.
Pixels16 encode_depth(const SparseDepth<float>& depth);
SparseDepth<float> decode_depth(const Pixels16& pixels);

struct DatasetEntry {
  std::string id;
  std::filesystem::path image;
  std::optional<std::filesystem::path> depth;
};

/// root/images/<id>.png plus optional root/depth/<id>.png.
struct DatasetIndex {
  std::filesystem::path root;
  std::vector<DatasetEntry> entries;

  [[nodiscard]] std::size_t labeled_count() const;
  [[nodiscard]] const DatasetEntry& find(const std::string& id) const;
};

struct Sample {
  std::string id;
  ImageTensor image;
  std::optional<SparseDepth<float>> depth;
};

/// Throws DataError when the directory or its images/ folder is missing.
DatasetIndex load_dataset(const std::filesystem::path& root);
Sample read_sample(const DatasetIndex& index, const std::string& id);
std::vector<Sample> read_all(const DatasetIndex& index);

/// Writes images/<id>.png and, when given, depth/<id>.png.
void write_sample(const std::filesystem::path& root, const std::string& id, const ImageTensor& image,
                  const SparseDepth<float>* depth);

/// Zero-padded sample id.
std::string sample_id(std::size_t index);

}  // namespace maskdepth
