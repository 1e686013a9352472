#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "maskdepth/model.hpp"
#include "maskdepth/optim.hpp"

namespace maskdepth {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Matrix<float> value;
};

/// File layout (little-endian): "MSKDEPTH" magic, u32 version, config JSON,
/// u64 step, parameter blobs, then the Adam step count and both moment lists.
struct Checkpoint {
  std::string config_json;
  std::uint64_t step = 0;
  std::vector<NamedTensor> params;
  std::uint64_t adam_steps = 0;
  std::vector<Matrix<float>> adam_m;
  std::vector<Matrix<float>> adam_v;
};

Checkpoint make_checkpoint(const Model<float>& model, const Adam& adam, std::uint64_t step, std::string config_json);

/// Written to a temporary sibling then renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws DataError on a bad magic, version or truncated file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies parameters by name and shape; throws DataError on any mismatch.
void apply_checkpoint(const Checkpoint& ckpt, Model<float>& model);
void apply_checkpoint(const Checkpoint& ckpt, Model<float>& model, Adam& adam);

}  // namespace maskdepth
