#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

namespace maskdepth::cli {

struct DemoOptions {
  std::filesystem::path image;
  int k = 64;
  std::uint64_t seed = 0;
  std::filesystem::path out;
  std::optional<std::filesystem::path> ckpt;
  bool naive = false;
  int scale = 4;
  double diff_full_scale = 10.0;  // meters mapped to full intensity
};

struct DemoSummary {
  int panels = 0;
  int panel_width = 0;
  int non_empty_subsets = 0;
  double mean_weak_depth = 0.0;
  double mean_strong_depth = 0.0;
  double max_abs_diff = 0.0;
};

/// Panels left to right: input, partition colouring (dropped tokens black in
/// naive mode), weak depth, strong depth, |weak - strong|, and uncertainty
/// when a checkpoint is given.
DemoSummary run_mask_demo(const DemoOptions& options);

}  // namespace maskdepth::cli
