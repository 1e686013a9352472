#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "demo.hpp"

namespace maskdepth::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kNumeric = 2, kData = 3 };

/// Thrown for invalid invocations that the parser cannot catch itself.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GenDataOptions {
  std::filesystem::path out;
  int n_labeled = 16;
  int n_unlabeled = 240;
  std::uint64_t seed = 0;
  bool force = false;
  int height = 32;
  int width = 64;
  double d_min = 2.0;
  double d_max = 80.0;
  int min_objects = 1;
  int max_objects = 5;
  double texture_noise = 0.04;
  std::uint64_t texture_seed = 0;
  double density = 1.0;
};

struct TrainOverrides {
  std::optional<int> steps;
  std::optional<std::uint64_t> seed;
  std::optional<int> batch_size;
  std::optional<double> lambda_dc;
  std::optional<double> lambda_uc;
  std::optional<double> lambda_fc;
  std::optional<int> strong_K;
  std::optional<double> lr_encoder;
  std::optional<double> lr_decoder;
  std::optional<int> eval_every;
};

struct TrainOptions {
  std::optional<std::filesystem::path> config;
  std::filesystem::path data;
  std::filesystem::path out;
  std::optional<std::filesystem::path> resume;
  std::optional<std::filesystem::path> eval_data;
  TrainOverrides overrides;
  bool verbose = false;
};

struct EvalOptions {
  std::filesystem::path ckpt;
  std::filesystem::path data;
  double cap = 80.0;
  std::optional<std::filesystem::path> manifest;
};

struct VerifyOptions {
  std::string suite = "all";
  std::optional<std::filesystem::path> manifest;
};

struct AblateOptions {
  std::string axis = "loss";
  std::filesystem::path out;
  std::optional<std::filesystem::path> config;
  TrainOverrides overrides;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::vector<int> k_values = {4, 16, 64, 128};
  int n_labeled = 16;
  int n_unlabeled = 240;
  int n_eval = 64;
  double density = 1.0;
  std::uint64_t data_seed = 2024;
};

struct MaskDemoOptions {
  DemoOptions demo;
  std::optional<std::filesystem::path> manifest;
};

int cmd_gen_data(const GenDataOptions& options);
int cmd_train(const TrainOptions& options);
int cmd_eval(const EvalOptions& options);
int cmd_verify(const VerifyOptions& options);
int cmd_mask_demo(const MaskDemoOptions& options);
int cmd_ablate(const AblateOptions& options);

}  // namespace maskdepth::cli
