#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "maskdepth/checkpoint.hpp"
#include "maskdepth/data.hpp"
#include "maskdepth/losses.hpp"
#include "maskdepth/metrics.hpp"
#include "maskdepth/model.hpp"
#include "maskdepth/optim.hpp"

namespace maskdepth {

enum class PredictorKind { mlp, none };

/// Flat training configuration. JSON keys match the field names.
struct TrainConfig {
  int batch_size = 8;
  double labeled_fraction_per_batch = 0.125;
  double lr_encoder = 1e-5;
  double lr_decoder = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int steps = 1000;
  std::uint64_t seed = 0;

  double lambda_dc = 1.0;
  double lambda_uc = 1.0;
  double lambda_fc = 1.0;
  int weak_K = 1;
  int strong_K = 64;
  ConsistencyWeighting consistency_weighting = ConsistencyWeighting::confidence;
  PredictorKind predictor_head = PredictorKind::mlp;

  bool flip = true;
  double jitter = 0.1;

  int image_height = 32;
  int image_width = 64;
  int patch_size = 4;
  int d_model = 64;
  int depth = 4;
  int heads = 4;
  double mlp_ratio = 4.0;
  std::vector<int> skip_blocks = {0, 1, 2, 3};
  MaskFill mask_fill = MaskFill::exact;
  AttentionScale attn_scale = AttentionScale::standard;
  std::vector<int> level_widths = {8, 16, 32, 64};
  int fusion_width = 32;
  int head_width = 16;
  double d_min = 1e-3;
  double d_max = 80.0;
  DepthOutput depth_output = DepthOutput::linear_depth;

  int log_every = 1;
  int eval_every = 0;
  double eval_cap = 80.0;
  int checkpoint_every = 0;

  void validate() const;
  [[nodiscard]] ModelConfig model_config() const;
  [[nodiscard]] LossWeights loss_weights() const;
  [[nodiscard]] AdamConfig adam_config() const;
  /// Labeled samples per batch; the whole batch when no unlabeled data exists.
  [[nodiscard]] int labeled_per_batch(bool have_unlabeled) const;
};

std::string to_json(const TrainConfig& cfg);
/// Keys absent from `json` keep the values already in `base`. Unknown keys
/// and wrong types throw ConfigError.
TrainConfig config_from_json(const std::string& json, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});

struct BatchItem {
  const Sample* sample = nullptr;
  bool is_labeled() const { return sample->depth.has_value(); }
};

struct Batch {
  std::vector<BatchItem> items;
  [[nodiscard]] int labeled_count() const;
};

/// Deterministic in (cfg.seed, step). Each pool is read as an endless stream
/// of epoch-wise shuffles, so samples repeat only across epochs. Labeled
/// items come first. Throws DataError for an empty labeled pool.
Batch compose_batch(std::span<const Sample* const> labeled, std::span<const Sample* const> unlabeled,
                    const TrainConfig& cfg, std::uint64_t step);

struct AugmentedPair {
  ImageTensor weak;
  ImageTensor strong;
  bool flipped = false;
};

/// One flip decision shared by both views; brightness, contrast and
/// saturation jitter drawn independently per view.
AugmentedPair augment_pair(const ImageTensor& image, Rng& rng, const TrainConfig& cfg);

ImageTensor flip_horizontal(const ImageTensor& image);
SparseDepth<float> flip_horizontal(const SparseDepth<float>& depth);

/// Batch-mean loss terms. l_gt / l_uc average over labeled items, l_dc /
/// l_fc over the whole batch.
struct StepRecord {
  std::uint64_t step = 0;
  LossBreakdown losses;
  bool has_labels = false;
  double lr_enc = 0.0;
  double lr_dec = 0.0;
};

/// Weak forward without gradient, strong forward under a fresh partition per
/// sample, one Adam update. Throws NumericError if any term is non-finite;
/// parameters are left untouched in that case.
StepRecord train_step(Model<float>& model, Adam& adam, const Batch& batch, const TrainConfig& cfg,
                      std::uint64_t step);

std::string to_json_line(const StepRecord& record);
std::string to_json_line(std::uint64_t step, const DepthMetrics& metrics);

struct FitOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
  /// Extra sink for log lines (besides out_dir/log.jsonl).
  std::ostream* echo = nullptr;
};

struct FitResult {
  std::uint64_t steps_done = 0;
  std::optional<StepRecord> last;
  std::optional<DepthMetrics> final_metrics;
  std::filesystem::path checkpoint;
};

/// Writes out_dir/log.jsonl and out_dir/checkpoint.bin. With steps=0 only
/// the initial checkpoint is written. A resumed run appends to the log and
/// continues the step counter and optimizer state.
FitResult fit(const TrainConfig& cfg, std::span<const Sample> train, std::span<const Sample> eval,
              const FitOptions& options);

/// Rebuilds the model described by a checkpoint's config echo.
Model<float> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace maskdepth
