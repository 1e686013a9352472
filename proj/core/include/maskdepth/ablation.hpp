#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "maskdepth/data.hpp"
#include "maskdepth/metrics.hpp"
#include "maskdepth/trainer.hpp"

namespace maskdepth {

/// The synthetic desk benchmark: a labeled pool, an unlabeled pool and a
/// labeled evaluation set drawn from one scene distribution.
struct DeskBenchmark {
  SceneConfig scene;
  int n_labeled = 16;
  int n_unlabeled = 240;
  int n_eval = 64;
  double label_density = 1.0;
  std::uint64_t data_seed = 2024;
};

struct DeskData {
  std::vector<Sample> train;  // labeled first, then unlabeled
  std::vector<Sample> eval;
};

DeskData make_desk_data(const DeskBenchmark& bench);

enum class AblationAxis { loss, k, head };

struct AblationVariant {
  std::string name;
  double lambda_dc = 0.0;
  double lambda_uc = 0.0;
  double lambda_fc = 0.0;
  int strong_K = 1;
  PredictorKind head = PredictorKind::mlp;
  bool labeled_only = false;

  [[nodiscard]] TrainConfig apply(TrainConfig base) const;
};

/// loss: baseline, D, D+U, D+U+F. k: strong_K sweep at full loss.
/// head: predictor head on / off at full loss.
std::vector<AblationVariant> ablation_variants(AblationAxis axis, int strong_K, const std::vector<int>& k_values);

struct AblationRun {
  std::string variant;
  std::uint64_t seed = 0;
  DepthMetrics metrics;
  double seconds = 0.0;
};

/// Trains one variant on the desk data and evaluates it on the eval split.
AblationRun run_variant(const AblationVariant& variant, const TrainConfig& base, std::uint64_t seed,
                        const DeskData& data, const std::filesystem::path& out_dir);

/// Median of abs_rel over runs of the given variant.
double median_abs_rel(const std::vector<AblationRun>& runs, const std::string& variant);

}  // namespace maskdepth
