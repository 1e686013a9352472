#pragma once

#include <span>
#include <vector>

#include "maskdepth/common.hpp"
#include "maskdepth/data.hpp"
#include "maskdepth/model.hpp"

namespace maskdepth {

struct DepthMetrics {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;
  double log10 = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
};

/// Pixels count where valid and gt > 0; both maps are then clamped to
/// [cap_min, cap] meters.
struct EvalProtocol {
  double cap = 80.0;
  double cap_min = 1e-3;

  void validate() const;
};

/// Throws DataError when no pixel qualifies.
DepthMetrics depth_metrics(const Matrix<float>& pred, const Matrix<float>& gt, const Mask& valid,
                           const EvalProtocol& protocol = {});
DepthMetrics depth_metrics(const Matrix<double>& pred, const Matrix<double>& gt, const Mask& valid,
                           const EvalProtocol& protocol = {});

/// Plain per-pixel loop; the reference the vectorized version is checked against.
DepthMetrics depth_metrics_reference(const Matrix<double>& pred, const Matrix<double>& gt, const Mask& valid,
                                     const EvalProtocol& protocol = {});

/// Arithmetic mean of each field. Throws DataError when empty.
DepthMetrics mean_metrics(std::span<const DepthMetrics> per_image);

/// Unmasked forward on every labeled sample, metrics per image, then averaged.
/// Unlabeled samples are skipped; throws DataError if none are labeled.
DepthMetrics evaluate(const Model<float>& model, std::span<const Sample> samples, const EvalProtocol& protocol = {});

}  // namespace maskdepth
