#include "maskdepth/losses.hpp"

#include <cmath>
#include <string>

namespace maskdepth {

void LossWeights::validate() const {
  if (lambda_dc < 0.0 || lambda_uc < 0.0 || lambda_fc < 0.0) throw ConfigError("loss weights must be non-negative");
  if (weak_k < 1 || strong_k < 1) throw ConfigError("K must be >= 1");
}

namespace {

template <class T>
void check_pair(const Matrix<T>& a, const Matrix<T>& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_of(a) + " vs " + shape_of(b));
  }
}

template <class T>
void check_target(const Matrix<T>& pred, const SparseDepth<T>& gt, const char* what) {
  check_pair(pred, gt.values, what);
  if (gt.valid.rows() != pred.rows() || gt.valid.cols() != pred.cols()) {
    throw ShapeError(std::string(what) + ": validity mask shape mismatch");
  }
}

template <class T>
T sign(T v) {
  return T((v > T(0)) - (v < T(0)));
}

}  // namespace

template <class T>
LossResult<T> supervised_l1(const Matrix<T>& pred, const SparseDepth<T>& gt) {
  check_target(pred, gt, "supervised_l1");
  const auto count = gt.valid_count();
  if (count == 0) throw EmptySupervisionError("supervised_l1: no valid ground-truth pixels");
  const T inv = T(1) / T(count);
  const auto diff = (pred - gt.values).array();
  LossResult<T> out;
  out.value = gt.valid.select(diff.abs(), T(0)).sum() * inv;
  out.grad_pred = gt.valid.select(diff.unaryExpr([](T v) { return sign(v); }) * inv, T(0)).matrix();
  return out;
}

template <class T>
LossResult<T> uncertainty_nll(const Matrix<T>& pred, const Matrix<T>& log_u, const SparseDepth<T>& gt) {
  check_target(pred, gt, "uncertainty_nll");
  check_pair(pred, log_u, "uncertainty_nll");
  const auto count = gt.valid_count();
  if (count == 0) throw EmptySupervisionError("uncertainty_nll: no valid ground-truth pixels");
  const T inv = T(1) / T(count);
  const auto diff = (pred - gt.values).array();
  const auto residual = diff.abs();
  const auto confidence = (-log_u.array()).exp();
  LossResult<T> out;
  out.value = gt.valid.select(residual * confidence + log_u.array(), T(0)).sum() * inv;
  out.grad_pred = gt.valid.select(diff.unaryExpr([](T v) { return sign(v); }) * confidence * inv, T(0)).matrix();
  out.grad_log_u = gt.valid.select((T(1) - residual * confidence) * inv, T(0)).matrix();
  return out;
}

template <class T>
LossResult<T> depth_consistency(const DepthPrediction<T>& weak, const Matrix<T>& strong_depth,
                                ConsistencyWeighting weighting, bool stop_gradient) {
  check_pair(weak.depth, strong_depth, "depth_consistency");
  const bool has_uncertainty = weak.log_uncertainty.size() > 0;
  if (has_uncertainty) check_pair(weak.depth, weak.log_uncertainty, "depth_consistency");
  const T inv = T(1) / T(strong_depth.size());

  Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> weight;
  if (weighting == ConsistencyWeighting::none || !has_uncertainty) {
    weight.setOnes(strong_depth.rows(), strong_depth.cols());
  } else if (weighting == ConsistencyWeighting::confidence) {
    weight = (-weak.log_uncertainty.array()).exp().min(T(1)).max(T(0));
  } else {
    weight = weak.log_uncertainty.array().exp();
  }

  const auto diff = (strong_depth - weak.depth).array();
  const auto signs = diff.unaryExpr([](T v) { return sign(v); });
  LossResult<T> out;
  out.value = (weight * diff.abs()).sum() * inv;
  out.grad_pred = (weight * signs * inv).matrix();
  out.grad_target = Matrix<T>::Zero(strong_depth.rows(), strong_depth.cols());
  out.grad_target_log_u = Matrix<T>::Zero(strong_depth.rows(), strong_depth.cols());
  if (!stop_gradient) {
    out.grad_target = -out.grad_pred;
    if (has_uncertainty && weighting != ConsistencyWeighting::none) {
      const auto s = weak.log_uncertainty.array();
      if (weighting == ConsistencyWeighting::confidence) {
        // d/ds of exp(-s) where the clamp is inactive (s > 0).
        out.grad_target_log_u = (s > T(0)).select(-weight * diff.abs() * inv, T(0)).matrix();
      } else {
        out.grad_target_log_u = (weight * diff.abs() * inv).matrix();
      }
    }
  }
  return out;
}

template <class T>
LossResult<T> feature_consistency(const Matrix<T>& z_weak, const Matrix<T>& prediction, bool stop_gradient) {
  check_pair(z_weak, prediction, "feature_consistency");
  if (z_weak.rows() == 0) throw ShapeError("feature_consistency: empty token set");
  const T inv = T(1) / T(z_weak.rows());
  const Matrix<T> diff = prediction - z_weak;
  LossResult<T> out;
  out.value = diff.squaredNorm() * inv;
  out.grad_pred = diff * (T(2) * inv);
  out.grad_target = stop_gradient ? Matrix<T>::Zero(z_weak.rows(), z_weak.cols()) : Matrix<T>(-out.grad_pred);
  return out;
}

template <class T>
PredictorHead<T>::PredictorHead(int d_model)
    : fc1("predictor.fc1", d_model, d_model, nn::ParamGroup::decoder),
      fc2("predictor.fc2", d_model, d_model, nn::ParamGroup::decoder) {}

template <class T>
void PredictorHead<T>::init(Rng& rng) {
  fc1.init_xavier(rng);
  fc2.weight.value.setZero();
  fc2.bias.value.setZero();
}

template <class T>
Matrix<T> PredictorHead<T>::forward(const Matrix<T>& z, Cache* cache) const {
  Matrix<T> hidden_pre = fc1.forward(z);
  Matrix<T> hidden = nn::gelu(hidden_pre);
  Matrix<T> y = z + fc2.forward(hidden);
  if (cache != nullptr) {
    cache->input = z;
    cache->hidden_pre = std::move(hidden_pre);
    cache->hidden = std::move(hidden);
  }
  return y;
}

template <class T>
Matrix<T> PredictorHead<T>::backward(const Cache& cache, const Matrix<T>& dy) {
  const Matrix<T> dhidden = fc2.backward(cache.hidden, dy);
  const Matrix<T> dpre = nn::gelu_backward(cache.hidden_pre, dhidden);
  return dy + fc1.backward(cache.input, dpre);
}

template <class T>
LossResult<T> feature_consistency(const Matrix<T>& z_weak, const Matrix<T>& z_strong, PredictorHead<T>& head) {
  typename PredictorHead<T>::Cache cache;
  const Matrix<T> predicted = head.forward(z_strong, &cache);
  LossResult<T> out = feature_consistency(z_weak, predicted, true);
  out.grad_pred = head.backward(cache, out.grad_pred);
  return out;
}

LossBreakdown total_loss(const LossTerms& terms, const LossWeights& weights) {
  weights.validate();
  LossBreakdown out;
  out.l_gt = terms.l_gt.value_or(0.0);
  out.l_dc = terms.l_dc;
  out.l_uc = terms.l_uc.value_or(0.0);
  out.l_fc = terms.l_fc;
  out.total = out.l_gt + weights.lambda_dc * out.l_dc + weights.lambda_uc * out.l_uc + weights.lambda_fc * out.l_fc;
  return out;
}

#define MASKDEPTH_INSTANTIATE_LOSSES(T)                                                                        \
  template LossResult<T> supervised_l1<T>(const Matrix<T>&, const SparseDepth<T>&);                            \
  template LossResult<T> uncertainty_nll<T>(const Matrix<T>&, const Matrix<T>&, const SparseDepth<T>&);        \
  template LossResult<T> depth_consistency<T>(const DepthPrediction<T>&, const Matrix<T>&, ConsistencyWeighting, \
                                              bool);                                                           \
  template LossResult<T> feature_consistency<T>(const Matrix<T>&, const Matrix<T>&, bool);                     \
  template class PredictorHead<T>;                                                                             \
  template LossResult<T> feature_consistency<T>(const Matrix<T>&, const Matrix<T>&, PredictorHead<T>&);

MASKDEPTH_INSTANTIATE_LOSSES(float)
MASKDEPTH_INSTANTIATE_LOSSES(double)

}  // namespace maskdepth
