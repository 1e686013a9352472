#pragma once

#include <optional>

#include "maskdepth/common.hpp"
#include "maskdepth/decoder.hpp"
#include "maskdepth/nn.hpp"

namespace maskdepth {

/// Ground-truth depth in meters with a per-pixel validity mask.
template <class T>
struct SparseDepth {
  Matrix<T> values;
  Mask valid;

  [[nodiscard]] Eigen::Index valid_count() const { return valid.count(); }
};

struct LossWeights {
  double lambda_dc = 1.0;
  double lambda_uc = 1.0;
  double lambda_fc = 1.0;
  int weak_k = 1;
  int strong_k = 64;

  void validate() const;
};

/// How the weak branch's uncertainty weights the depth-consistency residual.
/// confidence: w = clamp(exp(-s), 0, 1), decreasing in uncertainty.
/// literal:    w = exp(s) = U, the formula read verbatim.
/// none:       w = 1.
enum class ConsistencyWeighting { confidence, literal, none };

/// A scalar loss with its gradients. Fields that do not apply stay empty.
template <class T>
struct LossResult {
  T value = T(0);
  Matrix<T> grad_pred;        // w.r.t. the trained prediction (depth or strong depth / predicted features)
  Matrix<T> grad_log_u;       // w.r.t. the trained log-uncertainty
  Matrix<T> grad_target;      // w.r.t. the weak-branch target (zero under stop-gradient)
  Matrix<T> grad_target_log_u;
};

/// Mean |pred - gt| over valid pixels. Throws EmptySupervisionError.
template <class T>
LossResult<T> supervised_l1(const Matrix<T>& pred, const SparseDepth<T>& gt);

/// Mean over valid pixels of |pred - gt| * exp(-s) + s.
template <class T>
LossResult<T> uncertainty_nll(const Matrix<T>& pred, const Matrix<T>& log_u, const SparseDepth<T>& gt);

/// Mean over all pixels of w * |sg(weak.depth) - strong_depth|, w from the
/// (stop-gradient) weak log-uncertainty. With stop_gradient=false the target
/// gradients are reported as well.
template <class T>
LossResult<T> depth_consistency(const DepthPrediction<T>& weak, const Matrix<T>& strong_depth,
                                ConsistencyWeighting weighting = ConsistencyWeighting::confidence,
                                bool stop_gradient = true);

/// Mean over tokens of ||sg(z_weak) - prediction||^2.
template <class T>
LossResult<T> feature_consistency(const Matrix<T>& z_weak, const Matrix<T>& prediction, bool stop_gradient = true);

/// Two-layer per-token MLP with a residual path: h(z) = z + W2 gelu(W1 z + b1) + b2.
/// W2 and b2 start at zero, so h is the identity at initialization.
template <class T>
class PredictorHead {
 public:
  struct Cache {
    Matrix<T> input;
    Matrix<T> hidden_pre;
    Matrix<T> hidden;
  };

  PredictorHead() = default;
  explicit PredictorHead(int d_model);

  void init(Rng& rng);
  [[nodiscard]] Matrix<T> forward(const Matrix<T>& z, Cache* cache) const;
  Matrix<T> backward(const Cache& cache, const Matrix<T>& dy);

  void visit(const nn::ParamVisitor<T>& f) {
    fc1.visit(f);
    fc2.visit(f);
  }
  void visit(const nn::ConstParamVisitor<T>& f) const {
    fc1.visit(f);
    fc2.visit(f);
  }

  nn::Linear<T> fc1;
  nn::Linear<T> fc2;
};

/// Feature consistency through the predictor head. Accumulates head
/// parameter gradients and returns the gradient w.r.t. z_strong in grad_pred.
template <class T>
LossResult<T> feature_consistency(const Matrix<T>& z_weak, const Matrix<T>& z_strong, PredictorHead<T>& head);

struct LossBreakdown {
  double l_gt = 0.0;
  double l_dc = 0.0;
  double l_uc = 0.0;
  double l_fc = 0.0;
  double total = 0.0;
};

/// Individual terms; labeled terms are absent when the slice has no labels.
struct LossTerms {
  std::optional<double> l_gt;
  double l_dc = 0.0;
  std::optional<double> l_uc;
  double l_fc = 0.0;
};

/// total = l_gt + lambda_dc l_dc + lambda_uc l_uc + lambda_fc l_fc.
LossBreakdown total_loss(const LossTerms& terms, const LossWeights& weights);

}  // namespace maskdepth
