#pragma once

#include <functional>
#include <string>

#include "maskdepth/common.hpp"
#include "maskdepth/rng.hpp"

// Layer primitives with explicit backward passes. Every layer is a value
// type; `backward` accumulates into Param::grad and returns the input
// gradient. Forward passes needed by backward take an optional cache.

namespace maskdepth::nn {

/// Optimizer group a parameter belongs to (separate learning rates).
enum class ParamGroup { encoder, decoder };

template <class T>
struct Param {
  std::string name;
  ParamGroup group = ParamGroup::decoder;
  Matrix<T> value;
  Matrix<T> grad;

  Param() = default;
  Param(std::string param_name, ParamGroup param_group, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(param_name)),
        group(param_group),
        value(Matrix<T>::Zero(rows, cols)),
        grad(Matrix<T>::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  [[nodiscard]] Eigen::Index size() const { return value.size(); }
};

template <class T>
using ParamVisitor = std::function<void(Param<T>&)>;
template <class T>
using ConstParamVisitor = std::function<void(const Param<T>&)>;

/// y = x W + b, x: [N, in], W: [in, out].
template <class T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out, ParamGroup group);

  void init_xavier(Rng& rng);
  [[nodiscard]] Matrix<T> forward(const Matrix<T>& x) const;
  Matrix<T> backward(const Matrix<T>& x, const Matrix<T>& dy);

  void visit(const ParamVisitor<T>& f) {
    f(weight);
    f(bias);
  }
  void visit(const ConstParamVisitor<T>& f) const {
    f(weight);
    f(bias);
  }

  [[nodiscard]] int in_features() const { return static_cast<int>(weight.value.rows()); }
  [[nodiscard]] int out_features() const { return static_cast<int>(weight.value.cols()); }

  Param<T> weight;
  Param<T> bias;
};

/// Per-row layer normalization over the feature dimension.
template <class T>
class LayerNorm {
 public:
  struct Cache {
    Matrix<T> normalized;
    Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std;
  };

  LayerNorm() = default;
  LayerNorm(const std::string& name, int dim, ParamGroup group, double eps = 1e-6);

  [[nodiscard]] Matrix<T> forward(const Matrix<T>& x, Cache* cache) const;
  Matrix<T> backward(const Cache& cache, const Matrix<T>& dy);

  void visit(const ParamVisitor<T>& f) {
    f(gamma);
    f(beta);
  }
  void visit(const ConstParamVisitor<T>& f) const {
    f(gamma);
    f(beta);
  }

  Param<T> gamma;
  Param<T> beta;
  T eps = T(1e-6);
};

/// Exact (erf) GELU.
template <class T>
Matrix<T> gelu(const Matrix<T>& x);
template <class T>
Matrix<T> gelu_backward(const Matrix<T>& x, const Matrix<T>& dy);

template <class T>
FeatureMap<T> relu(const FeatureMap<T>& x);
/// Gradient of relu given the forward *input* x.
template <class T>
FeatureMap<T> relu_backward(const FeatureMap<T>& x, const FeatureMap<T>& dy);

struct ConvSpec {
  int in = 0;
  int out = 0;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
};

/// 2-D convolution via im2col. weight: [out, in*k*k], bias: [1, out].
template <class T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, ConvSpec spec, ParamGroup group);

  void init_he(Rng& rng);
  [[nodiscard]] FeatureMap<T> forward(const FeatureMap<T>& x) const;
  /// `x` is the forward input.
  FeatureMap<T> backward(const FeatureMap<T>& x, const FeatureMap<T>& dy);

  [[nodiscard]] int output_size(int input) const { return (input + 2 * spec_.padding - spec_.kernel) / spec_.stride + 1; }
  [[nodiscard]] const ConvSpec& spec() const { return spec_; }

  void visit(const ParamVisitor<T>& f) {
    f(weight);
    f(bias);
  }
  void visit(const ConstParamVisitor<T>& f) const {
    f(weight);
    f(bias);
  }

  Param<T> weight;
  Param<T> bias;

 private:
  [[nodiscard]] Matrix<T> im2col(const FeatureMap<T>& x, int out_h, int out_w) const;
  void col2im(const Matrix<T>& cols, FeatureMap<T>& dx, int out_h, int out_w) const;

  ConvSpec spec_;
};

/// Transposed convolution with kernel == stride, no padding (non-overlapping
/// upsampling). weight: [in, out*s*s], bias: [1, out].
template <class T>
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(const std::string& name, int in, int out, int stride, ParamGroup group);

  void init_he(Rng& rng);
  [[nodiscard]] FeatureMap<T> forward(const FeatureMap<T>& x) const;
  FeatureMap<T> backward(const FeatureMap<T>& x, const FeatureMap<T>& dy);

  [[nodiscard]] int stride() const { return stride_; }

  void visit(const ParamVisitor<T>& f) {
    f(weight);
    f(bias);
  }
  void visit(const ConstParamVisitor<T>& f) const {
    f(weight);
    f(bias);
  }

  Param<T> weight;
  Param<T> bias;

 private:
  int out_ = 0;
  int stride_ = 1;
};

/// Bilinear x2 upsampling with aligned corners.
template <class T>
FeatureMap<T> upsample2x(const FeatureMap<T>& x);
template <class T>
FeatureMap<T> upsample2x_backward(const FeatureMap<T>& dy, int in_height, int in_width);

}  // namespace maskdepth::nn
