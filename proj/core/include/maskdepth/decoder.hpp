#pragma once

#include <array>
#include <memory>
#include <vector>

#include "maskdepth/common.hpp"
#include "maskdepth/encoder.hpp"
#include "maskdepth/nn.hpp"

namespace maskdepth {

/// How the sigmoid output maps to metric depth.
/// linear_depth:          depth = d_min + (d_max - d_min) * sigma
/// affine_inverse_depth:  1/depth = 1/d_max + (1/d_min - 1/d_max) * sigma
enum class DepthOutput { linear_depth, affine_inverse_depth };

inline constexpr int kDecoderLevels = 4;

struct DecoderConfig {
  int d_model = 64;
  int patch_size = 4;
  std::array<int, kDecoderLevels> level_widths{8, 16, 32, 64};
  int fusion_width = 32;
  int head_width = 16;
  double d_min = 1e-3;
  double d_max = 80.0;
  DepthOutput output = DepthOutput::linear_depth;

  /// Resolution factor of level `l` relative to the token grid: p / (4 * 2^l).
  /// Positive values upsample by that factor, negative values downsample by
  /// its magnitude, 1 is identity.
  [[nodiscard]] int resample_factor(int level) const;
  /// Throws ConfigError / ShapeError for incompatible image sizes.
  void validate(int image_height, int image_width) const;
};

/// Dense depth plus per-pixel log-uncertainty s = log U. `sigmoid` is the
/// raw head activation the depth was mapped from.
template <class T>
struct DepthPrediction {
  Matrix<T> depth;
  Matrix<T> log_uncertainty;
  Matrix<T> sigmoid;
};

template <class T>
Matrix<T> depth_from_sigmoid(const Matrix<T>& sigma, double d_min, double d_max,
                             DepthOutput mode = DepthOutput::linear_depth);

/// x + conv(relu(conv(relu(x)))).
template <class T>
class ResidualConvUnit {
 public:
  struct Cache {
    FeatureMap<T> input;
    FeatureMap<T> mid;
  };

  ResidualConvUnit() = default;
  ResidualConvUnit(const std::string& name, int width);

  void init(Rng& rng);
  [[nodiscard]] FeatureMap<T> forward(const FeatureMap<T>& x, Cache* cache) const;
  FeatureMap<T> backward(const Cache& cache, const FeatureMap<T>& dy);

  void visit(const nn::ParamVisitor<T>& f) {
    conv1.visit(f);
    conv2.visit(f);
  }
  void visit(const nn::ConstParamVisitor<T>& f) const {
    conv1.visit(f);
    conv2.visit(f);
  }

  nn::Conv2d<T> conv1;
  nn::Conv2d<T> conv2;
};

/// DPT-style decoder: four token levels reassembled into a feature pyramid,
/// fused coarse to fine, and a head emitting [sigmoid depth, log-uncertainty].
template <class T>
class Decoder {
 public:
  struct LevelCache {
    FeatureMap<T> grid;
    FeatureMap<T> projected;
    FeatureMap<T> resampled;
  };
  struct StageCache {
    typename ResidualConvUnit<T>::Cache skip_unit;
    typename ResidualConvUnit<T>::Cache path_unit;
    FeatureMap<T> fused;      // path unit output, upsample input
    FeatureMap<T> upsampled;  // output conv input
  };
  struct Cache {
    int image_height = 0;
    int image_width = 0;
    std::array<LevelCache, kDecoderLevels> levels;
    std::array<StageCache, kDecoderLevels> stages;
    FeatureMap<T> head_in;
    FeatureMap<T> head1;
    FeatureMap<T> head_up;
    FeatureMap<T> head2;
    FeatureMap<T> head3;
    Matrix<T> sigmoid;
    Matrix<T> depth;
  };

  Decoder() = default;
  explicit Decoder(DecoderConfig cfg);

  void init(Rng& rng);

  /// `skips` are [N, d_model] in spatial order, shallow to deep.
  [[nodiscard]] DepthPrediction<T> forward(const std::vector<Matrix<T>>& skips, int grid_rows, int grid_cols,
                                           Cache* cache) const;
  /// Returns gradients w.r.t. each skip input.
  std::vector<Matrix<T>> backward(const Cache& cache, const Matrix<T>& d_depth, const Matrix<T>& d_log_uncertainty);

  [[nodiscard]] const DecoderConfig& config() const { return cfg_; }

  void visit(const nn::ParamVisitor<T>& f);
  void visit(const nn::ConstParamVisitor<T>& f) const;

 private:
  struct Resample {
    int factor = 1;
    nn::ConvTranspose2d<T> up;
    nn::Conv2d<T> down;
  };

  [[nodiscard]] FeatureMap<T> resample_forward(int level, const FeatureMap<T>& x) const;
  FeatureMap<T> resample_backward(int level, const FeatureMap<T>& x, const FeatureMap<T>& dy);

  DecoderConfig cfg_;
  std::array<nn::Conv2d<T>, kDecoderLevels> project_;
  std::array<Resample, kDecoderLevels> resample_;
  std::array<nn::Conv2d<T>, kDecoderLevels> refine_;
  std::array<ResidualConvUnit<T>, kDecoderLevels> skip_unit_;  // unused at the deepest level
  std::array<ResidualConvUnit<T>, kDecoderLevels> path_unit_;
  std::array<nn::Conv2d<T>, kDecoderLevels> out_conv_;
  nn::Conv2d<T> head1_;
  nn::Conv2d<T> head2_;
  nn::Conv2d<T> head3_;
};

}  // namespace maskdepth
