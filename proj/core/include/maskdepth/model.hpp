#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "maskdepth/decoder.hpp"
#include "maskdepth/encoder.hpp"
#include "maskdepth/losses.hpp"
#include "maskdepth/masking.hpp"
#include "maskdepth/tokens.hpp"

namespace maskdepth {

struct ModelConfig {
  int image_height = 32;
  int image_width = 64;
  int patch_size = 4;
  EncoderConfig encoder;
  DecoderConfig decoder;

  [[nodiscard]] int grid_rows() const { return image_height / patch_size; }
  [[nodiscard]] int grid_cols() const { return image_width / patch_size; }
  [[nodiscard]] int num_tokens() const { return grid_rows() * grid_cols(); }
  [[nodiscard]] int patch_dim() const { return patch_size * patch_size * 3; }

  /// Copies shared fields (d_model, patch size) into the decoder config and
  /// checks every constraint. Throws ConfigError / ShapeError.
  void finalize();

  /// 32x64 images, p=4, d_model=64, depth 4, 4 heads.
  static ModelConfig desk();
  /// 192x640 images, p=16, d_model=768, depth 12, skips {2,5,8,11}.
  static ModelConfig full();
};

template <class T>
struct ForwardOutput {
  DepthPrediction<T> prediction;
  Matrix<T> features;  // final encoder tokens, spatial order
};

/// Patch embedding, transformer encoder, DPT decoder and the feature
/// predictor head. The same parameters serve both branches; a branch is
/// just a forward call with or without a partition.
template <class T>
class Model {
 public:
  struct Cache {
    Matrix<T> patches;
    std::shared_ptr<const Partition> partition;
    std::shared_ptr<const AttentionMask> mask;
    typename Encoder<T>::Cache encoder;
    typename Decoder<T>::Cache decoder;
  };

  Model() = default;
  explicit Model(ModelConfig cfg);

  void init(std::uint64_t seed);

  /// `partition` null means plain (unmasked) encoding. Otherwise tokens are
  /// shuffled by the partition, encoded under its block mask and reassembled.
  [[nodiscard]] ForwardOutput<T> forward(const FeatureMap<T>& image, const Partition* partition, Cache* cache) const;

  /// Accumulates parameter gradients. Empty matrices count as zero.
  void backward(const Cache& cache, const Matrix<T>& d_depth, const Matrix<T>& d_log_u, const Matrix<T>& d_features);

  void zero_grad();
  [[nodiscard]] std::vector<nn::Param<T>*> parameters();
  [[nodiscard]] std::vector<const nn::Param<T>*> parameters() const;
  [[nodiscard]] std::size_t parameter_count() const;

  [[nodiscard]] const ModelConfig& config() const { return cfg_; }

  /// Same architecture and values in another scalar type.
  template <class U>
  [[nodiscard]] Model<U> cast() const {
    Model<U> out(cfg_);
    auto dst = out.parameters();
    auto src = parameters();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value.template cast<U>();
    return out;
  }

  PatchEmbedding<T> embedding;
  Encoder<T> encoder;
  Decoder<T> decoder;
  PredictorHead<T> predictor;

 private:
  ModelConfig cfg_;
};

}  // namespace maskdepth
