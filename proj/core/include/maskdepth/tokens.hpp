#pragma once

#include <optional>
#include <vector>

#include "maskdepth/common.hpp"
#include "maskdepth/nn.hpp"

namespace maskdepth {

/// Embedded patch tokens [N, d_model] over a rows×cols patch grid.
/// Row-major grid order unless `permutation` is set, in which case
/// tokens(i) holds the token of spatial position (*permutation)[i].
template <class T>
struct TokenSequence {
  Matrix<T> tokens;
  int rows = 0;
  int cols = 0;
  int patch_size = 0;
  std::optional<std::vector<int>> permutation;

  [[nodiscard]] int size() const { return static_cast<int>(tokens.rows()); }
  [[nodiscard]] int d_model() const { return static_cast<int>(tokens.cols()); }
};

/// Flattens non-overlapping p×p patches; row i is grid cell (i / cols, i % cols)
/// with values ordered (py, px, channel).
template <class T>
Matrix<T> patchify(const FeatureMap<T>& image, int patch_size);

template <class T>
FeatureMap<T> unpatchify(const Matrix<T>& patches, int height, int width, int patch_size, int channels = 3);

/// Tokens [N, d] in spatial order → [d, rows, cols].
template <class T>
FeatureMap<T> to_grid(const TokenSequence<T>& seq);
template <class T>
FeatureMap<T> to_grid(const Matrix<T>& tokens, int rows, int cols);

/// [d, rows, cols] → tokens [rows*cols, d].
template <class T>
Matrix<T> flatten_grid(const FeatureMap<T>& grid);

/// Linear patch projection plus a learned absolute position embedding.
template <class T>
class PatchEmbedding {
 public:
  PatchEmbedding() = default;
  PatchEmbedding(int patch_dim, int d_model, int num_tokens);

  void init(Rng& rng);
  [[nodiscard]] Matrix<T> forward(const Matrix<T>& patches) const;
  void backward(const Matrix<T>& patches, const Matrix<T>& dtokens);

  [[nodiscard]] int num_tokens() const { return static_cast<int>(position.value.rows()); }

  void visit(const nn::ParamVisitor<T>& f) {
    projection.visit(f);
    f(position);
  }
  void visit(const nn::ConstParamVisitor<T>& f) const {
    projection.visit(f);
    f(position);
  }

  nn::Linear<T> projection;
  nn::Param<T> position;
};

/// patchify + embed, producing a TokenSequence in spatial order.
template <class T>
TokenSequence<T> embed_image(const PatchEmbedding<T>& embedding, const FeatureMap<T>& image, int patch_size);

}  // namespace maskdepth
