#include "maskdepth/tokens.hpp"

#include <string>

namespace maskdepth {

namespace {

void check_patch_grid(int height, int width, int patch_size) {
  if (patch_size <= 0) throw ShapeError("patch size must be positive");
  if (height % patch_size != 0 || width % patch_size != 0) {
    throw ShapeError("image " + shape_string(height, width) + " not divisible by patch size " +
                     std::to_string(patch_size));
  }
}

}  // namespace

template <class T>
Matrix<T> patchify(const FeatureMap<T>& image, int patch_size) {
  check_patch_grid(image.height, image.width, patch_size);
  const int p = patch_size;
  const int rows = image.height / p;
  const int cols = image.width / p;
  const int c = image.channels;
  Matrix<T> patches(rows * cols, p * p * c);
  for (int r = 0; r < rows; ++r) {
    for (int q = 0; q < cols; ++q) {
      T* out = patches.row(r * cols + q).data();
      for (int py = 0; py < p; ++py) {
        for (int px = 0; px < p; ++px) {
          for (int ch = 0; ch < c; ++ch) {
            out[(py * p + px) * c + ch] = image.at(ch, r * p + py, q * p + px);
          }
        }
      }
    }
  }
  return patches;
}

template <class T>
FeatureMap<T> unpatchify(const Matrix<T>& patches, int height, int width, int patch_size, int channels) {
  check_patch_grid(height, width, patch_size);
  const int p = patch_size;
  const int rows = height / p;
  const int cols = width / p;
  if (patches.rows() != rows * cols || patches.cols() != p * p * channels) {
    throw ShapeError("patch matrix " + shape_of(patches) + " does not match image " + shape_string(height, width));
  }
  FeatureMap<T> image(channels, height, width);
  for (int r = 0; r < rows; ++r) {
    for (int q = 0; q < cols; ++q) {
      const T* in = patches.row(r * cols + q).data();
      for (int py = 0; py < p; ++py) {
        for (int px = 0; px < p; ++px) {
          for (int ch = 0; ch < channels; ++ch) {
            image.at(ch, r * p + py, q * p + px) = in[(py * p + px) * channels + ch];
          }
        }
      }
    }
  }
  return image;
}

template <class T>
FeatureMap<T> to_grid(const Matrix<T>& tokens, int rows, int cols) {
  if (tokens.rows() != static_cast<Eigen::Index>(rows) * cols) {
    throw ShapeError("token count " + std::to_string(tokens.rows()) + " does not match grid " +
                     shape_string(rows, cols));
  }
  FeatureMap<T> grid(static_cast<int>(tokens.cols()), rows, cols);
  grid.data = tokens.transpose();
  return grid;
}

template <class T>
FeatureMap<T> to_grid(const TokenSequence<T>& seq) {
  if (seq.permutation.has_value()) throw ShapeError("to_grid: sequence carries an unapplied permutation");
  return to_grid(seq.tokens, seq.rows, seq.cols);
}

template <class T>
Matrix<T> flatten_grid(const FeatureMap<T>& grid) {
  return grid.data.transpose();
}

template <class T>
PatchEmbedding<T>::PatchEmbedding(int patch_dim, int d_model, int num_tokens)
    : projection("embed.projection", patch_dim, d_model, nn::ParamGroup::encoder),
      position("embed.position", nn::ParamGroup::encoder, num_tokens, d_model) {}

template <class T>
void PatchEmbedding<T>::init(Rng& rng) {
  projection.init_xavier(rng);
  for (Eigen::Index i = 0; i < position.value.size(); ++i) position.value.data()[i] = T(rng.normal(0.0, 0.02));
}

template <class T>
Matrix<T> PatchEmbedding<T>::forward(const Matrix<T>& patches) const {
  if (patches.rows() != position.value.rows()) {
    throw ShapeError("embedding expects " + std::to_string(position.value.rows()) + " patches, got " +
                     std::to_string(patches.rows()));
  }
  return projection.forward(patches) + position.value;
}

template <class T>
void PatchEmbedding<T>::backward(const Matrix<T>& patches, const Matrix<T>& dtokens) {
  position.grad += dtokens;
  projection.backward(patches, dtokens);
}

template <class T>
TokenSequence<T> embed_image(const PatchEmbedding<T>& embedding, const FeatureMap<T>& image, int patch_size) {
  TokenSequence<T> seq;
  seq.tokens = embedding.forward(patchify(image, patch_size));
  seq.rows = image.height / patch_size;
  seq.cols = image.width / patch_size;
  seq.patch_size = patch_size;
  return seq;
}

#define MASKDEPTH_INSTANTIATE_TOKENS(T)                                                          \
  template Matrix<T> patchify<T>(const FeatureMap<T>&, int);                                     \
  template FeatureMap<T> unpatchify<T>(const Matrix<T>&, int, int, int, int);                    \
  template FeatureMap<T> to_grid<T>(const Matrix<T>&, int, int);                                 \
  template FeatureMap<T> to_grid<T>(const TokenSequence<T>&);                                    \
  template Matrix<T> flatten_grid<T>(const FeatureMap<T>&);                                      \
  template class PatchEmbedding<T>;                                                              \
  template TokenSequence<T> embed_image<T>(const PatchEmbedding<T>&, const FeatureMap<T>&, int);

MASKDEPTH_INSTANTIATE_TOKENS(float)
MASKDEPTH_INSTANTIATE_TOKENS(double)

}  // namespace maskdepth
