#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace maskdepth {

/// Row-major dense matrix. Token sequences are [N, d_model]; feature maps
/// store [channels, height*width].
template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

#ifdef NDEBUG
inline constexpr bool kDebugBuild = false;
#else
inline constexpr bool kDebugBuild = true;
#endif

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values where finite ones are required (NaN input, diverged loss).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unreadable or malformed files, missing ground truth, empty datasets.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A supervised term was requested on a target with no valid pixels.
class EmptySupervisionError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Dense C×H×W tensor. `data` is [channels, height*width], row-major pixels.
template <class T>
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  Matrix<T> data;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w) : channels(c), height(h), width(w), data(Matrix<T>::Zero(c, h * w)) {}

  T& at(int c, int y, int x) { return data(c, y * width + x); }
  T at(int c, int y, int x) const { return data(c, y * width + x); }

  [[nodiscard]] int pixels() const { return height * width; }

  template <class U>
  [[nodiscard]] FeatureMap<U> cast() const {
    FeatureMap<U> out;
    out.channels = channels;
    out.height = height;
    out.width = width;
    out.data = data.template cast<U>();
    return out;
  }
};

/// RGB image in [0,1], 3 channels.
using ImageTensor = FeatureMap<float>;

inline std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

template <class Derived>
std::string shape_of(const Eigen::DenseBase<Derived>& m) {
  return shape_string(m.rows(), m.cols());
}

}  // namespace maskdepth
