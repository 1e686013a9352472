#include "maskdepth/nn.hpp"

#include <cmath>

namespace maskdepth::nn {

namespace {

template <class T>
void check_same(const char* what, Eigen::Index got, Eigen::Index want) {
  if (got != want) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(want) + ", got " + std::to_string(got));
  }
}

template <class T>
Matrix<T> bilinear_matrix(int in_size) {
  const int out_size = 2 * in_size;
  Matrix<T> a = Matrix<T>::Zero(out_size, in_size);
  for (int o = 0; o < out_size; ++o) {
    const double src = in_size == 1 ? 0.0 : static_cast<double>(o) * (in_size - 1) / (out_size - 1);
    const int lo = static_cast<int>(std::floor(src));
    const int hi = std::min(lo + 1, in_size - 1);
    const double frac = src - lo;
    a(o, lo) += T(1.0 - frac);
    a(o, hi) += T(frac);
  }
  return a;
}

}  // namespace

// ---------------------------------------------------------------- Linear

template <class T>
Linear<T>::Linear(const std::string& name, int in, int out, ParamGroup group)
    : weight(name + ".weight", group, in, out), bias(name + ".bias", group, 1, out) {}

template <class T>
void Linear<T>::init_xavier(Rng& rng) {
  const double limit = std::sqrt(6.0 / (weight.value.rows() + weight.value.cols()));
  for (Eigen::Index i = 0; i < weight.value.size(); ++i) weight.value.data()[i] = T(rng.uniform(-limit, limit));
  bias.value.setZero();
}

template <class T>
Matrix<T> Linear<T>::forward(const Matrix<T>& x) const {
  check_same<T>("linear input width", x.cols(), weight.value.rows());
  Matrix<T> y = x * weight.value;
  y.rowwise() += bias.value.row(0);
  return y;
}

template <class T>
Matrix<T> Linear<T>::backward(const Matrix<T>& x, const Matrix<T>& dy) {
  weight.grad.noalias() += x.transpose() * dy;
  bias.grad.row(0) += dy.colwise().sum();
  return dy * weight.value.transpose();
}

// ------------------------------------------------------------- LayerNorm

template <class T>
LayerNorm<T>::LayerNorm(const std::string& name, int dim, ParamGroup group, double epsilon)
    : gamma(name + ".gamma", group, 1, dim), beta(name + ".beta", group, 1, dim), eps(T(epsilon)) {
  gamma.value.setOnes();
}

template <class T>
Matrix<T> LayerNorm<T>::forward(const Matrix<T>& x, Cache* cache) const {
  check_same<T>("layernorm width", x.cols(), gamma.value.cols());
  const auto n = x.rows();
  const auto d = x.cols();
  Matrix<T> normalized(n, d);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mean = x.row(i).mean();
    const auto centered = (x.row(i).array() - mean).matrix();
    const T var = centered.squaredNorm() / T(d);
    inv_std(i) = T(1) / std::sqrt(var + eps);
    normalized.row(i) = centered * inv_std(i);
  }
  Matrix<T> y = normalized.array().rowwise() * gamma.value.row(0).array();
  y.rowwise() += beta.value.row(0);
  if (cache != nullptr) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <class T>
Matrix<T> LayerNorm<T>::backward(const Cache& cache, const Matrix<T>& dy) {
  const auto& xhat = cache.normalized;
  gamma.grad.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  beta.grad.row(0) += dy.colwise().sum();
  const Matrix<T> dxhat = dy.array().rowwise() * gamma.value.row(0).array();
  const T d = T(dy.cols());
  Matrix<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const T sum_d = dxhat.row(i).sum();
    const T sum_dx = dxhat.row(i).dot(xhat.row(i));
    dx.row(i) = (cache.inv_std(i) / d) * (d * dxhat.row(i).array() - sum_d - xhat.row(i).array() * sum_dx).matrix();
  }
  return dx;
}

// ------------------------------------------------------------ activations

template <class T>
Matrix<T> gelu(const Matrix<T>& x) {
  return x.unaryExpr([](T v) { return T(0.5) * v * (T(1) + std::erf(v * T(M_SQRT1_2))); });
}

template <class T>
Matrix<T> gelu_backward(const Matrix<T>& x, const Matrix<T>& dy) {
  const Matrix<T> slope = x.unaryExpr([](T v) {
    const T cdf = T(0.5) * (T(1) + std::erf(v * T(M_SQRT1_2)));
    const T pdf = std::exp(T(-0.5) * v * v) * T(0.3989422804014327);
    return cdf + v * pdf;
  });
  return dy.cwiseProduct(slope);
}

template <class T>
FeatureMap<T> relu(const FeatureMap<T>& x) {
  FeatureMap<T> y = x;
  y.data = x.data.cwiseMax(T(0));
  return y;
}

template <class T>
FeatureMap<T> relu_backward(const FeatureMap<T>& x, const FeatureMap<T>& dy) {
  FeatureMap<T> dx = dy;
  dx.data = (x.data.array() > T(0)).select(dy.data, T(0));
  return dx;
}

// ---------------------------------------------------------------- Conv2d

template <class T>
Conv2d<T>::Conv2d(const std::string& name, ConvSpec spec, ParamGroup group)
    : weight(name + ".weight", group, spec.out, spec.in * spec.kernel * spec.kernel),
      bias(name + ".bias", group, 1, spec.out),
      spec_(spec) {}

template <class T>
void Conv2d<T>::init_he(Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(weight.value.cols()));
  for (Eigen::Index i = 0; i < weight.value.size(); ++i) weight.value.data()[i] = T(rng.normal(0.0, stddev));
  bias.value.setZero();
}

template <class T>
Matrix<T> Conv2d<T>::im2col(const FeatureMap<T>& x, int out_h, int out_w) const {
  const int k = spec_.kernel;
  Matrix<T> cols = Matrix<T>::Zero(static_cast<Eigen::Index>(spec_.in) * k * k, static_cast<Eigen::Index>(out_h) * out_w);
  for (int c = 0; c < spec_.in; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols.row((c * k + ky) * k + kx).data();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * spec_.stride - spec_.padding + ky;
          if (iy < 0 || iy >= x.height) continue;
          const T* src = x.data.row(c).data() + static_cast<Eigen::Index>(iy) * x.width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * spec_.stride - spec_.padding + kx;
            if (ix >= 0 && ix < x.width) row[oy * out_w + ox] = src[ix];
          }
        }
      }
    }
  }
  return cols;
}

template <class T>
void Conv2d<T>::col2im(const Matrix<T>& cols, FeatureMap<T>& dx, int out_h, int out_w) const {
  const int k = spec_.kernel;
  for (int c = 0; c < spec_.in; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols.row((c * k + ky) * k + kx).data();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * spec_.stride - spec_.padding + ky;
          if (iy < 0 || iy >= dx.height) continue;
          T* dst = dx.data.row(c).data() + static_cast<Eigen::Index>(iy) * dx.width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * spec_.stride - spec_.padding + kx;
            if (ix >= 0 && ix < dx.width) dst[ix] += row[oy * out_w + ox];
          }
        }
      }
    }
  }
}

template <class T>
FeatureMap<T> Conv2d<T>::forward(const FeatureMap<T>& x) const {
  check_same<T>("conv input channels", x.channels, spec_.in);
  const int out_h = output_size(x.height);
  const int out_w = output_size(x.width);
  if (out_h <= 0 || out_w <= 0) throw ShapeError("conv input too small: " + shape_string(x.height, x.width));
  FeatureMap<T> y(spec_.out, out_h, out_w);
  const bool pointwise = spec_.kernel == 1 && spec_.stride == 1 && spec_.padding == 0;
  if (pointwise) {
    y.data.noalias() = weight.value * x.data;
  } else {
    y.data.noalias() = weight.value * im2col(x, out_h, out_w);
  }
  y.data.colwise() += bias.value.row(0).transpose();
  return y;
}

template <class T>
FeatureMap<T> Conv2d<T>::backward(const FeatureMap<T>& x, const FeatureMap<T>& dy) {
  const bool pointwise = spec_.kernel == 1 && spec_.stride == 1 && spec_.padding == 0;
  bias.grad.row(0) += dy.data.rowwise().sum().transpose();
  FeatureMap<T> dx(x.channels, x.height, x.width);
  if (pointwise) {
    weight.grad.noalias() += dy.data * x.data.transpose();
    dx.data.noalias() = weight.value.transpose() * dy.data;
    return dx;
  }
  const Matrix<T> cols = im2col(x, dy.height, dy.width);
  weight.grad.noalias() += dy.data * cols.transpose();
  const Matrix<T> dcols = weight.value.transpose() * dy.data;
  col2im(dcols, dx, dy.height, dy.width);
  return dx;
}

// ------------------------------------------------------- ConvTranspose2d

template <class T>
ConvTranspose2d<T>::ConvTranspose2d(const std::string& name, int in, int out, int stride, ParamGroup group)
    : weight(name + ".weight", group, in, static_cast<Eigen::Index>(out) * stride * stride),
      bias(name + ".bias", group, 1, out),
      out_(out),
      stride_(stride) {}

template <class T>
void ConvTranspose2d<T>::init_he(Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(weight.value.rows()));
  for (Eigen::Index i = 0; i < weight.value.size(); ++i) weight.value.data()[i] = T(rng.normal(0.0, stddev));
  bias.value.setZero();
}

template <class T>
FeatureMap<T> ConvTranspose2d<T>::forward(const FeatureMap<T>& x) const {
  check_same<T>("transposed conv input channels", x.channels, weight.value.rows());
  const int s = stride_;
  const Matrix<T> cols = weight.value.transpose() * x.data;  // [out*s*s, H*W]
  FeatureMap<T> y(out_, x.height * s, x.width * s);
  for (int c = 0; c < out_; ++c) {
    T* dst = y.data.row(c).data();
    const T b = bias.value(0, c);
    for (int ky = 0; ky < s; ++ky) {
      for (int kx = 0; kx < s; ++kx) {
        const T* src = cols.row((c * s + ky) * s + kx).data();
        for (int iy = 0; iy < x.height; ++iy) {
          for (int ix = 0; ix < x.width; ++ix) {
            dst[(iy * s + ky) * y.width + ix * s + kx] = src[iy * x.width + ix] + b;
          }
        }
      }
    }
  }
  return y;
}

template <class T>
FeatureMap<T> ConvTranspose2d<T>::backward(const FeatureMap<T>& x, const FeatureMap<T>& dy) {
  const int s = stride_;
  Matrix<T> dcols(static_cast<Eigen::Index>(out_) * s * s, x.pixels());
  for (int c = 0; c < out_; ++c) {
    const T* src = dy.data.row(c).data();
    for (int ky = 0; ky < s; ++ky) {
      for (int kx = 0; kx < s; ++kx) {
        T* dst = dcols.row((c * s + ky) * s + kx).data();
        for (int iy = 0; iy < x.height; ++iy) {
          for (int ix = 0; ix < x.width; ++ix) {
            dst[iy * x.width + ix] = src[(iy * s + ky) * dy.width + ix * s + kx];
          }
        }
      }
    }
  }
  bias.grad.row(0) += dy.data.rowwise().sum().transpose();
  weight.grad.noalias() += x.data * dcols.transpose();
  FeatureMap<T> dx(x.channels, x.height, x.width);
  dx.data.noalias() = weight.value * dcols;
  return dx;
}

// -------------------------------------------------------------- upsample

template <class T>
FeatureMap<T> upsample2x(const FeatureMap<T>& x) {
  const Matrix<T> ah = bilinear_matrix<T>(x.height);
  const Matrix<T> aw_t = bilinear_matrix<T>(x.width).transpose();
  FeatureMap<T> y(x.channels, 2 * x.height, 2 * x.width);
  for (int c = 0; c < x.channels; ++c) {
    Eigen::Map<const Matrix<T>> in(x.data.row(c).data(), x.height, x.width);
    Eigen::Map<Matrix<T>> out(y.data.row(c).data(), y.height, y.width);
    out.noalias() = ah * in * aw_t;
  }
  return y;
}

template <class T>
FeatureMap<T> upsample2x_backward(const FeatureMap<T>& dy, int in_height, int in_width) {
  const Matrix<T> ah_t = bilinear_matrix<T>(in_height).transpose();
  const Matrix<T> aw = bilinear_matrix<T>(in_width);
  FeatureMap<T> dx(dy.channels, in_height, in_width);
  for (int c = 0; c < dy.channels; ++c) {
    Eigen::Map<const Matrix<T>> grad_out(dy.data.row(c).data(), dy.height, dy.width);
    Eigen::Map<Matrix<T>> grad_in(dx.data.row(c).data(), in_height, in_width);
    grad_in.noalias() = ah_t * grad_out * aw;
  }
  return dx;
}

#define MASKDEPTH_INSTANTIATE_NN(T)                                                       \
  template class Linear<T>;                                                               \
  template class LayerNorm<T>;                                                            \
  template class Conv2d<T>;                                                               \
  template class ConvTranspose2d<T>;                                                      \
  template Matrix<T> gelu<T>(const Matrix<T>&);                                           \
  template Matrix<T> gelu_backward<T>(const Matrix<T>&, const Matrix<T>&);                \
  template FeatureMap<T> relu<T>(const FeatureMap<T>&);                                   \
  template FeatureMap<T> relu_backward<T>(const FeatureMap<T>&, const FeatureMap<T>&);    \
  template FeatureMap<T> upsample2x<T>(const FeatureMap<T>&);                             \
  template FeatureMap<T> upsample2x_backward<T>(const FeatureMap<T>&, int, int);

MASKDEPTH_INSTANTIATE_NN(float)
MASKDEPTH_INSTANTIATE_NN(double)

}  // namespace maskdepth::nn
