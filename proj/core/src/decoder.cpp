#include "maskdepth/decoder.hpp"

#include <cmath>
#include <string>

#include "maskdepth/tokens.hpp"

namespace maskdepth {

int DecoderConfig::resample_factor(int level) const {
  const int num = patch_size;
  const int den = 4 << level;
  if (num >= den) return num / den;
  return -(den / num);
}

void DecoderConfig::validate(int image_height, int image_width) const {
  if (patch_size <= 0 || (patch_size & (patch_size - 1)) != 0) {
    throw ConfigError("decoder patch size must be a power of two, got " + std::to_string(patch_size));
  }
  if (!(d_min < d_max)) throw ConfigError("d_min must be smaller than d_max");
  if (d_min < 0.0 || (output == DepthOutput::affine_inverse_depth && d_min <= 0.0)) {
    throw ConfigError("d_min must be positive");
  }
  if (fusion_width < 2 || head_width < 1) throw ConfigError("decoder widths must be positive");
  for (int w : level_widths) {
    if (w <= 0) throw ConfigError("decoder level widths must be positive");
  }
  const int coarsest = 4 << (kDecoderLevels - 1);
  if (image_height % coarsest != 0 || image_width % coarsest != 0 || image_height % patch_size != 0 ||
      image_width % patch_size != 0) {
    throw ShapeError("image " + shape_string(image_height, image_width) + " must be a multiple of " +
                     std::to_string(std::max(coarsest, patch_size)) + " for the decoder pyramid");
  }
}

template <class T>
Matrix<T> depth_from_sigmoid(const Matrix<T>& sigma, double d_min, double d_max, DepthOutput mode) {
  if (!(d_min < d_max)) throw ConfigError("depth_from_sigmoid: d_min must be smaller than d_max");
  if (mode == DepthOutput::linear_depth) {
    return (sigma.array() * T(d_max - d_min) + T(d_min)).matrix();
  }
  if (d_min <= 0.0) throw ConfigError("depth_from_sigmoid: inverse depth needs d_min > 0");
  const T near_inv = T(1.0 / d_min);
  const T far_inv = T(1.0 / d_max);
  return (sigma.array() * (near_inv - far_inv) + far_inv).inverse().matrix();
}

// ----------------------------------------------------- ResidualConvUnit

template <class T>
ResidualConvUnit<T>::ResidualConvUnit(const std::string& name, int width)
    : conv1(name + ".conv1", {width, width, 3, 1, 1}, nn::ParamGroup::decoder),
      conv2(name + ".conv2", {width, width, 3, 1, 1}, nn::ParamGroup::decoder) {}

template <class T>
void ResidualConvUnit<T>::init(Rng& rng) {
  conv1.init_he(rng);
  conv2.init_he(rng);
  conv2.weight.value *= T(0.5);
}

template <class T>
FeatureMap<T> ResidualConvUnit<T>::forward(const FeatureMap<T>& x, Cache* cache) const {
  FeatureMap<T> mid = conv1.forward(nn::relu(x));
  FeatureMap<T> y = conv2.forward(nn::relu(mid));
  y.data += x.data;
  if (cache != nullptr) {
    cache->input = x;
    cache->mid = std::move(mid);
  }
  return y;
}

template <class T>
FeatureMap<T> ResidualConvUnit<T>::backward(const Cache& cache, const FeatureMap<T>& dy) {
  const FeatureMap<T> dmid_act = conv2.backward(nn::relu(cache.mid), dy);
  const FeatureMap<T> dmid = nn::relu_backward(cache.mid, dmid_act);
  const FeatureMap<T> dx_act = conv1.backward(nn::relu(cache.input), dmid);
  FeatureMap<T> dx = nn::relu_backward(cache.input, dx_act);
  dx.data += dy.data;
  return dx;
}

// --------------------------------------------------------------- Decoder

template <class T>
Decoder<T>::Decoder(DecoderConfig cfg) : cfg_(cfg) {
  const auto group = nn::ParamGroup::decoder;
  const int fw = cfg_.fusion_width;
  for (int l = 0; l < kDecoderLevels; ++l) {
    const std::string prefix = "decoder.level" + std::to_string(l);
    const int width = cfg_.level_widths[l];
    project_[l] = nn::Conv2d<T>(prefix + ".project", {cfg_.d_model, width, 1, 1, 0}, group);
    auto& rs = resample_[l];
    rs.factor = cfg_.resample_factor(l);
    if (rs.factor > 1) {
      rs.up = nn::ConvTranspose2d<T>(prefix + ".upsample", width, width, rs.factor, group);
    } else if (rs.factor < 0) {
      const int stride = -rs.factor;
      const nn::ConvSpec spec = stride == 2 ? nn::ConvSpec{width, width, 3, 2, 1} : nn::ConvSpec{width, width, stride, stride, 0};
      rs.down = nn::Conv2d<T>(prefix + ".downsample", spec, group);
    }
    refine_[l] = nn::Conv2d<T>(prefix + ".refine", {width, fw, 3, 1, 1}, group);
    const std::string fusion = "decoder.fusion" + std::to_string(l);
    skip_unit_[l] = ResidualConvUnit<T>(fusion + ".skip_unit", fw);
    path_unit_[l] = ResidualConvUnit<T>(fusion + ".path_unit", fw);
    out_conv_[l] = nn::Conv2d<T>(fusion + ".out", {fw, fw, 1, 1, 0}, group);
  }
  head1_ = nn::Conv2d<T>("decoder.head.conv1", {fw, fw / 2, 3, 1, 1}, group);
  head2_ = nn::Conv2d<T>("decoder.head.conv2", {fw / 2, cfg_.head_width, 3, 1, 1}, group);
  head3_ = nn::Conv2d<T>("decoder.head.conv3", {cfg_.head_width, 2, 1, 1, 0}, group);
}

template <class T>
void Decoder<T>::init(Rng& rng) {
  for (int l = 0; l < kDecoderLevels; ++l) {
    project_[l].init_he(rng);
    if (resample_[l].factor > 1) resample_[l].up.init_he(rng);
    if (resample_[l].factor < 0) resample_[l].down.init_he(rng);
    refine_[l].init_he(rng);
    skip_unit_[l].init(rng);
    path_unit_[l].init(rng);
    out_conv_[l].init_he(rng);
  }
  head1_.init_he(rng);
  head2_.init_he(rng);
  head3_.init_he(rng);
  head3_.weight.value *= T(0.1);
}

template <class T>
FeatureMap<T> Decoder<T>::resample_forward(int level, const FeatureMap<T>& x) const {
  const auto& rs = resample_[level];
  if (rs.factor > 1) return rs.up.forward(x);
  if (rs.factor < 0) return rs.down.forward(x);
  return x;
}

template <class T>
FeatureMap<T> Decoder<T>::resample_backward(int level, const FeatureMap<T>& x, const FeatureMap<T>& dy) {
  auto& rs = resample_[level];
  if (rs.factor > 1) return rs.up.backward(x, dy);
  if (rs.factor < 0) return rs.down.backward(x, dy);
  return dy;
}

template <class T>
DepthPrediction<T> Decoder<T>::forward(const std::vector<Matrix<T>>& skips, int grid_rows, int grid_cols,
                                       Cache* cache) const {
  if (skips.size() != kDecoderLevels) {
    throw ShapeError("decoder expects " + std::to_string(kDecoderLevels) + " skip levels, got " +
                     std::to_string(skips.size()));
  }
  const int image_h = grid_rows * cfg_.patch_size;
  const int image_w = grid_cols * cfg_.patch_size;
  cfg_.validate(image_h, image_w);

  std::array<FeatureMap<T>, kDecoderLevels> pyramid;
  for (int l = 0; l < kDecoderLevels; ++l) {
    FeatureMap<T> grid = to_grid(skips[l], grid_rows, grid_cols);
    FeatureMap<T> projected = project_[l].forward(grid);
    FeatureMap<T> resampled = resample_forward(l, projected);
    pyramid[l] = refine_[l].forward(resampled);
    if (cache != nullptr) {
      cache->levels[l] = {std::move(grid), std::move(projected), std::move(resampled)};
    }
  }

  FeatureMap<T> path;
  for (int l = kDecoderLevels - 1; l >= 0; --l) {
    StageCache* stage = cache != nullptr ? &cache->stages[l] : nullptr;
    FeatureMap<T> fused_in;
    if (l == kDecoderLevels - 1) {
      fused_in = pyramid[l];
    } else {
      fused_in = skip_unit_[l].forward(pyramid[l], stage != nullptr ? &stage->skip_unit : nullptr);
      if (fused_in.height != path.height || fused_in.width != path.width) {
        throw ShapeError("decoder fusion size mismatch at level " + std::to_string(l));
      }
      fused_in.data += path.data;
    }
    FeatureMap<T> fused = path_unit_[l].forward(fused_in, stage != nullptr ? &stage->path_unit : nullptr);
    FeatureMap<T> upsampled = nn::upsample2x(fused);
    path = out_conv_[l].forward(upsampled);
    if (stage != nullptr) {
      stage->fused = std::move(fused);
      stage->upsampled = std::move(upsampled);
    }
  }

  FeatureMap<T> head1 = head1_.forward(path);
  FeatureMap<T> head_up = nn::upsample2x(head1);
  FeatureMap<T> head2 = head2_.forward(head_up);
  FeatureMap<T> head3 = nn::relu(head2);
  const FeatureMap<T> raw = head3_.forward(head3);
  if (raw.height != image_h || raw.width != image_w) {
    throw ShapeError("decoder produced " + shape_string(raw.height, raw.width) + " for image " +
                     shape_string(image_h, image_w));
  }

  DepthPrediction<T> pred;
  const Eigen::Map<const Matrix<T>> logits(raw.data.row(0).data(), image_h, image_w);
  pred.sigmoid = logits.unaryExpr([](T v) { return T(1) / (T(1) + std::exp(-v)); });
  pred.depth = depth_from_sigmoid(pred.sigmoid, cfg_.d_min, cfg_.d_max, cfg_.output);
  pred.log_uncertainty = Eigen::Map<const Matrix<T>>(raw.data.row(1).data(), image_h, image_w);

  if (cache != nullptr) {
    cache->image_height = image_h;
    cache->image_width = image_w;
    cache->head_in = std::move(path);
    cache->head1 = std::move(head1);
    cache->head_up = std::move(head_up);
    cache->head2 = std::move(head2);
    cache->head3 = std::move(head3);
    cache->sigmoid = pred.sigmoid;
    cache->depth = pred.depth;
  }
  return pred;
}

template <class T>
std::vector<Matrix<T>> Decoder<T>::backward(const Cache& cache, const Matrix<T>& d_depth,
                                            const Matrix<T>& d_log_uncertainty) {
  const int h = cache.image_height;
  const int w = cache.image_width;
  if (d_depth.rows() != h || d_depth.cols() != w || d_log_uncertainty.rows() != h || d_log_uncertainty.cols() != w) {
    throw ShapeError("decoder backward: gradient shape mismatch");
  }
  Matrix<T> d_sigma;
  if (cfg_.output == DepthOutput::linear_depth) {
    d_sigma = d_depth * T(cfg_.d_max - cfg_.d_min);
  } else {
    const T span = T(1.0 / cfg_.d_min - 1.0 / cfg_.d_max);
    d_sigma = (-(d_depth.array() * cache.depth.array().square()) * span).matrix();
  }
  FeatureMap<T> d_raw(2, h, w);
  Eigen::Map<Matrix<T>>(d_raw.data.row(0).data(), h, w) =
      (d_sigma.array() * cache.sigmoid.array() * (T(1) - cache.sigmoid.array())).matrix();
  Eigen::Map<Matrix<T>>(d_raw.data.row(1).data(), h, w) = d_log_uncertainty;

  FeatureMap<T> grad = head3_.backward(cache.head3, d_raw);
  grad = nn::relu_backward(cache.head2, grad);
  grad = head2_.backward(cache.head_up, grad);
  grad = nn::upsample2x_backward(grad, cache.head1.height, cache.head1.width);
  FeatureMap<T> d_path = head1_.backward(cache.head_in, grad);

  std::array<FeatureMap<T>, kDecoderLevels> d_pyramid;
  for (int l = 0; l < kDecoderLevels; ++l) {
    const StageCache& stage = cache.stages[l];
    grad = out_conv_[l].backward(stage.upsampled, d_path);
    grad = nn::upsample2x_backward(grad, stage.fused.height, stage.fused.width);
    const FeatureMap<T> d_fused_in = path_unit_[l].backward(stage.path_unit, grad);
    if (l == kDecoderLevels - 1) {
      d_pyramid[l] = d_fused_in;
    } else {
      d_pyramid[l] = skip_unit_[l].backward(stage.skip_unit, d_fused_in);
      d_path = d_fused_in;  // flows to the coarser stage's output
    }
  }

  std::vector<Matrix<T>> d_skips(kDecoderLevels);
  for (int l = 0; l < kDecoderLevels; ++l) {
    const LevelCache& level = cache.levels[l];
    FeatureMap<T> g = refine_[l].backward(level.resampled, d_pyramid[l]);
    g = resample_backward(l, level.projected, g);
    g = project_[l].backward(level.grid, g);
    d_skips[l] = flatten_grid(g);
  }
  return d_skips;
}

template <class T>
void Decoder<T>::visit(const nn::ParamVisitor<T>& f) {
  for (int l = 0; l < kDecoderLevels; ++l) {
    project_[l].visit(f);
    if (resample_[l].factor > 1) resample_[l].up.visit(f);
    if (resample_[l].factor < 0) resample_[l].down.visit(f);
    refine_[l].visit(f);
    if (l != kDecoderLevels - 1) skip_unit_[l].visit(f);
    path_unit_[l].visit(f);
    out_conv_[l].visit(f);
  }
  head1_.visit(f);
  head2_.visit(f);
  head3_.visit(f);
}

template <class T>
void Decoder<T>::visit(const nn::ConstParamVisitor<T>& f) const {
  for (int l = 0; l < kDecoderLevels; ++l) {
    project_[l].visit(f);
    if (resample_[l].factor > 1) resample_[l].up.visit(f);
    if (resample_[l].factor < 0) resample_[l].down.visit(f);
    refine_[l].visit(f);
    if (l != kDecoderLevels - 1) skip_unit_[l].visit(f);
    path_unit_[l].visit(f);
    out_conv_[l].visit(f);
  }
  head1_.visit(f);
  head2_.visit(f);
  head3_.visit(f);
}

template Matrix<float> depth_from_sigmoid<float>(const Matrix<float>&, double, double, DepthOutput);
template Matrix<double> depth_from_sigmoid<double>(const Matrix<double>&, double, double, DepthOutput);
template class ResidualConvUnit<float>;
template class ResidualConvUnit<double>;
template class Decoder<float>;
template class Decoder<double>;

}  // namespace maskdepth
