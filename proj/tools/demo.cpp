#include "demo.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "maskdepth/checkpoint.hpp"
#include "maskdepth/png_io.hpp"
#include "maskdepth/trainer.hpp"

namespace maskdepth::cli {

namespace {

std::array<float, 3> hsv(double h, double s, double v) {
  h = std::fmod(h, 1.0) * 6.0;
  const int i = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const auto p = static_cast<float>(v * (1 - s));
  const auto q = static_cast<float>(v * (1 - s * f));
  const auto t = static_cast<float>(v * (1 - s * (1 - f)));
  const auto vv = static_cast<float>(v);
  switch (i) {
    case 0: return {vv, t, p};
    case 1: return {q, vv, p};
    case 2: return {p, vv, t};
    case 3: return {p, q, vv};
    case 4: return {t, p, vv};
    default: return {vv, p, q};
  }
}

void put(ImageTensor& canvas, int y, int x, const std::array<float, 3>& rgb) {
  for (int c = 0; c < 3; ++c) canvas.at(c, y, x) = rgb[c];
}

}  // namespace

DemoSummary run_mask_demo(const DemoOptions& options) {
  if (options.k < 1) throw ConfigError("--k must be at least 1");
  if (options.scale < 1) throw ConfigError("--scale must be at least 1");

  Model<float> model = [&] {
    if (options.ckpt) return model_from_checkpoint(load_checkpoint(*options.ckpt));
    Model<float> m(TrainConfig{}.model_config());
    m.init(options.seed);
    return m;
  }();
  const ModelConfig& mc = model.config();
  const ImageTensor image = read_png_rgb(options.image);
  if (image.height != mc.image_height || image.width != mc.image_width) {
    throw DataError("image is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                    ", model expects " + std::to_string(mc.image_height) + "x" + std::to_string(mc.image_width));
  }

  Rng rng(options.seed);
  const Partition part = sample_partition(mc.num_tokens(), options.k, rng);
  const std::vector<int> owner = part.subset_of_position();
  std::vector<int> subset_of_token(static_cast<std::size_t>(mc.num_tokens()));
  for (int p = 0; p < part.n; ++p) subset_of_token[part.perm[p]] = owner[p];
  const auto dropped = [&](int token) { return options.naive && subset_of_token[token] % 2 == 1; };

  const int p = mc.patch_size;
  const auto token_at = [&](int y, int x) { return (y / p) * mc.grid_cols() + x / p; };

  const ForwardOutput<float> weak = model.forward(image, nullptr, nullptr);
  ForwardOutput<float> strong;
  if (options.naive) {
    // Token dropping: masked patches are blanked and the rest attend freely.
    ImageTensor blanked = image;
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        if (!dropped(token_at(y, x))) continue;
        for (int c = 0; c < 3; ++c) blanked.at(c, y, x) = 0.0f;
      }
    }
    strong = model.forward(blanked, nullptr, nullptr);
  } else {
    strong = model.forward(image, &part, nullptr);
  }

  const int h = image.height;
  const int w = image.width;
  const bool with_uncertainty = options.ckpt.has_value();
  const int panels = with_uncertainty ? 6 : 5;
  ImageTensor canvas(3, h, w * panels);
  const double d_max = mc.decoder.d_max;
  const auto depth_colour = [&](float d) {
    return hsv(0.7 * std::clamp(static_cast<double>(d) / d_max, 0.0, 1.0), 0.85, 0.95);
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int token = token_at(y, x);
      put(canvas, y, x, {image.at(0, y, x), image.at(1, y, x), image.at(2, y, x)});
      const int s = subset_of_token[token];
      const auto colour = dropped(token) ? std::array<float, 3>{0, 0, 0}
                                         : hsv(static_cast<double>(s) / options.k, 0.8, s % 2 == 0 ? 0.95 : 0.7);
      put(canvas, y, w + x, colour);
      put(canvas, y, 2 * w + x, depth_colour(weak.prediction.depth(y, x)));
      put(canvas, y, 3 * w + x, depth_colour(strong.prediction.depth(y, x)));
      const double diff = std::abs(static_cast<double>(weak.prediction.depth(y, x)) - strong.prediction.depth(y, x));
      const auto g = static_cast<float>(std::min(1.0, diff / options.diff_full_scale));
      put(canvas, y, 4 * w + x, {g, g, g});
      if (with_uncertainty) {
        const double u = std::clamp((weak.prediction.log_uncertainty(y, x) + 5.0) / 10.0, 0.0, 1.0);
        put(canvas, y, 5 * w + x, {static_cast<float>(u), static_cast<float>(u), static_cast<float>(u)});
      }
    }
  }

  ImageTensor scaled(3, h * options.scale, w * panels * options.scale);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < scaled.height; ++y) {
      for (int x = 0; x < scaled.width; ++x) scaled.at(c, y, x) = canvas.at(c, y / options.scale, x / options.scale);
    }
  }
  write_png_rgb(options.out, scaled);

  DemoSummary summary;
  summary.panels = panels;
  summary.panel_width = w * options.scale;
  summary.non_empty_subsets = part.non_empty_subsets();
  summary.mean_weak_depth = weak.prediction.depth.cast<double>().mean();
  summary.mean_strong_depth = strong.prediction.depth.cast<double>().mean();
  summary.max_abs_diff = (weak.prediction.depth - strong.prediction.depth).cwiseAbs().maxCoeff();
  return summary;
}

}  // namespace maskdepth::cli
