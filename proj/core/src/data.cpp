#include "maskdepth/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

namespace maskdepth {

namespace fs = std::filesystem;

void SceneConfig::validate() const {
  if (height <= 0 || width <= 0) throw ConfigError("scene size must be positive");
  if (!(d_min > 0.0 && d_min < d_max)) throw ConfigError("scene depth range needs 0 < d_min < d_max");
  if (min_objects < 0 || max_objects < min_objects) throw ConfigError("invalid object count range");
  if (plane_far_min > plane_far_max || plane_near_min > plane_near_max) throw ConfigError("invalid plane range");
  if (texture_noise < 0.0) throw ConfigError("texture noise must be non-negative");
  if (illumination_min <= 0.0 || illumination_min > 1.0) throw ConfigError("illumination_min must be in (0, 1]");
}

namespace {

struct Shape {
  bool ellipse = false;
  double cx = 0;
  double cy = 0;
  double rx = 1;
  double ry = 1;
  float depth = 0;

  [[nodiscard]] bool contains(int x, int y) const {
    const double dx = (x + 0.5 - cx) / rx;
    const double dy = (y + 0.5 - cy) / ry;
    if (ellipse) return dx * dx + dy * dy <= 1.0;
    return std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
  }
};

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(h, 1.0) * 6.0;
  const int sector = static_cast<int>(std::floor(h)) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s);
  const double q = v * (1 - s * f);
  const double t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

}  // namespace

Scene generate_scene(const SceneConfig& cfg, Rng& rng) {
  cfg.validate();
  const int h = cfg.height;
  const int w = cfg.width;
  Scene scene;
  scene.depth.resize(h, w);

  // Geometry.
  const double far = rng.uniform(cfg.plane_far_min, cfg.plane_far_max);
  const double near = rng.uniform(cfg.plane_near_min, cfg.plane_near_max);
  std::vector<double> plane(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) {
    const double t = h == 1 ? 1.0 : static_cast<double>(y) / (h - 1);
    plane[y] = std::clamp(far + (near - far) * t, cfg.d_min, cfg.d_max);
    scene.depth.row(y).setConstant(static_cast<float>(plane[y]));
  }
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> owner =
      Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Constant(h, w, -1);

  const auto count = static_cast<int>(rng.uniform_int(cfg.min_objects, cfg.max_objects));
  std::vector<Shape> shapes(static_cast<std::size_t>(count));
  for (auto& s : shapes) {
    s.ellipse = rng.bernoulli(0.5);
    s.cx = rng.uniform(0.0, w);
    s.cy = rng.uniform(0.25 * h, static_cast<double>(h));
    s.rx = rng.uniform(1.5, std::max(2.0, w / 5.0));
    s.ry = rng.uniform(1.5, std::max(2.0, h / 3.0));
    // Stands on the ground: nearer than the plane at its base row.
    const int base = std::clamp(static_cast<int>(s.cy + s.ry), 0, h - 1);
    s.depth = static_cast<float>(std::clamp(plane[base] * rng.uniform(0.5, 1.0), cfg.d_min, cfg.d_max));
  }
  for (int i = 0; i < count; ++i) {
    const Shape& s = shapes[i];
    const int y0 = std::max(0, static_cast<int>(std::floor(s.cy - s.ry)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(s.cy + s.ry)));
    const int x0 = std::max(0, static_cast<int>(std::floor(s.cx - s.rx)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(s.cx + s.rx)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        if (s.contains(x, y) && s.depth < scene.depth(y, x)) {
          scene.depth(y, x) = s.depth;
          owner(y, x) = i;
        }
      }
    }
  }

  // Appearance, from its own stream.
  Rng look(rng.next_u64() ^ (cfg.texture_seed * 0x9e3779b97f4a7c15ULL));
  const double illumination = look.uniform(cfg.illumination_min, 1.0);
  std::vector<double> tint(static_cast<std::size_t>(count) + 1);
  for (auto& t : tint) t = look.uniform(-0.15, 0.15);
  const double log_range = std::log(cfg.d_max / cfg.d_min);
  scene.image = ImageTensor(3, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double t = std::clamp(std::log(scene.depth(y, x) / cfg.d_min) / log_range, 0.0, 1.0);
      const double saturation = std::clamp(0.75 + tint[static_cast<std::size_t>(owner(y, x) + 1)], 0.0, 1.0);
      const auto rgb = hsv_to_rgb(0.7 * t, saturation, 0.95);
      for (int c = 0; c < 3; ++c) {
        const double v = rgb[c] * illumination + look.normal(0.0, cfg.texture_noise);
        scene.image.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return scene;
}

SparseDepth<float> sparsify(const Matrix<float>& depth, double density, Rng& rng) {
  if (!(density > 0.0 && density <= 1.0)) throw ConfigError("sparsify: density must be in (0, 1]");
  SparseDepth<float> out;
  out.values = depth;
  out.valid.resize(depth.rows(), depth.cols());
  for (Eigen::Index y = 0; y < depth.rows(); ++y) {
    for (Eigen::Index x = 0; x < depth.cols(); ++x) out.valid(y, x) = rng.bernoulli(density);
  }
  return out;
}

Pixels16 encode_depth(const SparseDepth<float>& depth) {
  Pixels16 pixels(depth.values.rows(), depth.values.cols());
  for (Eigen::Index y = 0; y < pixels.rows(); ++y) {
    for (Eigen::Index x = 0; x < pixels.cols(); ++x) {
      if (!depth.valid(y, x)) {
        pixels(y, x) = 0;
        continue;
      }
      const double scaled = std::round(static_cast<double>(depth.values(y, x)) * 256.0);
      pixels(y, x) = static_cast<std::uint16_t>(std::clamp(scaled, 1.0, 65535.0));
    }
  }
  return pixels;
}

SparseDepth<float> decode_depth(const Pixels16& pixels) {
  SparseDepth<float> out;
  out.values = pixels.cast<float>() / 256.0f;
  out.valid = pixels.array() > 0;
  return out;
}

std::size_t DatasetIndex::labeled_count() const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [](const DatasetEntry& e) { return e.depth.has_value(); }));
}

const DatasetEntry& DatasetIndex::find(const std::string& id) const {
  const auto it = std::find_if(entries.begin(), entries.end(), [&](const DatasetEntry& e) { return e.id == id; });
  if (it == entries.end()) throw DataError("no sample '" + id + "' in " + root.string());
  return *it;
}

DatasetIndex load_dataset(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw DataError("dataset directory not found: " + root.string());
  const fs::path images = root / "images";
  if (!fs::is_directory(images, ec)) throw DataError("dataset has no images/ directory: " + root.string());
  DatasetIndex index;
  index.root = root;
  for (const auto& item : fs::directory_iterator(images)) {
    if (!item.is_regular_file() || item.path().extension() != ".png") continue;
    DatasetEntry entry;
    entry.id = item.path().stem().string();
    entry.image = item.path();
    const fs::path depth = root / "depth" / (entry.id + ".png");
    if (fs::is_regular_file(depth, ec)) entry.depth = depth;
    index.entries.push_back(std::move(entry));
  }
  std::sort(index.entries.begin(), index.entries.end(),
            [](const DatasetEntry& a, const DatasetEntry& b) { return a.id < b.id; });
  return index;
}

Sample read_sample(const DatasetIndex& index, const std::string& id) {
  const DatasetEntry& entry = index.find(id);
  Sample sample;
  sample.id = id;
  sample.image = read_png_rgb(entry.image);
  if (entry.depth) {
    SparseDepth<float> depth = decode_depth(read_png_gray16(*entry.depth));
    if (depth.values.rows() != sample.image.height || depth.values.cols() != sample.image.width) {
      throw DataError("depth/image size mismatch for sample '" + id + "'");
    }
    sample.depth = std::move(depth);
  }
  return sample;
}

std::vector<Sample> read_all(const DatasetIndex& index) {
  std::vector<Sample> samples;
  samples.reserve(index.entries.size());
  for (const auto& entry : index.entries) samples.push_back(read_sample(index, entry.id));
  return samples;
}

void write_sample(const fs::path& root, const std::string& id, const ImageTensor& image,
                  const SparseDepth<float>* depth) {
  fs::create_directories(root / "images");
  write_png_rgb(root / "images" / (id + ".png"), image);
  if (depth != nullptr) {
    if (depth->values.rows() != image.height || depth->values.cols() != image.width) {
      throw ShapeError("write_sample: depth/image size mismatch");
    }
    fs::create_directories(root / "depth");
    write_png_gray16(root / "depth" / (id + ".png"), encode_depth(*depth));
  }
}

std::string sample_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06zu", index);
  return buf;
}

}  // namespace maskdepth
