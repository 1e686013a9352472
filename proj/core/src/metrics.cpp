#include "maskdepth/metrics.hpp"

#include <cmath>

namespace maskdepth {

void EvalProtocol::validate() const {
  if (!(cap_min > 0.0 && cap_min < cap)) throw ConfigError("eval protocol needs 0 < cap_min < cap");
}

namespace {

template <class T>
DepthMetrics compute(const Matrix<T>& pred, const Matrix<T>& gt, const Mask& valid, const EvalProtocol& protocol) {
  protocol.validate();
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols() || valid.rows() != gt.rows() ||
      valid.cols() != gt.cols()) {
    throw ShapeError("depth_metrics: pred " + shape_of(pred) + ", gt " + shape_of(gt) + ", valid " +
                     shape_of(valid));
  }
  const Mask use = valid && gt.array() > T(0);
  const Eigen::Index n = use.count();
  if (n == 0) throw DataError("depth_metrics: no valid pixels");

  Eigen::ArrayXd p(n);
  Eigen::ArrayXd g(n);
  // Row-major storage: element i of data() is pixel i in every map.
  for (Eigen::Index i = 0, j = 0; i < use.size(); ++i) {
    if (!use.data()[i]) continue;
    p(j) = static_cast<double>(pred.data()[i]);
    g(j) = static_cast<double>(gt.data()[i]);
    ++j;
  }
  p = p.cwiseMax(protocol.cap_min).cwiseMin(protocol.cap);
  g = g.cwiseMax(protocol.cap_min).cwiseMin(protocol.cap);

  const Eigen::ArrayXd diff = p - g;
  const Eigen::ArrayXd log_diff = p.log() - g.log();
  const Eigen::ArrayXd ratio = (p / g).max(g / p);
  const double count = static_cast<double>(n);

  DepthMetrics m;
  m.abs_rel = (diff.abs() / g).mean();
  m.sq_rel = (diff.square() / g).mean();
  m.rmse = std::sqrt(diff.square().mean());
  m.rmse_log = std::sqrt(log_diff.square().mean());
  m.log10 = (p.log10() - g.log10()).abs().mean();
  m.delta1 = static_cast<double>((ratio < 1.25).count()) / count;
  m.delta2 = static_cast<double>((ratio < 1.25 * 1.25).count()) / count;
  m.delta3 = static_cast<double>((ratio < 1.25 * 1.25 * 1.25).count()) / count;
  return m;
}

}  // namespace

DepthMetrics depth_metrics(const Matrix<float>& pred, const Matrix<float>& gt, const Mask& valid,
                           const EvalProtocol& protocol) {
  return compute(pred, gt, valid, protocol);
}

DepthMetrics depth_metrics(const Matrix<double>& pred, const Matrix<double>& gt, const Mask& valid,
                           const EvalProtocol& protocol) {
  return compute(pred, gt, valid, protocol);
}

DepthMetrics depth_metrics_reference(const Matrix<double>& pred, const Matrix<double>& gt, const Mask& valid,
                                     const EvalProtocol& protocol) {
  protocol.validate();
  double abs_rel = 0, sq_rel = 0, sq = 0, sq_log = 0, log10 = 0;
  long d1 = 0, d2 = 0, d3 = 0, n = 0;
  for (Eigen::Index y = 0; y < gt.rows(); ++y) {
    for (Eigen::Index x = 0; x < gt.cols(); ++x) {
      if (!valid(y, x) || !(gt(y, x) > 0.0)) continue;
      const double p = std::min(std::max(pred(y, x), protocol.cap_min), protocol.cap);
      const double g = std::min(std::max(gt(y, x), protocol.cap_min), protocol.cap);
      abs_rel += std::abs(p - g) / g;
      sq_rel += (p - g) * (p - g) / g;
      sq += (p - g) * (p - g);
      sq_log += (std::log(p) - std::log(g)) * (std::log(p) - std::log(g));
      log10 += std::abs(std::log10(p) - std::log10(g));
      const double r = std::max(p / g, g / p);
      d1 += r < 1.25;
      d2 += r < 1.25 * 1.25;
      d3 += r < 1.25 * 1.25 * 1.25;
      ++n;
    }
  }
  if (n == 0) throw DataError("depth_metrics: no valid pixels");
  const auto c = static_cast<double>(n);
  return {abs_rel / c, sq_rel / c, std::sqrt(sq / c), std::sqrt(sq_log / c), log10 / c, d1 / c, d2 / c, d3 / c};
}

DepthMetrics mean_metrics(std::span<const DepthMetrics> per_image) {
  if (per_image.empty()) throw DataError("no metrics to average");
  DepthMetrics out;
  for (const auto& m : per_image) {
    out.abs_rel += m.abs_rel;
    out.sq_rel += m.sq_rel;
    out.rmse += m.rmse;
    out.rmse_log += m.rmse_log;
    out.log10 += m.log10;
    out.delta1 += m.delta1;
    out.delta2 += m.delta2;
    out.delta3 += m.delta3;
  }
  const auto c = static_cast<double>(per_image.size());
  out.abs_rel /= c;
  out.sq_rel /= c;
  out.rmse /= c;
  out.rmse_log /= c;
  out.log10 /= c;
  out.delta1 /= c;
  out.delta2 /= c;
  out.delta3 /= c;
  return out;
}

DepthMetrics evaluate(const Model<float>& model, std::span<const Sample> samples, const EvalProtocol& protocol) {
  std::vector<DepthMetrics> per_image;
  for (const auto& s : samples) {
    if (!s.depth) continue;
    const ForwardOutput<float> out = model.forward(s.image, nullptr, nullptr);
    per_image.push_back(depth_metrics(out.prediction.depth, s.depth->values, s.depth->valid, protocol));
  }
  if (per_image.empty()) throw DataError("evaluation set has no labeled samples");
  return mean_metrics(per_image);
}

}  // namespace maskdepth
