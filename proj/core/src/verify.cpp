#include "maskdepth/verify.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "maskdepth/encoder.hpp"
#include "maskdepth/losses.hpp"
#include "maskdepth/masking.hpp"
#include "maskdepth/metrics.hpp"
#include "maskdepth/model.hpp"

namespace maskdepth {

double relative_error(const Matrix<double>& analytic, const Matrix<double>& numeric, double floor) {
  if (analytic.rows() != numeric.rows() || analytic.cols() != numeric.cols()) {
    throw ShapeError("relative_error: " + shape_of(analytic) + " vs " + shape_of(numeric));
  }
  const double scale = std::max({analytic.norm(), numeric.norm(), floor});
  return (analytic - numeric).norm() / scale;
}

Matrix<double> numeric_gradient(const std::function<double()>& f, Matrix<double>& x, double h) {
  Matrix<double> g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    x.data()[i] = saved + h;
    const double up = f();
    x.data()[i] = saved - h;
    const double down = f();
    x.data()[i] = saved;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

namespace {

CheckResult bound(std::string suite, std::string name, double measured, double threshold, std::string detail = {}) {
  return {std::move(suite), std::move(name), measured <= threshold, measured, threshold, std::move(detail)};
}

template <class T>
Matrix<T> random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.normal(0.0, scale));
  return m;
}

template <class T>
double max_diff(const EncodedTokens<T>& a, const EncodedTokens<T>& b) {
  double worst = (a.final - b.final).cwiseAbs().maxCoeff();
  for (std::size_t i = 0; i < a.skips.size(); ++i) {
    worst = std::max(worst, static_cast<double>((a.skips[i] - b.skips[i]).cwiseAbs().maxCoeff()));
  }
  return worst;
}

// Counts broken partition invariants; 0 means the partition is consistent.
int partition_violations(const Partition& part) {
  int bad = 0;
  const int n = part.n;
  std::vector<int> seen(static_cast<std::size_t>(n), 0);
  for (int p = 0; p < n; ++p) {
    const int s = part.perm[p];
    if (s < 0 || s >= n) return 1;
    ++seen[s];
    bad += part.inv_perm[s] != p;
  }
  bad += static_cast<int>(std::count_if(seen.begin(), seen.end(), [](int c) { return c != 1; }));
  bad += static_cast<int>(part.split_points.size()) != part.k + 1;
  bad += part.split_points.front() != 0 || part.split_points.back() != n;
  bad += !std::is_sorted(part.split_points.begin(), part.split_points.end());

  std::fill(seen.begin(), seen.end(), 0);
  int total = 0;
  for (int k = 0; k < part.k; ++k) {
    total += static_cast<int>(part.subsets[k].size());
    bad += static_cast<int>(part.subsets[k].size()) != part.subset_size(k);
    for (int s : part.subsets[k]) ++seen[s];
  }
  bad += total != n;
  bad += static_cast<int>(std::count_if(seen.begin(), seen.end(), [](int c) { return c != 1; }));

  const AttentionMask mask = build_attention_mask(part);
  const std::vector<int> owner = part.subset_of_position();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) bad += mask.allowed(i, j) != (owner[i] == owner[j]);
  }
  return bad;
}

}  // namespace

std::vector<CheckResult> verify_masking(const MaskingSuiteOptions& options) {
  std::vector<CheckResult> out;
  Rng rng(options.seed);

  double worst32 = 0.0;
  double worst64 = 0.0;
  const int d_choices[] = {16, 32, 64};
  for (int c = 0; c < options.oracle_configs; ++c) {
    const auto n = static_cast<int>(rng.uniform_int(8, 64));
    const int d = d_choices[rng.uniform_int(0, 2)];
    const auto depth = static_cast<int>(rng.uniform_int(1, 3));
    const auto k = static_cast<int>(rng.uniform_int(1, 8));
    EncoderConfig cfg;
    cfg.d_model = d;
    cfg.depth = depth;
    cfg.heads = d / 8;
    cfg.skip_blocks.clear();
    for (int b = 0; b < depth; ++b) cfg.skip_blocks.push_back(b);

    const std::uint64_t init_seed = rng.next_u64();
    Encoder<double> enc64(cfg);
    Encoder<float> enc32(cfg);
    Rng init64(init_seed);
    Rng init32(init_seed);
    enc64.init(init64);
    enc32.init(init32);

    TokenSequence<double> seq64{random_matrix<double>(n, d, rng), 1, n, 1, std::nullopt};
    TokenSequence<float> seq32{seq64.tokens.cast<float>(), 1, n, 1, std::nullopt};
    const Partition part = sample_partition(n, k, rng);

    worst64 = std::max(worst64, max_diff(encode_masked(enc64, seq64, part), encode_subsets_oracle(enc64, seq64, part)));
    worst32 = std::max(worst32, max_diff(encode_masked(enc32, seq32, part), encode_subsets_oracle(enc32, seq32, part)));
  }
  const std::string configs = std::to_string(options.oracle_configs) + " configs";
  out.push_back(bound("masking", "subset_independence_fp32", worst32, 1e-5, configs));
  out.push_back(bound("masking", "subset_independence_fp64", worst64, 1e-10, configs));

  {
    // K=1 through the full model, and through the shuffled encoder path.
    ModelConfig mc = ModelConfig::desk();
    Model<float> model(mc);
    model.init(options.seed);
    ImageTensor image(3, mc.image_height, mc.image_width);
    for (Eigen::Index i = 0; i < image.data.size(); ++i) image.data.data()[i] = static_cast<float>(rng.uniform());
    const Partition one = sample_partition(mc.num_tokens(), 1, rng);
    const auto plain = model.forward(image, nullptr, nullptr);
    const auto masked = model.forward(image, &one, nullptr);
    const double diff = std::max((plain.prediction.depth - masked.prediction.depth).cwiseAbs().maxCoeff(),
                                 (plain.features - masked.features).cwiseAbs().maxCoeff());
    out.push_back(bound("masking", "k1_neutrality_model", diff, 1e-6));

    const Model<double> model64 = model.cast<double>();
    TokenSequence<double> seq{model64.embedding.forward(patchify(image.cast<double>(), mc.patch_size)),
                              mc.grid_rows(), mc.grid_cols(), mc.patch_size, std::nullopt};
    const double enc_diff = max_diff(encode_masked(model64.encoder, seq, one), encode(model64.encoder, seq, nullptr));
    out.push_back(bound("masking", "k1_neutrality_shuffled_encoder_fp64", enc_diff, 1e-10));
  }

  long violations = 0;
  for (int i = 0; i < options.partitions; ++i) {
    const auto n = static_cast<int>(rng.uniform_int(1, 128));
    const auto k = static_cast<int>(rng.uniform_int(1, std::min(n + 4, 160)));
    violations += partition_violations(sample_partition(n, k, rng));
  }
  out.push_back(bound("masking", "partition_invariants", static_cast<double>(violations), 0.0,
                      std::to_string(options.partitions) + " partitions"));
  return out;
}

std::vector<CheckResult> verify_gradcheck(std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  const int h = 4;
  const int w = 5;
  const double tol = 1e-3;
  const auto check = [&](const std::string& name, const Matrix<double>& analytic, const Matrix<double>& numeric) {
    out.push_back(bound("gradcheck", name, relative_error(analytic, numeric), tol));
  };

  Matrix<double> pred = random_matrix<double>(h, w, rng).array().abs() * 10.0 + 1.0;
  Matrix<double> log_u = random_matrix<double>(h, w, rng, 0.7);
  SparseDepth<double> gt{random_matrix<double>(h, w, rng).array().abs() * 10.0 + 1.0, Mask(h, w)};
  for (Eigen::Index i = 0; i < gt.valid.size(); ++i) gt.valid.data()[i] = rng.bernoulli(0.7);
  gt.valid(0, 0) = true;

  {
    const auto f = [&] { return supervised_l1(pred, gt).value; };
    check("supervised_l1/pred", supervised_l1(pred, gt).grad_pred, numeric_gradient(f, pred));
  }
  {
    const auto f = [&] { return uncertainty_nll(pred, log_u, gt).value; };
    const auto r = uncertainty_nll(pred, log_u, gt);
    check("uncertainty_nll/pred", r.grad_pred, numeric_gradient(f, pred));
    check("uncertainty_nll/log_u", r.grad_log_u, numeric_gradient(f, log_u));
  }
  for (const auto weighting : {ConsistencyWeighting::confidence, ConsistencyWeighting::literal,
                               ConsistencyWeighting::none}) {
    const std::string tag = weighting == ConsistencyWeighting::confidence ? "confidence"
                            : weighting == ConsistencyWeighting::literal  ? "literal"
                                                                          : "none";
    DepthPrediction<double> weak{random_matrix<double>(h, w, rng).array().abs() * 10.0 + 1.0,
                                 random_matrix<double>(h, w, rng, 0.7), {}};
    Matrix<double> strong = random_matrix<double>(h, w, rng).array().abs() * 10.0 + 1.0;
    const auto f = [&] { return depth_consistency(weak, strong, weighting, false).value; };
    const auto r = depth_consistency(weak, strong, weighting, false);
    check("depth_consistency_" + tag + "/strong", r.grad_pred, numeric_gradient(f, strong));
    check("depth_consistency_" + tag + "/weak_depth", r.grad_target, numeric_gradient(f, weak.depth));
    check("depth_consistency_" + tag + "/weak_log_u", r.grad_target_log_u, numeric_gradient(f, weak.log_uncertainty));
  }
  {
    Matrix<double> z_weak = random_matrix<double>(6, 8, rng);
    Matrix<double> z_pred = random_matrix<double>(6, 8, rng);
    const auto f = [&] { return feature_consistency(z_weak, z_pred, false).value; };
    const auto r = feature_consistency(z_weak, z_pred, false);
    check("feature_consistency/prediction", r.grad_pred, numeric_gradient(f, z_pred));
    check("feature_consistency/z_weak", r.grad_target, numeric_gradient(f, z_weak));

    PredictorHead<double> head(8);
    head.init(rng);
    head.fc2.weight.value = random_matrix<double>(8, 8, rng, 0.3);
    head.fc2.bias.value = random_matrix<double>(1, 8, rng, 0.3);
    Matrix<double> z_strong = random_matrix<double>(6, 8, rng);
    const auto g = [&] { return feature_consistency(z_weak, head.forward(z_strong, nullptr), false).value; };
    head.fc1.weight.zero_grad();
    head.fc1.bias.zero_grad();
    head.fc2.weight.zero_grad();
    head.fc2.bias.zero_grad();
    const auto rh = feature_consistency(z_weak, z_strong, head);
    check("feature_consistency_head/z_strong", rh.grad_pred, numeric_gradient(g, z_strong));
    check("feature_consistency_head/fc1.weight", head.fc1.weight.grad, numeric_gradient(g, head.fc1.weight.value));
    check("feature_consistency_head/fc2.weight", head.fc2.weight.grad, numeric_gradient(g, head.fc2.weight.value));
  }

  // Tiny end-to-end model: strong branch under a 3-way partition, weak
  // branch fixed as a constant target.
  {
    ModelConfig mc;
    mc.image_height = 32;
    mc.image_width = 32;
    mc.patch_size = 8;
    mc.encoder.d_model = 8;
    mc.encoder.heads = 2;
    mc.encoder.depth = 2;
    mc.encoder.mlp_ratio = 2.0;
    mc.encoder.skip_blocks = {0, 1, 1, 1};
    mc.decoder.level_widths = {4, 4, 4, 4};
    mc.decoder.fusion_width = 4;
    mc.decoder.head_width = 4;
    Model<double> model(mc);
    model.init(seed);
    for (auto* p : model.parameters()) {
      if (p->value.isZero()) p->value = random_matrix<double>(p->value.rows(), p->value.cols(), rng, 0.05);
    }
    FeatureMap<double> image(3, 32, 32);
    FeatureMap<double> weak_image(3, 32, 32);
    for (Eigen::Index i = 0; i < image.data.size(); ++i) {
      image.data.data()[i] = rng.uniform();
      weak_image.data.data()[i] = rng.uniform();
    }
    SparseDepth<double> target{random_matrix<double>(32, 32, rng).array().abs() * 20.0 + 1.0, Mask(32, 32)};
    for (Eigen::Index i = 0; i < target.valid.size(); ++i) target.valid.data()[i] = rng.bernoulli(0.5);
    const Partition part = sample_partition(mc.num_tokens(), 3, rng);
    const ForwardOutput<double> weak = model.forward(weak_image, nullptr, nullptr);

    const auto objective = [&](const ForwardOutput<double>& s) {
      return supervised_l1(s.prediction.depth, target).value +
             uncertainty_nll(s.prediction.depth, s.prediction.log_uncertainty, target).value +
             depth_consistency(weak.prediction, s.prediction.depth).value +
             feature_consistency(weak.features, model.predictor.forward(s.features, nullptr)).value;
    };
    const auto f = [&] { return objective(model.forward(image, &part, nullptr)); };

    model.zero_grad();
    Model<double>::Cache cache;
    const ForwardOutput<double> s = model.forward(image, &part, &cache);
    const auto l1 = supervised_l1(s.prediction.depth, target);
    const auto nll = uncertainty_nll(s.prediction.depth, s.prediction.log_uncertainty, target);
    const auto dc = depth_consistency(weak.prediction, s.prediction.depth);
    const auto fc = feature_consistency(weak.features, s.features, model.predictor);
    model.backward(cache, l1.grad_pred + nll.grad_pred + dc.grad_pred, nll.grad_log_u, fc.grad_pred);

    double worst = 0.0;
    std::string worst_name;
    for (auto* p : model.parameters()) {
      // A handful of coordinates per tensor keeps the check fast.
      const Eigen::Index count = std::min<Eigen::Index>(p->value.size(), 4);
      Matrix<double> analytic(1, count);
      Matrix<double> numeric(1, count);
      for (Eigen::Index c = 0; c < count; ++c) {
        const auto idx = static_cast<Eigen::Index>(rng.uniform_int(0, p->value.size() - 1));
        analytic(0, c) = p->grad.data()[idx];
        const double saved = p->value.data()[idx];
        const double step = 1e-6;
        p->value.data()[idx] = saved + step;
        const double up = f();
        p->value.data()[idx] = saved - step;
        const double down = f();
        p->value.data()[idx] = saved;
        numeric(0, c) = (up - down) / (2 * step);
      }
      const double err = relative_error(analytic, numeric, 1e-6);
      if (err > worst) {
        worst = err;
        worst_name = p->name;
      }
    }
    out.push_back(bound("gradcheck", "end_to_end_tiny_model", worst, tol, "worst tensor " + worst_name));
  }

  // Stop-gradient: every target-side gradient is exactly zero.
  {
    DepthPrediction<double> weak{random_matrix<double>(h, w, rng).array().abs() * 10.0 + 1.0,
                                 random_matrix<double>(h, w, rng).array().abs(), {}};
    const Matrix<double> strong = random_matrix<double>(h, w, rng).array().abs() * 10.0 + 1.0;
    double nonzero = 0.0;
    for (const auto weighting : {ConsistencyWeighting::confidence, ConsistencyWeighting::literal,
                                 ConsistencyWeighting::none}) {
      const auto r = depth_consistency(weak, strong, weighting, true);
      nonzero += static_cast<double>((r.grad_target.array() != 0.0).count() +
                                     (r.grad_target_log_u.array() != 0.0).count());
    }
    const auto fc = feature_consistency(random_matrix<double>(6, 8, rng), random_matrix<double>(6, 8, rng), true);
    nonzero += static_cast<double>((fc.grad_target.array() != 0.0).count());
    out.push_back(bound("gradcheck", "stop_gradient_targets_exact_zero", nonzero, 0.0));
  }
  return out;
}

std::vector<CheckResult> verify_metrics(std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const auto rows = static_cast<int>(rng.uniform_int(1, 9));
    const auto cols = static_cast<int>(rng.uniform_int(1, 9));
    Matrix<double> pred(rows, cols);
    Matrix<double> gt(rows, cols);
    Mask valid(rows, cols);
    for (Eigen::Index j = 0; j < pred.size(); ++j) {
      pred.data()[j] = rng.uniform(-1.0, 100.0);
      gt.data()[j] = rng.uniform(-1.0, 100.0);
      valid.data()[j] = rng.bernoulli(0.8);
    }
    valid(0, 0) = true;
    gt(0, 0) = rng.uniform(1.0, 50.0);
    const DepthMetrics a = depth_metrics(pred, gt, valid);
    const DepthMetrics b = depth_metrics_reference(pred, gt, valid);
    for (const double d : {a.abs_rel - b.abs_rel, a.sq_rel - b.sq_rel, a.rmse - b.rmse, a.rmse_log - b.rmse_log,
                           a.log10 - b.log10, a.delta1 - b.delta1, a.delta2 - b.delta2, a.delta3 - b.delta3}) {
      worst = std::max(worst, std::abs(d));
    }
  }
  out.push_back(bound("metrics", "vectorized_vs_loop_oracle", worst, 1e-12, "50 random instances"));

  Matrix<double> gt = (random_matrix<double>(6, 7, rng).array().abs() * 5.0 + 1.0).cwiseMin(35.0).matrix();
  const Mask all = Mask::Constant(6, 7, true);
  {
    const DepthMetrics m = depth_metrics(gt, gt, all);
    const double err = m.abs_rel + m.sq_rel + m.rmse + m.rmse_log + m.log10 + std::abs(1.0 - m.delta1) +
                       std::abs(1.0 - m.delta2) + std::abs(1.0 - m.delta3);
    out.push_back(bound("metrics", "perfect_prediction", err, 0.0));
  }
  {
    const DepthMetrics m = depth_metrics(Matrix<double>(2.0 * gt), gt, all);
    const double err = std::abs(m.abs_rel - 1.0) + m.delta1 + m.delta2 + m.delta3;
    out.push_back(bound("metrics", "double_prediction", err, 0.0));
  }
  {
    Matrix<double> p(1, 3);
    Matrix<double> g(1, 3);
    p << 1, 2, 4;
    g << 2, 2, 2;
    const DepthMetrics m = depth_metrics(p, g, Mask::Constant(1, 3, true));
    const double err = std::abs(m.abs_rel - 0.5) + std::abs(m.delta1 - 1.0 / 3.0);
    out.push_back(bound("metrics", "three_pixel_hand_case", err, 1e-15));
  }
  {
    double err = 0.0;
    for (const double c : {0.25, 0.5, 0.9, 1.1, 1.5}) {
      err = std::max(err, std::abs(depth_metrics(Matrix<double>(c * gt), gt, all).abs_rel - std::abs(c - 1.0)));
    }
    out.push_back(bound("metrics", "abs_rel_scale_sensitivity", err, 1e-12));
  }
  return out;
}

}  // namespace maskdepth
