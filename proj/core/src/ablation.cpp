#include "maskdepth/ablation.hpp"

#include <algorithm>
#include <chrono>

namespace maskdepth {

DeskData make_desk_data(const DeskBenchmark& bench) {
  const Rng root(bench.data_seed);
  DeskData data;
  const auto make = [&](std::uint64_t stream, int index, bool labeled) {
    Rng rng = root.derive(stream, static_cast<std::uint64_t>(index));
    Scene scene = generate_scene(bench.scene, rng);
    Sample s;
    s.id = sample_id(static_cast<std::size_t>(index));
    s.image = std::move(scene.image);
    if (labeled) s.depth = sparsify(scene.depth, bench.label_density, rng);
    return s;
  };
  for (int i = 0; i < bench.n_labeled; ++i) data.train.push_back(make(1, i, true));
  for (int i = 0; i < bench.n_unlabeled; ++i) data.train.push_back(make(2, i, false));
  for (int i = 0; i < bench.n_eval; ++i) {
    Rng rng = root.derive(3, static_cast<std::uint64_t>(i));
    Scene scene = generate_scene(bench.scene, rng);
    Sample s;
    s.id = sample_id(static_cast<std::size_t>(i));
    s.image = std::move(scene.image);
    s.depth = SparseDepth<float>{scene.depth, Mask::Constant(scene.depth.rows(), scene.depth.cols(), true)};
    data.eval.push_back(std::move(s));
  }
  return data;
}

TrainConfig AblationVariant::apply(TrainConfig base) const {
  base.lambda_dc = lambda_dc;
  base.lambda_uc = lambda_uc;
  base.lambda_fc = lambda_fc;
  base.strong_K = strong_K;
  base.predictor_head = head;
  return base;
}

std::vector<AblationVariant> ablation_variants(AblationAxis axis, int strong_K, const std::vector<int>& k_values) {
  switch (axis) {
    case AblationAxis::loss:
      return {
          {"baseline", 0, 0, 0, 1, PredictorKind::mlp, true},
          {"D", 1, 0, 0, strong_K, PredictorKind::mlp, false},
          {"D+U", 1, 1, 0, strong_K, PredictorKind::mlp, false},
          {"D+U+F", 1, 1, 1, strong_K, PredictorKind::mlp, false},
      };
    case AblationAxis::k: {
      std::vector<AblationVariant> out;
      for (int k : k_values) out.push_back({"K=" + std::to_string(k), 1, 1, 1, k, PredictorKind::mlp, false});
      return out;
    }
    case AblationAxis::head:
      return {
          {"no head", 1, 1, 1, strong_K, PredictorKind::none, false},
          {"MLP", 1, 1, 1, strong_K, PredictorKind::mlp, false},
      };
  }
  return {};
}

AblationRun run_variant(const AblationVariant& variant, const TrainConfig& base, std::uint64_t seed,
                        const DeskData& data, const std::filesystem::path& out_dir) {
  TrainConfig cfg = variant.apply(base);
  cfg.seed = seed;
  std::vector<Sample> labeled_only;
  std::span<const Sample> train = data.train;
  if (variant.labeled_only) {
    for (const auto& s : data.train) {
      if (s.depth) labeled_only.push_back(s);
    }
    train = labeled_only;
  }
  FitOptions options;
  options.out_dir = out_dir;
  const auto start = std::chrono::steady_clock::now();
  const FitResult result = fit(cfg, train, data.eval, options);
  AblationRun run;
  run.variant = variant.name;
  run.seed = seed;
  run.metrics = *result.final_metrics;
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

double median_abs_rel(const std::vector<AblationRun>& runs, const std::string& variant) {
  std::vector<double> values;
  for (const auto& r : runs) {
    if (r.variant == variant) values.push_back(r.metrics.abs_rel);
  }
  if (values.empty()) throw DataError("no runs for variant " + variant);
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace maskdepth
