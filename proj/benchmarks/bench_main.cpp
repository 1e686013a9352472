#include <benchmark/benchmark.h>

#include <vector>

#include "maskdepth/data.hpp"
#include "maskdepth/encoder.hpp"
#include "maskdepth/masking.hpp"
#include "maskdepth/model.hpp"
#include "maskdepth/trainer.hpp"

namespace {

using namespace maskdepth;

Matrix<float> random_matrix(int rows, int cols, Rng& rng) {
  Matrix<float> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.normal());
  return m;
}

// args: tokens, subsets (0 = no mask)
void BM_MaskedAttention(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const int k = static_cast<int>(state.range(1));
  Rng rng(1);
  const Matrix<float> q = random_matrix(n, 64, rng);
  const Matrix<float> kk = random_matrix(n, 64, rng);
  const Matrix<float> v = random_matrix(n, 64, rng);
  AttentionMask mask;
  if (k > 0) mask = build_attention_mask(sample_partition(n, k, rng));
  const AttentionOptions opts;
  for (auto _ : state) {
    benchmark::DoNotOptimize(masked_attention(q, kk, v, 4, k > 0 ? &mask : nullptr, opts));
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_MaskedAttention)->Args({128, 0})->Args({128, 1})->Args({128, 64})->Args({512, 0})->Args({512, 64});

void BM_PartitionSample(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(2);
  for (auto _ : state) {
    Partition p = sample_partition(n, 64, rng);
    benchmark::DoNotOptimize(build_attention_mask(p));
  }
}
BENCHMARK(BM_PartitionSample)->Arg(128)->Arg(960);

void BM_ModelForward(benchmark::State& state) {
  const bool masked = state.range(0) != 0;
  Model<float> model(ModelConfig::desk());
  model.init(3);
  Rng rng(4);
  const Scene scene = generate_scene(SceneConfig{}, rng);
  const Partition part = sample_partition(model.config().num_tokens(), 64, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.forward(scene.image, masked ? &part : nullptr, nullptr));
  }
}
BENCHMARK(BM_ModelForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  TrainConfig cfg;
  const bool semi = state.range(0) != 0;
  if (!semi) cfg.lambda_dc = cfg.lambda_uc = cfg.lambda_fc = 0.0;
  Rng rng(5);
  std::vector<Sample> samples;
  for (int i = 0; i < 16; ++i) {
    Scene s = generate_scene(SceneConfig{}, rng);
    Sample sample{sample_id(i), s.image, std::nullopt};
    if (i < 2 || !semi) sample.depth = sparsify(s.depth, 1.0, rng);
    samples.push_back(std::move(sample));
  }
  std::vector<const Sample*> labeled;
  std::vector<const Sample*> unlabeled;
  for (const auto& s : samples) (s.depth ? labeled : unlabeled).push_back(&s);
  Model<float> model(cfg.model_config());
  model.init(cfg.seed);
  Adam adam(cfg.adam_config());
  std::uint64_t step = 0;
  for (auto _ : state) {
    const Batch batch = compose_batch(labeled, unlabeled, cfg, step);
    benchmark::DoNotOptimize(train_step(model, adam, batch, cfg, step));
    ++step;
  }
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
