#include "commands.hpp"

#include <iostream>
#include <set>

#include <nlohmann/json.hpp>

#include "manifest.hpp"
#include "maskdepth/ablation.hpp"
#include "maskdepth/checkpoint.hpp"
#include "maskdepth/data.hpp"
#include "maskdepth/metrics.hpp"
#include "maskdepth/trainer.hpp"
#include "maskdepth/verify.hpp"

namespace maskdepth::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

ordered_json metrics_json(const DepthMetrics& m) {
  ordered_json j;
  j["abs_rel"] = m.abs_rel;
  j["sq_rel"] = m.sq_rel;
  j["rmse"] = m.rmse;
  j["rmse_log"] = m.rmse_log;
  j["delta1"] = m.delta1;
  j["delta2"] = m.delta2;
  j["delta3"] = m.delta3;
  j["log10"] = m.log10;
  return j;
}

TrainConfig resolve_config(const std::optional<fs::path>& file, const TrainOverrides& o, TrainConfig base = {}) {
  TrainConfig cfg = file ? load_config(*file, base) : base;
  if (o.steps) cfg.steps = *o.steps;
  if (o.seed) cfg.seed = *o.seed;
  if (o.batch_size) cfg.batch_size = *o.batch_size;
  if (o.lambda_dc) cfg.lambda_dc = *o.lambda_dc;
  if (o.lambda_uc) cfg.lambda_uc = *o.lambda_uc;
  if (o.lambda_fc) cfg.lambda_fc = *o.lambda_fc;
  if (o.strong_K) cfg.strong_K = *o.strong_K;
  if (o.lr_encoder) cfg.lr_encoder = *o.lr_encoder;
  if (o.lr_decoder) cfg.lr_decoder = *o.lr_decoder;
  if (o.eval_every) cfg.eval_every = *o.eval_every;
  cfg.validate();
  return cfg;
}

bool has_entries(const fs::path& dir) {
  std::error_code ec;
  return fs::is_directory(dir, ec) && fs::directory_iterator(dir) != fs::directory_iterator();
}

}  // namespace

int cmd_gen_data(const GenDataOptions& o) {
  if (o.n_labeled < 0 || o.n_unlabeled < 0) throw UsageError("sample counts must be non-negative");
  if (has_entries(o.out) && !o.force) {
    throw UsageError("output directory " + o.out.string() + " exists and is not empty (use --force)");
  }
  SceneConfig scene;
  scene.height = o.height;
  scene.width = o.width;
  scene.d_min = o.d_min;
  scene.d_max = o.d_max;
  scene.min_objects = o.min_objects;
  scene.max_objects = o.max_objects;
  scene.texture_noise = o.texture_noise;
  scene.texture_seed = o.texture_seed;
  scene.validate();
  if (!(o.density > 0.0 && o.density <= 1.0)) throw ConfigError("--density must be in (0, 1]");

  RunManifest manifest;
  manifest.command = "gen-data";
  manifest.seed = o.seed;
  manifest.started = utc_timestamp();
  manifest.config = {{"n_labeled", o.n_labeled},     {"n_unlabeled", o.n_unlabeled},
                     {"seed", o.seed},               {"height", o.height},
                     {"width", o.width},             {"d_min", o.d_min},
                     {"d_max", o.d_max},             {"min_objects", o.min_objects},
                     {"max_objects", o.max_objects}, {"texture_noise", o.texture_noise},
                     {"texture_seed", o.texture_seed}, {"density", o.density}};
  manifest.outputs = {{"images", (o.out / "images").string()}, {"depth", (o.out / "depth").string()}};
  fs::create_directories(o.out);
  write_manifest(o.out / "manifest.json", manifest);

  // --force replaces only what this command owns.
  fs::remove_all(o.out / "images");
  fs::remove_all(o.out / "depth");

  const Rng root(o.seed);
  const int total = o.n_labeled + o.n_unlabeled;
  for (int i = 0; i < total; ++i) {
    Rng rng = root.derive(static_cast<std::uint64_t>(i));
    Scene s = generate_scene(scene, rng);
    const std::string id = sample_id(static_cast<std::size_t>(i));
    if (i < o.n_labeled) {
      const SparseDepth<float> depth = sparsify(s.depth, o.density, rng);
      write_sample(o.out, id, s.image, &depth);
    } else {
      write_sample(o.out, id, s.image, nullptr);
    }
  }
  manifest.finished = utc_timestamp();
  write_manifest(o.out / "manifest.json", manifest);
  std::cout << ordered_json{{"images", total}, {"labeled", o.n_labeled}, {"out", o.out.string()}}.dump() << "\n";
  return kOk;
}

int cmd_train(const TrainOptions& o) {
  const TrainConfig cfg = resolve_config(o.config, o.overrides);
  const std::vector<Sample> train = read_all(load_dataset(o.data));
  std::vector<Sample> eval;
  if (o.eval_data) eval = read_all(load_dataset(*o.eval_data));

  RunManifest manifest;
  manifest.command = "train";
  manifest.seed = cfg.seed;
  manifest.started = utc_timestamp();
  manifest.config = ordered_json::parse(to_json(cfg));
  manifest.outputs = {{"log", (o.out / "log.jsonl").string()}, {"checkpoint", (o.out / "checkpoint.bin").string()}};
  fs::create_directories(o.out);
  write_manifest(o.out / "manifest.json", manifest);

  FitOptions fit_options;
  fit_options.out_dir = o.out;
  fit_options.resume = o.resume;
  fit_options.echo = o.verbose ? &std::cout : nullptr;
  const FitResult result = fit(cfg, train, eval, fit_options);

  manifest.finished = utc_timestamp();
  write_manifest(o.out / "manifest.json", manifest);
  ordered_json summary;
  summary["steps"] = result.steps_done;
  summary["checkpoint"] = result.checkpoint.string();
  if (result.last) summary["total"] = result.last->losses.total;
  if (result.final_metrics) summary["metrics"] = metrics_json(*result.final_metrics);
  std::cout << summary.dump() << "\n";
  return kOk;
}

int cmd_eval(const EvalOptions& o) {
  const EvalProtocol protocol{o.cap};
  protocol.validate();
  RunManifest manifest;
  manifest.command = "eval";
  manifest.started = utc_timestamp();
  manifest.config = {{"ckpt", o.ckpt.string()}, {"data", o.data.string()}, {"cap", o.cap}};
  if (o.manifest) write_manifest(*o.manifest, manifest);

  const Checkpoint ckpt = load_checkpoint(o.ckpt);
  const Model<float> model = model_from_checkpoint(ckpt);
  const std::vector<Sample> samples = read_all(load_dataset(o.data));
  DepthMetrics metrics;
  try {
    metrics = evaluate(model, samples, protocol);
  } catch (const ShapeError& e) {
    throw DataError(std::string("evaluation data does not fit the model: ") + e.what());
  }
  std::cout << metrics_json(metrics).dump() << "\n";
  if (o.manifest) {
    manifest.finished = utc_timestamp();
    write_manifest(*o.manifest, manifest);
  }
  return kOk;
}

int cmd_verify(const VerifyOptions& o) {
  const std::set<std::string> suites{"masking", "gradcheck", "metrics", "all"};
  if (!suites.contains(o.suite)) throw UsageError("unknown suite '" + o.suite + "'");
  RunManifest manifest;
  manifest.command = "verify";
  manifest.started = utc_timestamp();
  manifest.config = {{"suite", o.suite}};
  if (o.manifest) write_manifest(*o.manifest, manifest);

  std::vector<CheckResult> results;
  const auto add = [&](std::vector<CheckResult> r) { results.insert(results.end(), r.begin(), r.end()); };
  if (o.suite == "masking" || o.suite == "all") add(verify_masking());
  if (o.suite == "gradcheck" || o.suite == "all") add(verify_gradcheck());
  if (o.suite == "metrics" || o.suite == "all") add(verify_metrics());

  int failed = 0;
  for (const auto& r : results) {
    failed += !r.passed;
    ordered_json j{{"suite", r.suite},       {"check", r.name},         {"passed", r.passed},
                   {"measured", r.measured}, {"threshold", r.threshold}};
    if (!r.detail.empty()) j["detail"] = r.detail;
    std::cout << j.dump() << "\n";
  }
  std::cout << ordered_json{{"checks", results.size()}, {"failed", failed}}.dump() << "\n";
  if (o.manifest) {
    manifest.finished = utc_timestamp();
    write_manifest(*o.manifest, manifest);
  }
  return failed == 0 ? kOk : kNumeric;
}

int cmd_mask_demo(const MaskDemoOptions& o) {
  RunManifest manifest;
  manifest.command = "mask-demo";
  manifest.seed = o.demo.seed;
  manifest.started = utc_timestamp();
  manifest.config = {{"image", o.demo.image.string()}, {"k", o.demo.k},         {"seed", o.demo.seed},
                     {"naive", o.demo.naive},          {"scale", o.demo.scale}};
  if (o.demo.ckpt) manifest.config["ckpt"] = o.demo.ckpt->string();
  manifest.outputs = {{"panel", o.demo.out.string()}};
  fs::path manifest_path = o.manifest.value_or(fs::path(o.demo.out.string() + ".manifest.json"));
  write_manifest(manifest_path, manifest);

  const DemoSummary s = run_mask_demo(o.demo);
  manifest.finished = utc_timestamp();
  write_manifest(manifest_path, manifest);
  std::cout << ordered_json{{"out", o.demo.out.string()},
                            {"panels", s.panels},
                            {"panel_width", s.panel_width},
                            {"non_empty_subsets", s.non_empty_subsets},
                            {"mean_weak_depth", s.mean_weak_depth},
                            {"mean_strong_depth", s.mean_strong_depth},
                            {"max_abs_diff", s.max_abs_diff}}
                   .dump()
            << "\n";
  return kOk;
}

int cmd_ablate(const AblateOptions& o) {
  AblationAxis axis;
  if (o.axis == "loss") {
    axis = AblationAxis::loss;
  } else if (o.axis == "k") {
    axis = AblationAxis::k;
  } else if (o.axis == "head") {
    axis = AblationAxis::head;
  } else {
    throw UsageError("unknown axis '" + o.axis + "'");
  }
  if (o.seeds.empty()) throw UsageError("--seeds needs at least one seed");
  const TrainConfig base = resolve_config(o.config, o.overrides);

  DeskBenchmark bench;
  bench.n_labeled = o.n_labeled;
  bench.n_unlabeled = o.n_unlabeled;
  bench.n_eval = o.n_eval;
  bench.label_density = o.density;
  bench.data_seed = o.data_seed;

  RunManifest manifest;
  manifest.command = "ablate";
  manifest.seed = base.seed;
  manifest.started = utc_timestamp();
  manifest.config = ordered_json::parse(to_json(base));
  manifest.config["axis"] = o.axis;
  manifest.config["seeds"] = o.seeds;
  manifest.config["k_values"] = o.k_values;
  manifest.config["n_labeled"] = o.n_labeled;
  manifest.config["n_unlabeled"] = o.n_unlabeled;
  manifest.config["n_eval"] = o.n_eval;
  manifest.config["density"] = o.density;
  manifest.config["data_seed"] = o.data_seed;
  manifest.outputs = {{"results", (o.out / "results.jsonl").string()},
                      {"summary", (o.out / "summary.json").string()}};
  fs::create_directories(o.out);
  write_manifest(o.out / "manifest.json", manifest);

  const DeskData data = make_desk_data(bench);
  const auto variants = ablation_variants(axis, base.strong_K, o.k_values);
  std::vector<AblationRun> runs;
  std::string lines;
  for (const auto& v : variants) {
    for (const std::uint64_t seed : o.seeds) {
      const fs::path run_dir = o.out / "runs" / (v.name + "_seed" + std::to_string(seed));
      const AblationRun run = run_variant(v, base, seed, data, run_dir);
      runs.push_back(run);
      ordered_json j{{"variant", run.variant}, {"seed", run.seed}, {"seconds", run.seconds}};
      j["metrics"] = metrics_json(run.metrics);
      lines += j.dump() + "\n";
      std::cout << j.dump() << std::endl;
      write_atomic(o.out / "results.jsonl", lines);
    }
  }
  ordered_json summary = ordered_json::array();
  for (const auto& v : variants) summary.push_back({{"variant", v.name}, {"median_abs_rel", median_abs_rel(runs, v.name)}});
  write_atomic(o.out / "summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump() << "\n";
  manifest.finished = utc_timestamp();
  write_manifest(o.out / "manifest.json", manifest);
  return kOk;
}

}  // namespace maskdepth::cli
