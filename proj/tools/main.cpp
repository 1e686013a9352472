#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "maskdepth/common.hpp"

namespace {

using namespace maskdepth::cli;

void add_overrides(CLI::App* app, TrainOverrides& o) {
  app->add_option("--steps", o.steps, "Training steps");
  app->add_option("--seed", o.seed, "Training seed");
  app->add_option("--batch-size", o.batch_size, "Images per step");
  app->add_option("--lambda-dc", o.lambda_dc, "Depth consistency weight");
  app->add_option("--lambda-uc", o.lambda_uc, "Uncertainty weight");
  app->add_option("--lambda-fc", o.lambda_fc, "Feature consistency weight");
  app->add_option("--strong-k", o.strong_K, "Subsets for the strong branch");
  app->add_option("--lr-encoder", o.lr_encoder, "Encoder learning rate");
  app->add_option("--lr-decoder", o.lr_decoder, "Decoder learning rate");
  app->add_option("--eval-every", o.eval_every, "Evaluate every N steps (0 = end only)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MaskingDepth: semi-supervised monocular depth with K-way disjoint masking"};
  app.set_version_flag("--version", std::string(MASKDEPTH_VERSION));
  app.require_subcommand(1);

  GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--n-labeled", gen.n_labeled, "Samples with depth");
  gen_cmd->add_option("--n-unlabeled", gen.n_unlabeled, "Samples without depth");
  gen_cmd->add_option("--seed", gen.seed, "Scene seed");
  gen_cmd->add_flag("--force", gen.force, "Overwrite an existing dataset");
  gen_cmd->add_option("--height", gen.height, "Image height");
  gen_cmd->add_option("--width", gen.width, "Image width");
  gen_cmd->add_option("--d-min", gen.d_min, "Nearest depth");
  gen_cmd->add_option("--d-max", gen.d_max, "Farthest depth");
  gen_cmd->add_option("--min-objects", gen.min_objects, "Fewest objects per scene");
  gen_cmd->add_option("--max-objects", gen.max_objects, "Most objects per scene");
  gen_cmd->add_option("--texture-noise", gen.texture_noise, "Per-pixel colour noise");
  gen_cmd->add_option("--texture-seed", gen.texture_seed, "Appearance-only seed");
  gen_cmd->add_option("--density", gen.density, "Fraction of labeled pixels kept");

  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", train.config, "JSON config file")->check(CLI::ExistingFile);
  train_cmd->add_option("--data", train.data, "Dataset directory")->required();
  train_cmd->add_option("--out", train.out, "Run directory")->required();
  train_cmd->add_option("--resume", train.resume, "Checkpoint to resume from");
  train_cmd->add_option("--eval-data", train.eval_data, "Labeled dataset for evaluation");
  train_cmd->add_flag("-v,--verbose", train.verbose, "Echo log lines to stdout");
  add_overrides(train_cmd, train.overrides);

  EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--ckpt", eval.ckpt, "Checkpoint")->required();
  eval_cmd->add_option("--data", eval.data, "Labeled dataset")->required();
  eval_cmd->add_option("--cap", eval.cap, "Depth cap in metres");
  eval_cmd->add_option("--manifest", eval.manifest, "Write a run manifest here");

  VerifyOptions verify;
  auto* verify_cmd = app.add_subcommand("verify", "Run the property suites");
  verify_cmd->add_option("--suite", verify.suite, "masking|gradcheck|metrics|all")
      ->check(CLI::IsMember({"masking", "gradcheck", "metrics", "all"}));
  verify_cmd->add_option("--manifest", verify.manifest, "Write a run manifest here");

  MaskDemoOptions demo;
  auto* demo_cmd = app.add_subcommand("mask-demo", "Render a partition and both branches");
  demo_cmd->add_option("--image", demo.demo.image, "Input PNG")->required();
  demo_cmd->add_option("--k", demo.demo.k, "Number of subsets");
  demo_cmd->add_option("--seed", demo.demo.seed, "Partition seed");
  demo_cmd->add_option("--out", demo.demo.out, "Output PNG")->required();
  demo_cmd->add_option("--ckpt", demo.demo.ckpt, "Checkpoint (random init otherwise)");
  demo_cmd->add_flag("--naive", demo.demo.naive, "Drop odd subsets instead of masking attention");
  demo_cmd->add_option("--scale", demo.demo.scale, "Upscale factor")->check(CLI::PositiveNumber);
  demo_cmd->add_option("--diff-scale", demo.demo.diff_full_scale, "Metres shown as full white in the diff");
  demo_cmd->add_option("--manifest", demo.manifest, "Manifest path (default <out>.manifest.json)");

  AblateOptions ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "Run an ablation on the desk benchmark");
  ablate_cmd->add_option("--axis", ablate.axis, "loss|k|head")->check(CLI::IsMember({"loss", "k", "head"}));
  ablate_cmd->add_option("--out", ablate.out, "Output directory")->required();
  ablate_cmd->add_option("--config", ablate.config, "Base JSON config")->check(CLI::ExistingFile);
  ablate_cmd->add_option("--seeds", ablate.seeds, "Training seeds");
  ablate_cmd->add_option("--k-values", ablate.k_values, "K values for the k axis");
  ablate_cmd->add_option("--n-labeled", ablate.n_labeled, "Labeled training samples");
  ablate_cmd->add_option("--n-unlabeled", ablate.n_unlabeled, "Unlabeled training samples");
  ablate_cmd->add_option("--n-eval", ablate.n_eval, "Evaluation samples");
  ablate_cmd->add_option("--density", ablate.density, "Fraction of labeled pixels kept");
  ablate_cmd->add_option("--data-seed", ablate.data_seed, "Benchmark data seed");
  add_overrides(ablate_cmd, ablate.overrides);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_data(gen);
    if (train_cmd->parsed()) return cmd_train(train);
    if (eval_cmd->parsed()) return cmd_eval(eval);
    if (verify_cmd->parsed()) return cmd_verify(verify);
    if (demo_cmd->parsed()) return cmd_mask_demo(demo);
    if (ablate_cmd->parsed()) return cmd_ablate(ablate);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const maskdepth::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const maskdepth::ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kUsage;
  } catch (const maskdepth::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const maskdepth::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const maskdepth::EmptySupervisionError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
