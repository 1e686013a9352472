#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "maskdepth/png_io.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun run(const std::string& args) {
  const std::string cmd = std::string(MASKDEPTH_CLI) + " " + args + " 2>/dev/null";
  CliRun r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe) != nullptr) r.out += buf;
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

json last_json(const std::string& out) {
  std::istringstream in(out);
  std::string line, last;
  while (std::getline(in, line))
    if (!line.empty()) last = line;
  return json::parse(last);
}

std::size_t count_files(const fs::path& dir) {
  if (!fs::exists(dir)) return 0;
  return static_cast<std::size_t>(std::distance(fs::directory_iterator(dir), fs::directory_iterator()));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class Cli : public ::testing::Test {
 protected:
  static fs::path root() {
    static const fs::path dir = [] {
      const fs::path d = fs::path(::testing::TempDir()) / "maskdepth_cli";
      fs::remove_all(d);
      fs::create_directories(d);
      return d;
    }();
    return dir;
  }
  static std::string at(const std::string& name) { return (root() / name).string(); }
};

TEST_F(Cli, GenDataCountsAndPoolRatio) {
  const CliRun r = run("gen-data --out " + at("pool") + " --n-labeled 10 --n-unlabeled 70 --seed 1");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(count_files(root() / "pool" / "images"), 80u);
  EXPECT_EQ(count_files(root() / "pool" / "depth"), 10u);
  const json manifest = json::parse(slurp(root() / "pool" / "manifest.json"));
  EXPECT_EQ(manifest["command"], "gen-data");
  EXPECT_EQ(manifest["config"]["n_unlabeled"], 70);
  EXPECT_TRUE(manifest.contains("code_version"));
  EXPECT_FALSE(manifest["finished"].get<std::string>().empty());
}

TEST_F(Cli, GenDataSupervisedOnly) {
  ASSERT_EQ(run("gen-data --out " + at("sup") + " --n-labeled 3 --n-unlabeled 0").code, 0);
  EXPECT_EQ(count_files(root() / "sup" / "images"), 3u);
  EXPECT_EQ(count_files(root() / "sup" / "depth"), 3u);
}

TEST_F(Cli, GenDataRefusesNonEmptyDirectoryWithoutForce) {
  ASSERT_EQ(run("gen-data --out " + at("force") + " --n-labeled 2 --n-unlabeled 2 --seed 4").code, 0);
  const std::string before = slurp(root() / "force" / "images" / "000001.png");
  EXPECT_EQ(run("gen-data --out " + at("force") + " --n-labeled 2 --n-unlabeled 2 --seed 4").code, 1);
  ASSERT_EQ(run("gen-data --out " + at("force") + " --n-labeled 2 --n-unlabeled 1 --seed 4 --force").code, 0);
  EXPECT_EQ(count_files(root() / "force" / "images"), 3u);
  EXPECT_EQ(slurp(root() / "force" / "images" / "000001.png"), before);
}

TEST_F(Cli, GenDataSameSeedIsByteIdentical) {
  ASSERT_EQ(run("gen-data --out " + at("same_a") + " --n-labeled 3 --n-unlabeled 3 --seed 9 --density 0.3").code, 0);
  ASSERT_EQ(run("gen-data --out " + at("same_b") + " --n-labeled 3 --n-unlabeled 3 --seed 9 --density 0.3").code, 0);
  for (const auto& sub : {"images", "depth"}) {
    for (const auto& e : fs::directory_iterator(root() / "same_a" / sub)) {
      EXPECT_EQ(slurp(e.path()), slurp(root() / "same_b" / sub / e.path().filename())) << e.path();
    }
  }
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("verify --suite everything").code, 1);
  EXPECT_EQ(run("gen-data --out " + at("neg") + " --n-labeled -1").code, 1);
  std::ofstream(root() / "bad.json") << R"({"no_such_key": 1})";
  EXPECT_EQ(run("train --config " + at("bad.json") + " --data " + at("pool") + " --out " + at("bad_run")).code, 1);
}

TEST_F(Cli, TrainEvalAndResume) {
  ASSERT_EQ(run("gen-data --out " + at("tr") + " --n-labeled 4 --n-unlabeled 4 --seed 2").code, 0);
  std::ofstream(root() / "base.json") << R"({"lambda_dc": 0, "lambda_uc": 0, "lambda_fc": 0, "steps": 50, "d_model": 16,
    "heads": 2, "depth": 2, "skip_blocks": [0, 1, 1, 1], "level_widths": [4, 4, 4, 4], "fusion_width": 4,
    "head_width": 2, "patch_size": 8})";
  // flag beats file
  CliRun r = run("train --config " + at("base.json") + " --steps 2 --data " + at("tr") + " --out " + at("run"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(last_json(r.out)["steps"], 2);
  const json manifest = json::parse(slurp(root() / "run" / "manifest.json"));
  EXPECT_EQ(manifest["config"]["steps"], 2);
  EXPECT_EQ(manifest["config"]["lambda_dc"], 0.0);
  EXPECT_EQ(manifest["config"]["d_model"], 16);

  r = run("train --config " + at("base.json") + " --steps 4 --data " + at("tr") + " --out " + at("run") +
          " --resume " + at("run/checkpoint.bin"));
  ASSERT_EQ(r.code, 0);
  std::ifstream log(root() / "run" / "log.jsonl");
  std::vector<int> steps;
  for (std::string line; std::getline(log, line);) steps.push_back(json::parse(line)["step"]);
  EXPECT_EQ(steps, (std::vector<int>{1, 2, 3, 4}));

  r = run("eval --ckpt " + at("run/checkpoint.bin") + " --data " + at("tr"));
  ASSERT_EQ(r.code, 0);
  const json m = json::parse(r.out);
  for (const auto& key : {"abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3", "log10"}) {
    EXPECT_TRUE(m.contains(key)) << key;
  }
  const json m50 = json::parse(run("eval --ckpt " + at("run/checkpoint.bin") + " --data " + at("tr") + " --cap 50").out);
  EXPECT_NE(m["rmse"], m50["rmse"]);

  fs::create_directories(root() / "empty" / "images");
  EXPECT_EQ(run("eval --ckpt " + at("run/checkpoint.bin") + " --data " + at("empty")).code, 3);
  EXPECT_EQ(run("eval --ckpt " + at("run/checkpoint.bin") + " --data " + at("missing")).code, 3);
  EXPECT_EQ(run("eval --ckpt " + at("base.json") + " --data " + at("tr")).code, 3);
}

TEST_F(Cli, NonFiniteTrainingExitsTwo) {
  ASSERT_EQ(run("gen-data --out " + at("nan") + " --n-labeled 2 --n-unlabeled 0 --seed 3").code, 0);
  std::ofstream(root() / "nan.json") << R"({"lambda_dc": 0, "lambda_uc": 0, "lambda_fc": 0, "d_model": 16,
    "heads": 2, "depth": 2, "skip_blocks": [0, 1, 1, 1], "level_widths": [4, 4, 4, 4], "fusion_width": 4,
    "head_width": 2, "patch_size": 8, "d_max": 1e38, "lr_decoder": 1e30, "lr_encoder": 1e30, "steps": 20})";
  EXPECT_EQ(run("train --config " + at("nan.json") + " --data " + at("nan") + " --out " + at("nan_run")).code, 2);
}

TEST_F(Cli, VerifyMetricsSuite) {
  const CliRun r = run("verify --suite metrics --manifest " + at("verify.json"));
  EXPECT_EQ(r.code, 0);
  const json summary = last_json(r.out);
  EXPECT_EQ(summary["failed"], 0);
  EXPECT_GE(summary["checks"].get<int>(), 5);
  EXPECT_TRUE(fs::exists(root() / "verify.json"));
}

TEST_F(Cli, MaskDemoPanels) {
  ASSERT_EQ(run("gen-data --out " + at("demo") + " --n-labeled 1 --n-unlabeled 0 --seed 5").code, 0);
  const std::string image = at("demo/images/000000.png");

  CliRun r = run("mask-demo --image " + image + " --k 1 --seed 3 --scale 1 --out " + at("k1.png"));
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(json::parse(r.out)["max_abs_diff"], 0.0);
  EXPECT_TRUE(fs::exists(at("k1.png.manifest.json")));
  const auto k1 = maskdepth::read_png_rgb(at("k1.png"));
  ASSERT_EQ(k1.width, 64 * 5);
  for (int y = 0; y < k1.height; ++y)
    for (int x = 4 * 64; x < 5 * 64; ++x) ASSERT_EQ(k1.at(0, y, x), 0.0f);

  r = run("mask-demo --image " + image + " --k 64 --seed 3 --scale 1 --out " + at("k64.png"));
  ASSERT_EQ(r.code, 0);
  const int non_empty = json::parse(r.out)["non_empty_subsets"];
  const auto k64 = maskdepth::read_png_rgb(at("k64.png"));
  std::set<std::array<float, 3>> colours;
  for (int y = 0; y < k64.height; ++y)
    for (int x = 64; x < 128; ++x) colours.insert({k64.at(0, y, x), k64.at(1, y, x), k64.at(2, y, x)});
  EXPECT_EQ(static_cast<int>(colours.size()), non_empty);

  r = run("mask-demo --image " + image + " --k 4 --seed 3 --naive --out " + at("naive.png"));
  ASSERT_EQ(r.code, 0);
  EXPECT_GT(json::parse(r.out)["max_abs_diff"].get<double>(), 0.0);

  EXPECT_EQ(run("mask-demo --image " + at("nope.png") + " --k 4 --out " + at("x.png")).code, 3);
}

}  // namespace
