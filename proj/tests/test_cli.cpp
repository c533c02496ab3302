#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bsplat/checkpoint.hpp"
#include "bsplat/cli.hpp"
#include "support/temp_dir.hpp"

using namespace bsplat;

namespace {

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

void write_text(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST(Cli, UsageErrors) {
  EXPECT_EQ(cli({}).code, kExitUsage);
  EXPECT_EQ(cli({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(cli({"train", "--iters", "abc"}).code, kExitUsage);
  EXPECT_EQ(cli({"train", "--precision", "f16"}).code, kExitUsage);
  EXPECT_EQ(cli({"train", "--out", "/tmp/x"}).code, kExitUsage);  // no dataset
  EXPECT_EQ(cli({"render", "--checkpoint", "a.ply"}).code, kExitUsage);
  EXPECT_EQ(cli({"--help"}).code, kExitOk);
}

TEST(Cli, SynthTrainRenderEvalInspect) {
  oracle::TempDir dir;
  const std::string ds = (dir / "ds").string(), run = (dir / "run").string();
  ASSERT_EQ(cli({"synth", "--out", ds, "--gaussians", "8", "--cameras", "4", "--width", "16", "--height", "16",
                 "--test-every", "4"})
                .code,
            kExitOk);
  EXPECT_EQ(cli({"synth", "--out", ds}).code, kExitIo);  // refuses a non-empty directory

  // Ground truth against its own dataset is a perfect score.
  const CliRun gt = cli({"eval", "--checkpoint", ds + "/truth.ply", "--dataset", ds});
  ASSERT_EQ(gt.code, kExitOk) << gt.err;
  EXPECT_EQ(nlohmann::json::parse(gt.out)["psnr"], "inf");

  write_text(dir / "cfg.json", R"({"eval_interval": 10, "budget": {"densify_begin": 2, "densify_end": 10,
    "grow_interval": 2, "compensate_begin": 10, "compensate_end": 15, "compensate_interval": 5}})");
  const CliRun tr = cli({"train", "--config", (dir / "cfg.json").string(), "--dataset", ds, "--out", run, "--iters", "20",
                      "--budget", "20", "--precision", "f32", "--seed", "3", "--cache-capacity", "2"});
  ASSERT_EQ(tr.code, kExitOk) << tr.err;
  const auto report = nlohmann::json::parse(std::ifstream(run + "/report.json"));
  EXPECT_EQ(report["iterations"], 20);
  EXPECT_EQ(report["precision"], "f32");
  EXPECT_EQ(report["budget"], 20);
  const auto cfg = nlohmann::json::parse(std::ifstream(run + "/config.json"));
  EXPECT_EQ(cfg["cache_capacity"], 2);
  EXPECT_EQ(cfg["seed"], 3);
  EXPECT_EQ(cli({"train", "--dataset", ds, "--out", run, "--iters", "1", "--budget", "20"}).code, kExitIo);

  const std::string renders = (dir / "renders").string();
  const CliRun rr = cli({"render", "--checkpoint", run + "/checkpoint.ply", "--cameras", ds + "/cameras.json", "--out",
                      renders, "--depth", "--views", "2"});
  ASSERT_EQ(rr.code, kExitOk) << rr.err;
  EXPECT_TRUE(std::filesystem::exists(renders + "/images/002.png"));
  EXPECT_TRUE(std::filesystem::exists(renders + "/images/002.pfm"));
  EXPECT_FALSE(std::filesystem::exists(renders + "/images/000.png"));

  // Renders of a checkpoint score perfectly against themselves.
  const CliRun self = cli({"eval", "--checkpoint", run + "/checkpoint.ply", "--dataset", renders, "--split", "all"});
  EXPECT_EQ(self.code, kExitIo);  // views other than 2 have no image
  const CliRun all = cli({"render", "--checkpoint", run + "/checkpoint.ply", "--cameras", ds + "/cameras.json", "--out",
                       renders, "--force"});
  ASSERT_EQ(all.code, kExitOk) << all.err;
  const CliRun self2 = cli({"eval", "--checkpoint", run + "/checkpoint.ply", "--dataset", renders, "--split", "train"});
  ASSERT_EQ(self2.code, kExitOk) << self2.err;
  EXPECT_EQ(nlohmann::json::parse(self2.out)["psnr"], "inf");

  const CliRun ins = cli({"inspect", "--checkpoint", run + "/checkpoint.ply", "--dataset", ds});
  ASSERT_EQ(ins.code, kExitOk) << ins.err;
  const auto j = nlohmann::json::parse(ins.out);
  EXPECT_EQ(j["count"], report["final_gaussians"]);
  EXPECT_EQ(j["importance_percentiles"].size(), 7u);
  EXPECT_EQ(j["opacity_histogram"]["counts"].size(), 10u);
}

TEST(Cli, IoAndConfigErrors) {
  oracle::TempDir dir;
  EXPECT_EQ(cli({"inspect", "--checkpoint", (dir / "missing.ply").string()}).code, kExitIo);
  EXPECT_EQ(cli({"train", "--config", (dir / "missing.json").string()}).code, kExitIo);
  write_text(dir / "bad.json", R"({"nope": 1})");
  EXPECT_EQ(cli({"train", "--config", (dir / "bad.json").string(), "--dataset", "x", "--out", "y"}).code, kExitUsage);
  EXPECT_EQ(cli({"train", "--dataset", (dir / "nodir").string(), "--out", (dir / "o").string()}).code, kExitIo);
}

TEST(Cli, NumericFailureExitCode) {
  oracle::TempDir dir;
  const std::string ds = (dir / "ds").string();
  ASSERT_EQ(cli({"synth", "--out", ds, "--gaussians", "5", "--cameras", "3", "--width", "8", "--height", "8"}).code,
            kExitOk);
  write_text(dir / "cfg.json", R"({"optimizer": {"position_lr_init": 1e308, "position_lr_final": 1e308}})");
  const CliRun r = cli({"train", "--config", (dir / "cfg.json").string(), "--dataset", ds, "--out",
                     (dir / "run").string(), "--iters", "3", "--budget", "10"});
  EXPECT_EQ(r.code, kExitNumeric) << r.err;
}

TEST(Cli, CacheCapacityPrecedence) {
  oracle::TempDir dir;
  const std::string ds = (dir / "ds").string();
  ASSERT_EQ(cli({"synth", "--out", ds, "--gaussians", "5", "--cameras", "3", "--width", "8", "--height", "8"}).code,
            kExitOk);
  write_text(dir / "cfg.json", R"({"cache_capacity": 5})");
  auto capacity_of = [&](const std::string& run) {
    return nlohmann::json::parse(std::ifstream(run + "/config.json"))["cache_capacity"].get<int>();
  };
  const std::string cfg = (dir / "cfg.json").string();
  ::setenv(kCacheCapacityEnv, "3", 1);
  ASSERT_EQ(cli({"train", "--config", cfg, "--dataset", ds, "--out", (dir / "a").string(), "--iters", "1", "--budget", "10"}).code, kExitOk);
  EXPECT_EQ(capacity_of((dir / "a").string()), 3);
  ASSERT_EQ(cli({"train", "--config", cfg, "--dataset", ds, "--out", (dir / "b").string(), "--iters", "1", "--budget",
                 "10", "--cache-capacity", "2"})
                .code,
            kExitOk);
  EXPECT_EQ(capacity_of((dir / "b").string()), 2);
  ::unsetenv(kCacheCapacityEnv);
  ASSERT_EQ(cli({"train", "--config", cfg, "--dataset", ds, "--out", (dir / "c").string(), "--iters", "1", "--budget", "10"}).code, kExitOk);
  EXPECT_EQ(capacity_of((dir / "c").string()), 5);
}

TEST(Cli, PercentileAndHistogram) {
  EXPECT_EQ(percentile({5, 1, 3, 2, 4}, 50), 3.0);
  EXPECT_EQ(percentile({1, 2, 3, 4}, 50), 2.0);
  EXPECT_EQ(percentile({1, 2, 3, 4}, 100), 4.0);
  EXPECT_THROW(percentile({}, 10), InputError);
  const Histogram h = histogram({0.0, 0.5, 1.0, 2.0, -1.0}, 0.0, 1.0, 2);
  EXPECT_EQ(h.counts, (std::vector<std::size_t>{2, 3}));
  EXPECT_EQ(h.edges.size(), 3u);
}
