#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "renil/cli.hpp"

namespace {

using namespace renil;
namespace fs = std::filesystem;

const fs::path& work_dir() {
  static const fs::path d = [] {
    fs::path p = fs::temp_directory_path() / "renil_cli_pipeline";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return d;
}

std::string at(const std::string& rel) { return (work_dir() / rel).string(); }

int renil(const std::string& args) {
  const std::string cmd = std::string("RENIL_LOG=quiet ") + RENIL_CLI + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

std::string tiny_run_config() {
  return R"({
  "train": {"epochs": 2, "batch_size": 4, "windows_per_epoch": 8, "val_windows": 4, "val_duration": 2.0,
            "lr": 1e-3, "scale": {"kind": "log_uniform", "min_s": 1.0, "max_s": 4.0}},
  "seed": 11
})";
}

TEST(CliPipeline, StaticAlignmentRecoversOrientation) {
  write(at("static_spec.json"), R"({"count": 1, "duration": 10, "speed": 0, "seed": 4})");
  ASSERT_EQ(renil("synth " + at("static_spec.json") + " --out " + at("static")), 0);
  ASSERT_EQ(renil("align " + at("static/seq000_imu.csv") + " --out " + at("static_al")), 0);
  cli::EvalOptions opt;
  opt.from = 5.0;
  const auto r = cli::cmd_eval(at("static_al/orientation.csv"), at("static/seq000_truth.csv"), opt, std::nullopt);
  ASSERT_TRUE(r.qae);
  EXPECT_LT(*r.qae, 2.0 * std::numbers::pi / 180.0);
  EXPECT_FALSE(r.mae);
}

TEST(CliPipeline, ZeroNoiseChainReproducesSummedDisplacements) {
  std::vector<io::PredictionRecord> preds;
  Rng rng(5);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int i = 0; i < 50; ++i) preds.push_back({0.5 * i, 0.5 * (i + 1), {n(rng), n(rng)}, {1e-12, 1e-12}});
  io::write_predictions(at("zero_preds.csv"), preds);
  ASSERT_EQ(renil("chain --predictions " + at("zero_preds.csv") + " --init 1.5 -2 --out " + at("zero_chain")), 0);
  const auto trace = io::read_beliefs(at("zero_chain/beliefs.csv"));
  ASSERT_EQ(trace.size(), preds.size() + 1);
  bayes::Vec2 sum(1.5, -2.0);
  EXPECT_EQ(trace[0].mean, sum);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    sum += preds[i].dp;
    EXPECT_EQ(trace[i + 1].mean, sum) << i;
    EXPECT_EQ(trace[i + 1].t, preds[i].t1);
  }
  EXPECT_EQ(slurp(at("zero_chain/ellipses.csv")).find("t,k,x,y\n"), 0u);
}

// synth -> align -> train -> predict -> chain -> fuse -> eval through the binary.
TEST(CliPipeline, FullPipelineSmoke) {
  write(at("spec.json"), R"({"count": 6, "duration": 20, "train_fraction": 0.5, "val_fraction": 0.17,
    "noise": {"accel_sigma": 0.05, "gyro_sigma": 0.005, "mag_sigma": 0.2}, "seed": 9})");
  write(at("run.json"), tiny_run_config());
  ASSERT_EQ(renil("synth " + at("spec.json") + " --out " + at("corpus")), 0);
  const io::Manifest m = io::read_manifest(at("corpus/manifest.json"));
  ASSERT_EQ(m.select(io::Split::kTrain).size(), 3u);
  ASSERT_EQ(m.select(io::Split::kVal).size(), 1u);
  const auto* test = m.select(io::Split::kTest).front();
  const std::string imu = m.path_of(test->imu), truth = m.path_of(test->truth);

  ASSERT_EQ(renil("align " + imu + " --truth " + truth + " --config " + at("run.json") + " --out " + at("al")), 0);
  ASSERT_EQ(renil("train --manifest " + at("corpus/manifest.json") + " --config " + at("run.json") + " --out " + at("model")), 0);
  ASSERT_EQ(renil("predict --checkpoint " + at("model/checkpoint.bin") + " --aligned " + at("al/aligned.csv") +
                  " --interval 2 --out " + at("pred/predictions.csv")),
            0);
  ASSERT_EQ(renil("chain --predictions " + at("pred/predictions.csv") + " --truth " + truth + " --out " + at("chain")), 0);

  // Noisy position fixes every 4 s from the truth track.
  std::vector<io::ObservationRecord> obs;
  const auto poses = io::read_truth_csv(truth);
  for (double t = 4.0; t <= 18.0; t += 4.0) {
    io::ObservationRecord o;
    o.t = t;
    o.obs.z = cli::truth_position_at(poses, t);
    o.obs.h = Eigen::Matrix2d::Identity();
    o.obs.r = Eigen::Matrix2d::Identity() * 0.25;
    obs.push_back(o);
  }
  io::write_observations(at("obs.csv"), obs);
  ASSERT_EQ(renil("fuse --predictions " + at("pred/predictions.csv") + " --observations " + at("obs.csv") +
                  " --truth " + truth + " --config " + at("run.json") + " --out " + at("fuse")),
            0);
  ASSERT_EQ(renil("eval --estimates " + at("chain/beliefs.csv") + " --truth " + truth + " --predictions " +
                  at("pred/predictions.csv") + " --out " + at("report.txt")),
            0);

  for (const char* f : {"al/aligned.csv", "al/orientation.csv", "model/checkpoint.bin", "model/loss_curve.csv",
                        "model/run_config.json", "pred/predictions.csv", "chain/beliefs.csv", "chain/ellipses.csv",
                        "fuse/beliefs.csv", "fuse/ellipses.csv", "report.txt"}) {
    EXPECT_TRUE(fs::exists(at(f)) && fs::file_size(at(f)) > 0) << f;
  }
  EXPECT_EQ(io::read_predictions(at("pred/predictions.csv")).size(), 10u);
  EXPECT_EQ(io::read_csv(at("model/loss_curve.csv")).rows.size(), 2u);
  const std::string report = slurp(at("report.txt"));
  for (const char* key : {"matched = ", "mae_m = ", "ade_mps = ", "coverage_0.95 = "}) {
    EXPECT_NE(report.find(key), std::string::npos) << key;
  }
  // 64 vertices per belief.
  EXPECT_EQ(io::read_csv(at("chain/ellipses.csv")).rows.size(), 64u * 11u);

  // Configs written by the tool re-parse identically.
  const auto echoed = io::read_json(at("model/run_config.json"));
  EXPECT_EQ(to_json(run_config_from_json(echoed)), echoed);

  // Re-running with identical inputs and seeds gives bit-identical outputs.
  ASSERT_EQ(renil("train --manifest " + at("corpus/manifest.json") + " --config " + at("run.json") + " --out " + at("model2")), 0);
  EXPECT_EQ(slurp(at("model/checkpoint.bin")), slurp(at("model2/checkpoint.bin")));
  EXPECT_EQ(slurp(at("model/loss_curve.csv")), slurp(at("model2/loss_curve.csv")));
  ASSERT_EQ(renil("predict --checkpoint " + at("model2/checkpoint.bin") + " --aligned " + at("al/aligned.csv") +
                  " --interval 2 --out " + at("pred2.csv")),
            0);
  EXPECT_EQ(slurp(at("pred/predictions.csv")), slurp(at("pred2.csv")));
  ASSERT_EQ(renil("fuse --predictions " + at("pred/predictions.csv") + " --observations " + at("obs.csv") +
                  " --truth " + truth + " --config " + at("run.json") + " --out " + at("fuse2")),
            0);
  EXPECT_EQ(slurp(at("fuse/beliefs.csv")), slurp(at("fuse2/beliefs.csv")));
  ASSERT_EQ(renil("synth " + at("spec.json") + " --out " + at("corpus2")), 0);
  EXPECT_EQ(slurp(at("corpus/seq002_imu.csv")), slurp(at("corpus2/seq002_imu.csv")));

  // A different seed changes the model.
  ASSERT_EQ(renil("train --manifest " + at("corpus/manifest.json") + " --config " + at("run.json") +
                  " --seed 12 --out " + at("model3")),
            0);
  EXPECT_NE(slurp(at("model/checkpoint.bin")), slurp(at("model3/checkpoint.bin")));
}

TEST(CliPipeline, ExitCodes) {
  write(at("bad_config.json"), R"({"train": {"epochs": 2, "warmup": 1}})");
  write(at("ok_preds.csv"), "t0,t1,dpx,dpy,bx,by\n0,1,0.5,0,0.1,0.1\n");
  EXPECT_EQ(renil("--help"), 0);
  EXPECT_EQ(renil(""), 2);
  EXPECT_EQ(renil("frobnicate"), 2);
  EXPECT_EQ(renil("chain --predictions " + at("ok_preds.csv") + " --config " + at("bad_config.json") + " --out " +
                  at("x")),
            2);
  EXPECT_EQ(renil("chain --predictions " + at("missing.csv") + " --out " + at("x")), 4);
  write(at("bad_preds.csv"), "t0,t1,dpx,dpy\n0,1,0,0\n");
  EXPECT_EQ(renil("chain --predictions " + at("bad_preds.csv") + " --out " + at("x")), 2);
  write(at("junk.bin"), "not a checkpoint");
  write(at("tiny_aligned.csv"), "t,ax,ay,az,gx,gy,gz\n0,0,0,9.8,0,0,0\n0.005,0,0,9.8,0,0,0\n0.01,0,0,9.8,0,0,0\n");
  EXPECT_EQ(renil("predict --checkpoint " + at("missing.bin") + " --aligned " + at("tiny_aligned.csv") +
                  " --interval 0.005 --out " + at("x.csv")),
            4);
  EXPECT_EQ(renil("predict --checkpoint " + at("junk.bin") + " --aligned " + at("tiny_aligned.csv") +
                  " --interval 0.005 --out " + at("x.csv")),
            2);
}

TEST(CliPipeline, NonFiniteNetworkOutputIsDivergence) {
  asle::AsleModel<float> model(asle::AsleConfig::small(), 3);
  asle::save_checkpoint(at("div.bin"), model);
  std::ostringstream csv;
  csv << "t,ax,ay,az,gx,gy,gz\n";
  for (int k = 0; k < 400; ++k) csv << k * 0.005 << ",1e300,0,9.8,0,0,0\n";
  write(at("huge_aligned.csv"), csv.str());
  EXPECT_EQ(renil("predict --checkpoint " + at("div.bin") + " --aligned " + at("huge_aligned.csv") +
                  " --interval 1 --out " + at("div.csv")),
            3);
}

}  // namespace
