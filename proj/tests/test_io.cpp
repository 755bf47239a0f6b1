#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "renil/cli.hpp"
#include "renil/config.hpp"
#include "renil/io.hpp"

namespace {

using namespace renil;
namespace fs = std::filesystem;

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("renil_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  void write(const std::string& name, const std::string& text) const { std::ofstream(path(name)) << text; }

  fs::path dir_;
};

ImuSequence sample_imu(bool mag) {
  synth::TrajectorySpec s;
  s.duration = 2.0;
  s.gait = synth::walking_gait(1.1);
  ImuSequence imu = synth::inverse_imu(synth::generate_trajectory(s, 4));
  if (!mag) imu.mag.clear();
  return imu;
}

// ---------------------------------------------------------------------------
// CSV formats

using Csv = TempDir;

TEST_F(Csv, ImuRoundTripIsExact) {
  for (bool mag : {true, false}) {
    const ImuSequence a = sample_imu(mag);
    io::write_imu_csv(path("imu.csv"), a);
    const ImuSequence b = io::read_imu_csv(path("imu.csv"));
    ASSERT_EQ(b.size(), a.size());
    EXPECT_EQ(b.has_mag(), mag);
    EXPECT_NEAR(b.sample_rate, a.sample_rate, 1e-6);
    for (std::size_t k = 0; k < a.size(); ++k) {
      EXPECT_EQ(b.t[k], a.t[k]);
      EXPECT_EQ(b.accel[k], a.accel[k]);
      EXPECT_EQ(b.gyro[k], a.gyro[k]);
      if (mag) EXPECT_EQ(b.mag[k], a.mag[k]);
    }
  }
}

TEST_F(Csv, TruthRoundTripAndAttach) {
  ImuSequence a = sample_imu(true);
  io::write_truth_csv(path("truth.csv"), a.truth);
  const auto t = io::read_truth_csv(path("truth.csv"));
  ASSERT_EQ(t.size(), a.truth.size());
  for (std::size_t k = 0; k < t.size(); ++k) {
    EXPECT_EQ(t[k].position, a.truth[k].position);
    EXPECT_EQ(t[k].q.w, a.truth[k].q.w);
    EXPECT_EQ(t[k].q.z, a.truth[k].q.z);
  }
  ImuSequence b = a;
  b.truth.clear();
  io::attach_truth(b, t, "truth.csv");
  EXPECT_TRUE(b.has_truth());
  auto shorter = t;
  shorter.pop_back();
  EXPECT_THROW(io::attach_truth(b, shorter, "truth.csv"), SchemaError);
}

TEST_F(Csv, SchemaViolations) {
  write("missing.csv", "t,ax,ay,az,gx,gy\n0,1,2,3,4,5\n");
  EXPECT_THROW(io::read_imu_csv(path("missing.csv")), SchemaError);
  write("ragged.csv", "t,ax,ay,az,gx,gy,gz\n0,1,2,3,4,5\n");
  EXPECT_THROW(io::read_imu_csv(path("ragged.csv")), SchemaError);
  write("text.csv", "t,ax,ay,az,gx,gy,gz\n0,1,2,x,4,5,6\n0.005,1,2,3,4,5,6\n");
  EXPECT_THROW(io::read_imu_csv(path("text.csv")), SchemaError);
  write("nan.csv", "t,ax,ay,az,gx,gy,gz\n0,1,2,,4,5,6\n0.005,1,2,3,4,5,6\n");
  EXPECT_THROW(io::read_imu_csv(path("nan.csv")), SchemaError);
  write("jitter.csv", "t,ax,ay,az,gx,gy,gz\n0,0,0,0,0,0,0\n0.01,0,0,0,0,0,0\n0.03,0,0,0,0,0,0\n0.04,0,0,0,0,0,0\n");
  EXPECT_THROW(io::read_imu_csv(path("jitter.csv")), SchemaError);
  write("empty.csv", "");
  EXPECT_THROW(io::read_csv(path("empty.csv")), SchemaError);
  write("badq.csv", "t,px,py,pz,qw,qx,qy,qz\n0,0,0,0,2,0,0,0\n");
  EXPECT_THROW(io::read_truth_csv(path("badq.csv")), SchemaError);
}

TEST_F(Csv, MissingFileIsIoError) {
  EXPECT_THROW(io::read_imu_csv(path("nope.csv")), IoError);
  EXPECT_THROW(io::read_predictions(path("nope.csv")), IoError);
  EXPECT_THROW(io::read_json(path("nope.json")), IoError);
}

TEST_F(Csv, CommentsBlankLinesAndColumnOrder) {
  write("traj.csv", "# estimate\npy,t,px\n\n2,0,1\n4,1,3\n");
  const auto f = io::read_trajectory_csv(path("traj.csv"));
  ASSERT_TRUE(f.has_position);
  ASSERT_EQ(f.traj.size(), 2u);
  EXPECT_EQ(f.traj.p[1], metrics::Vec2(3, 4));
  EXPECT_TRUE(f.traj.q.empty());
}

TEST_F(Csv, PredictionsRoundTrip) {
  std::vector<io::PredictionRecord> p{{0.0, 1.0, {0.5, -0.25}, {0.1, 0.2}}, {1.0, 2.5, {1e-17, 3.0}, {1e-3, 4.0}}};
  io::write_predictions(path("p.csv"), p);
  const auto q = io::read_predictions(path("p.csv"));
  ASSERT_EQ(q.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(q[i].t0, p[i].t0);
    EXPECT_EQ(q[i].t1, p[i].t1);
    EXPECT_EQ(q[i].dp, p[i].dp);
    EXPECT_EQ(q[i].b, p[i].b);
  }
  EXPECT_DOUBLE_EQ(q[1].control().dt, 1.5);
  write("bad_b.csv", "t0,t1,dpx,dpy,bx,by\n0,1,0,0,0,1\n");
  EXPECT_THROW(io::read_predictions(path("bad_b.csv")), SchemaError);
  write("overlap.csv", "t0,t1,dpx,dpy,bx,by\n0,2,0,0,1,1\n1,3,0,0,1,1\n");
  EXPECT_THROW(io::read_predictions(path("overlap.csv")), SchemaError);
}

TEST_F(Csv, IpdpList) {
  io::write_ipdp_list(path("ipdp.txt"), {{0.0, 1.5}, {1.5, 4.0}});
  const auto l = io::read_ipdp_list(path("ipdp.txt"));
  ASSERT_EQ(l.size(), 2u);
  EXPECT_EQ(l[1].t1, 4.0);
  write("rev.txt", "2,1\n");
  EXPECT_THROW(io::read_ipdp_list(path("rev.txt")), SchemaError);
  write("three.txt", "0,1,2\n");
  EXPECT_THROW(io::read_ipdp_list(path("three.txt")), SchemaError);
}

TEST_F(Csv, ObservationsAndBeliefs) {
  io::ObservationRecord o;
  o.t = 3.0;
  o.obs.z = Eigen::Vector2d(1, 2);
  o.obs.h = Eigen::Matrix2d::Identity();
  o.obs.r = (Eigen::Matrix2d() << 0.5, 0.1, 0.1, 0.3).finished();
  io::write_observations(path("obs.csv"), {o});
  const auto r = io::read_observations(path("obs.csv"));
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].obs.r, o.obs.r);
  EXPECT_EQ(r[0].obs.z, o.obs.z);
  write("bad_obs.csv", "t,zx,zy,rxx,rxy,ryy\n0,0,0,1,2,1\n");
  EXPECT_THROW(io::read_observations(path("bad_obs.csv")), SchemaError);

  bayes::PositionBelief b;
  b.t = 2.0;
  b.mean = {1.5, -2.5};
  b.cov << 2.0, 0.3, 0.3, 1.0;
  io::write_beliefs(path("b.csv"), {b});
  const auto c = io::read_beliefs(path("b.csv"));
  EXPECT_EQ(c[0].mean, b.mean);
  EXPECT_EQ(c[0].cov, b.cov);
}

TEST_F(Csv, OrientationLogKeepsAbsentWeights) {
  std::vector<io::OrientationRecord> log{{0.0, Quaternion::identity(), std::nullopt, std::nullopt},
                                         {0.005, Quaternion{0.6, 0.8, 0, 0}, 0.25, std::nullopt},
                                         {0.010, Quaternion{0, 0, 0.6, 0.8}, std::nullopt, 0.75}};
  io::write_orientation_log(path("o.csv"), log);
  const auto r = io::read_orientation_log(path("o.csv"));
  ASSERT_EQ(r.size(), 3u);
  EXPECT_FALSE(r[0].w_a);
  EXPECT_EQ(*r[1].w_a, 0.25);
  EXPECT_FALSE(r[1].w_m);
  EXPECT_EQ(*r[2].w_m, 0.75);
  EXPECT_EQ(r[2].q.z, 0.8);
  // Also readable as a generic trajectory without positions.
  const auto f = io::read_trajectory_csv(path("o.csv"));
  EXPECT_FALSE(f.has_position);
  EXPECT_EQ(f.traj.q.size(), 3u);
}

TEST(Ellipse, PolylineLiesOnConfidenceContour) {
  bayes::PositionBelief b;
  b.mean = {3.0, -1.0};
  b.cov << 4.0, 1.2, 1.2, 1.0;
  const double c = 0.997;
  const auto poly = io::ellipse_polyline(bayes::uncertainty_ellipse(b, c), 64);
  ASSERT_EQ(poly.size(), 64u);
  const double q = -2.0 * std::log(1.0 - c);
  for (const auto& p : poly) {
    const Eigen::Vector2d d = p - b.mean;
    EXPECT_NEAR(d.dot(b.cov.inverse() * d), q, 1e-9);
  }
}

// ---------------------------------------------------------------------------
// manifest

using ManifestTest = TempDir;

TEST_F(ManifestTest, RoundTripAndRootResolution) {
  io::Manifest m;
  m.root = "data";
  m.sequences = {{"a", "a_imu.csv", "a_truth.csv", "s1", true, io::Split::kTrain},
                 {"b", "b_imu.csv", "b_truth.csv", "s2", false, io::Split::kTest}};
  const auto j = io::manifest_to_json(m);
  const io::Manifest back = io::manifest_from_json(j, "");
  EXPECT_EQ(back, m);
  EXPECT_EQ(io::manifest_to_json(back), j);

  fs::create_directories(dir_ / "data");
  write("data/a_imu.csv", "x");
  write("data/a_truth.csv", "x");
  io::write_json(path("m.json"), j);
  EXPECT_THROW(io::read_manifest(path("m.json")), IoError);  // b files absent
  write("data/b_imu.csv", "x");
  write("data/b_truth.csv", "x");
  const io::Manifest r = io::read_manifest(path("m.json"));
  EXPECT_EQ(r.path_of("a_imu.csv"), (dir_ / "data" / "a_imu.csv").lexically_normal().string());
  EXPECT_EQ(r.select(io::Split::kTrain).size(), 1u);
  EXPECT_EQ(r.select(io::Split::kVal).size(), 0u);
}

TEST_F(ManifestTest, SchemaErrors) {
  using nlohmann::json;
  const json entry = {{"id", "a"}, {"imu", "i"}, {"truth", "t"}, {"split", "train"}};
  EXPECT_NO_THROW(io::manifest_from_json({{"sequences", {entry}}}));
  EXPECT_THROW(io::manifest_from_json({{"sequences", {entry}}, {"extra", 1}}), SchemaError);
  json e2 = entry;
  e2["split"] = "holdout";
  EXPECT_THROW(io::manifest_from_json({{"sequences", {e2}}}), SchemaError);
  e2 = entry;
  e2["colour"] = "red";
  EXPECT_THROW(io::manifest_from_json({{"sequences", {e2}}}), SchemaError);
  e2 = entry;
  e2.erase("imu");
  EXPECT_THROW(io::manifest_from_json({{"sequences", {e2}}}), SchemaError);
  const io::Manifest dup = io::manifest_from_json({{"sequences", {entry, entry}}});
  EXPECT_THROW(dup.validate(false), SchemaError);
}

// ---------------------------------------------------------------------------
// run configuration

TEST(RunConfigJson, DefaultsRoundTrip) {
  const RunConfig c;
  const auto j = to_json(c);
  const RunConfig back = run_config_from_json(j);
  EXPECT_EQ(to_json(back), j);
  EXPECT_EQ(back.model, c.model);
  EXPECT_EQ(back.bayes, c.bayes);
}

TEST(RunConfigJson, ModifiedValuesRoundTrip) {
  RunConfig c;
  c.filter.u = 2.5;
  c.filter.enable_mag = false;
  c.model = asle::AsleConfig{};
  c.model.context_pools = {{asle::PoolKind::kMax, 5}};
  c.train.adam.lr = 3e-4;
  c.train.scale = data::ScaleDistribution::uniform(2.0, 7.0);
  c.train.augmentation.p_heading = 0.0;
  c.train_alignment = TrainAlignment::kFilter;
  c.bayes.sweeps = 9;
  c.seed = 123456789012345ull;
  const auto j = to_json(c);
  const RunConfig back = run_config_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(to_json(back), j);
  EXPECT_EQ(back.model, c.model);
  EXPECT_EQ(back.train_alignment, TrainAlignment::kFilter);
  EXPECT_EQ(back.seed, c.seed);
  EXPECT_EQ(back.train.scale.kind, data::ScaleDistribution::Kind::kUniform);
}

TEST(RunConfigJson, PartialKeepsDefaults) {
  const RunConfig c = run_config_from_json({{"train", {{"epochs", 3}}}, {"seed", 5}});
  EXPECT_EQ(c.train.epochs, 3u);
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.train.batch_size, asle::TrainConfig{}.batch_size);
  EXPECT_EQ(c.model, asle::AsleConfig::small());
}

TEST(RunConfigJson, UnknownKeysRejectedAtEveryLevel) {
  using nlohmann::json;
  for (const json& bad : {json{{"extra", 1}}, json{{"filter", {{"gain", 1}}}}, json{{"model", {{"layers", 3}}}},
                          json{{"train", {{"momentum", 0.9}}}}, json{{"train", {{"scale", {{"mean", 2}}}}}},
                          json{{"train", {{"augmentation", {{"p_flip", 0.1}}}}}}, json{{"bayes", {{"chains", 2}}}}}) {
    EXPECT_THROW(run_config_from_json(bad), SchemaError) << bad.dump();
  }
}

TEST(RunConfigJson, InvalidValuesAreSchemaErrors) {
  using nlohmann::json;
  for (const json& bad : {json{{"filter", {{"u", -1.0}}}}, json{{"model", {{"group_size", 5}}}},
                          json{{"train", {{"epochs", 0}}}}, json{{"train", {{"epochs", "many"}}}},
                          json{{"train", {{"alignment", "magic"}}}}, json{{"bayes", {{"sweeps", 1}}}},
                          json{{"bayes", {{"ellipse_confidence", 1.0}}}}, json::array()}) {
    EXPECT_THROW(run_config_from_json(bad), SchemaError) << bad.dump();
  }
}

TEST(SynthSpecJson, RoundTripAndErrors) {
  SynthSpec s;
  s.count = 7;
  s.kinds = {synth::PathKind::kCircle};
  s.noise.gyro_bias = {0.01, 0, 0};
  s.noise.mag_patches.push_back({{1, 2, 0}, 3.0, {5, 0, 0}});
  const auto j = to_json(s);
  const SynthSpec back = synth_spec_from_json(j);
  EXPECT_EQ(to_json(back), j);
  EXPECT_EQ(back.noise.gyro_bias, s.noise.gyro_bias);
  EXPECT_THROW(synth_spec_from_json({{"kinds", {"zigzag"}}}), SchemaError);
  EXPECT_THROW(synth_spec_from_json({{"count", 0}}), SchemaError);
  EXPECT_THROW(synth_spec_from_json({{"noise", {{"accel", 1}}}}), SchemaError);
  EXPECT_THROW(synth_spec_from_json({{"train_fraction", 0.8}, {"val_fraction", 0.3}}), SchemaError);
}

// ---------------------------------------------------------------------------
// command helpers

TEST(CliHelpers, StaticInitialOrientation) {
  for (int i = 0; i < 8; ++i) {
    synth::TrajectorySpec s;
    s.duration = 2.0;
    s.gait.speed = 0.0;
    s.heading = -2.0 + 0.6 * i;
    s.carry = from_euler({0.3 - 0.08 * i, -0.2 + 0.05 * i, 0.0});
    const ImuSequence imu = synth::inverse_imu(synth::generate_trajectory(s, i));
    const Quaternion q = cli::static_initial_orientation(imu, orient::FilterParams{});
    EXPECT_LT(rotation_distance(q, imu.truth[0].q), 1e-6) << i;
  }
}

TEST(CliHelpers, TruthInterpolationAndIpdps) {
  std::vector<PoseSample> truth{{0.0, {0, 0, 0}, {}}, {1.0, {2, 4, 0}, {}}, {2.0, {2, 6, 0}, {}}};
  EXPECT_EQ(cli::truth_position_at(truth, 0.25), bayes::Vec2(0.5, 1.0));
  EXPECT_EQ(cli::truth_position_at(truth, 1.5), bayes::Vec2(2.0, 5.0));
  EXPECT_EQ(cli::truth_position_at(truth, 9.0), bayes::Vec2(2.0, 6.0));

  ImuSequence s;
  for (int k = 0; k <= 1000; ++k) s.t.push_back(k * 0.005);
  const auto p = cli::regular_ipdps(s, 1.0);
  ASSERT_EQ(p.size(), 5u);
  EXPECT_NEAR(p.back().t1, 5.0, 1e-9);
  EXPECT_THROW(cli::regular_ipdps(s, 10.0), SchemaError);
  EXPECT_THROW(cli::regular_ipdps(s, 0.0), SchemaError);
}

TEST(CliHelpers, FuseAppliesObservationsOnlyAtMatchingTimes) {
  std::vector<io::PredictionRecord> preds;
  for (int i = 0; i < 4; ++i) preds.push_back({double(i), double(i + 1), {1.0, 0.0}, {0.2, 0.2}});
  io::ObservationRecord o;
  o.t = 2.0;
  o.obs.z = Eigen::Vector2d(0.0, 0.0);
  o.obs.h = Eigen::Matrix2d::Identity();
  o.obs.r = Eigen::Matrix2d::Identity() * 1e-6;
  const auto init = cli::initial_belief(preds, bayes::Vec2::Zero(), 0.0);
  const auto fused = cli::run_fuse(preds, {o}, init, BayesSettings{}, 1);
  const auto chain = cli::run_chain(preds, init);
  ASSERT_EQ(fused.size(), 5u);
  EXPECT_EQ(fused[1].mean, chain[1].mean);
  EXPECT_NEAR(fused[2].mean.norm(), 0.0, 1e-3);  // pulled onto the precise fix
  EXPECT_LT(fused[2].cov.trace(), chain[2].cov.trace());
  EXPECT_NEAR(fused[4].mean.x(), fused[2].mean.x() + 2.0, 1e-12);
  EXPECT_EQ(fused[4].t, 4.0);
}

}  // namespace
