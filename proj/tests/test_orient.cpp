#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "renil/orient.hpp"
#include "renil/synthimu.hpp"
#include "scenarios.hpp"

using namespace renil;
using namespace renil::orient;
using renil::scenarios::kDeg;

namespace {

std::vector<Vec3> random_window(std::mt19937_64& rng, std::size_t n, double spread) {
  std::normal_distribution<double> d(0.0, spread);
  std::vector<Vec3> w(n);
  for (auto& a : w) a = Vec3{d(rng), d(rng), 9.81 + d(rng)};
  return w;
}

// Straightforward per-term evaluation of the accelerometer weight.
double accel_weight_reference(const std::vector<Vec3>& w, double u, double v, double g) {
  const double n = static_cast<double>(w.size());
  double intensity = 0.0;
  for (const Vec3& a : w) intensity += std::abs(std::sqrt(a.x * a.x + a.y * a.y + a.z * a.z) - g);
  double var = 0.0;
  for (int axis = 0; axis < 3; ++axis) {
    double mean = 0.0;
    for (const Vec3& a : w) mean += axis == 0 ? a.x : (axis == 1 ? a.y : a.z);
    mean /= n;
    double ss = 0.0;
    for (const Vec3& a : w) {
      const double c = (axis == 0 ? a.x : (axis == 1 ? a.y : a.z)) - mean;
      ss += c * c;
    }
    var += ss / n;
  }
  const double arg = u / n * intensity + v * var;
  return 2.0 / (1.0 + std::exp(-arg)) - 1.0;
}

Quaternion random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Quaternion{n(rng), n(rng), n(rng), n(rng)}.normalized();
}

}  // namespace

TEST(AccelWeight, StaticWindowIsZero) {
  std::vector<Vec3> w(200, Vec3{0.0, 0.0, 9.81});
  EXPECT_EQ(accel_weight(w, FilterParams{}), 0.0);
}

TEST(AccelWeight, UnitDeviationClosedForm) {
  std::vector<Vec3> w(100, Vec3{0.0, 0.0, 10.81});
  EXPECT_NEAR(accel_weight(w, FilterParams{}), 0.46211715726000974, 1e-12);
}

TEST(AccelWeight, MatchesTermByTermReference) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    FilterParams p;
    p.u = 0.5 + i % 3;
    p.v = i % 2 ? 1000.0 : 3.0;
    const auto w = random_window(rng, 1 + i % 250, 0.02 * (1 + i % 5));
    EXPECT_NEAR(accel_weight(w, p), accel_weight_reference(w, p.u, p.v, p.gravity), 1e-12);
  }
  EXPECT_THROW(accel_weight({}, FilterParams{}), std::invalid_argument);
}

TEST(AccelWeight, MonotoneInBothSummands) {
  FilterParams p;
  p.v = 1.0;
  double prev = -1.0;
  for (int i = 0; i <= 100; ++i) {
    const std::vector<Vec3> w(20, Vec3{0.0, 0.0, 9.81 + 0.05 * i});
    const double cur = accel_weight(w, p);
    EXPECT_GE(cur, prev);
    EXPECT_LT(cur, 1.0);
    prev = cur;
  }
  std::mt19937_64 rng(2);
  const auto w = random_window(rng, 50, 0.05);
  prev = -1.0;
  for (int i = 0; i <= 100; ++i) {
    p.v = 0.5 * i;
    const double cur = accel_weight(w, p);
    EXPECT_GE(cur, prev);
    EXPECT_GE(cur, 0.0);
    prev = cur;
  }
}

TEST(MagWeight, ClosedForms) {
  FilterParams p;
  const std::vector<Vec3> w(10, Vec3{0.0, 22.0, -40.0});
  EXPECT_EQ(mag_weight(w, {0.0, 22.0, -40.0}, p), 1.0);
  EXPECT_NEAR(mag_weight(w, {p.h, 22.0, -40.0}, p), 0.46211715726000974, 1e-12);
  EXPECT_NEAR(mag_weight(w, {4.0 * p.h, 22.0, -40.0}, p), 2.0 / (1.0 + std::exp(-0.25)) - 1.0, 1e-12);
  EXPECT_NEAR(mag_weight(w, {4.0 * p.h, 22.0, -40.0}, p), 0.1244, 1e-4);
  EXPECT_GT(mag_weight(w, {1e-9, 22.0, -40.0}, p), 0.999999);
}

TEST(MagWeight, NonIncreasingInDeviation) {
  FilterParams p;
  const std::vector<Vec3> w(5, Vec3{1.0, 2.0, 3.0});
  double prev = 1.0;
  for (int i = 1; i < 200; ++i) {
    const double cur = mag_weight(w, {1.0 + 0.1 * i, 2.0, 3.0}, p);
    EXPECT_LE(cur, prev);
    EXPECT_GT(cur, 0.0);
    prev = cur;
  }
}

TEST(AccelOrientation, FixedPointWhenConsistent) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    const Quaternion q = random_unit(rng);
    if (std::abs(to_euler(q).pitch) > 1.4) continue;
    // Nav-frame window that already points along +z.
    std::vector<Vec3> w(20, Vec3{0.0, 0.0, 9.81});
    EXPECT_LT(rotation_distance(accel_orientation(w, q, 9.81), q), 1e-7);
    const Quaternion qa = accel_orientation(w, q, 9.81);
    EXPECT_NEAR(qa.dot(q), 1.0, 1e-12);
  }
}

TEST(AccelOrientation, RecoversTiltFromSyntheticData) {
  synth::TrajectorySpec s;
  s.duration = 1.0;
  s.gait.speed = 0.0;
  s.heading = 1.1;
  s.carry = from_euler({0.1, 0.05, 0.0});
  const ImuSequence imu = synth::inverse_imu(synth::generate_trajectory(s, 0));
  const Quaternion truth = imu.truth[0].q;
  const Quaternion est = quat_multiply(truth, quat_from_axis_angle({1, 0, 0}, 10.0 * kDeg)).normalized();
  std::vector<Vec3> nav;
  for (const Vec3& a : imu.accel) nav.push_back(rotate_to_nav(est, a));
  const Quaternion qa = accel_orientation(nav, est, 9.81);
  const Euler et = to_euler(truth), ea = to_euler(qa);
  EXPECT_NEAR(ea.roll, et.roll, 0.1 * kDeg);
  EXPECT_NEAR(ea.pitch, et.pitch, 0.1 * kDeg);
}

TEST(AccelOrientation, KeepsYaw) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 200; ++i) {
    const Quaternion q = random_unit(rng);
    if (std::abs(to_euler(q).pitch) > 1.3) continue;
    const auto w = random_window(rng, 30, 1.0);
    const Quaternion qa = accel_orientation(w, q, 9.81);
    EXPECT_NEAR(wrap_angle(to_euler(qa).yaw - to_euler(q).yaw), 0.0, 1e-9);
  }
  const std::vector<Vec3> free_fall(10, Vec3{0.1, 0.0, 0.2});
  EXPECT_THROW(accel_orientation(free_fall, Quaternion::identity(), 9.81), std::domain_error);
}

TEST(MagOrientation, FixedPointWhenAligned) {
  const Quaternion q = from_euler({0.1, -0.2, 0.7});
  const std::vector<Vec3> w(10, Vec3{0.0, 22.0, -40.0});
  EXPECT_LT(rotation_distance(mag_orientation(w, q, {0.0, 22.0, -40.0}), q), 1e-7);
}

TEST(MagOrientation, RemovesYawError) {
  synth::TrajectorySpec s;
  s.duration = 1.0;
  s.gait.speed = 0.0;
  s.heading = -0.6;
  s.carry = from_euler({0.15, 0.1, 0.0});
  const ImuSequence imu = synth::inverse_imu(synth::generate_trajectory(s, 0));
  const Quaternion truth = imu.truth[0].q;
  const Quaternion est = quat_multiply(truth, yaw_orientation(30.0 * kDeg)).normalized();
  std::vector<Vec3> nav;
  for (const Vec3& m : imu.mag) nav.push_back(rotate_to_nav(est, m));
  const Quaternion qm = mag_orientation(nav, est, synth::kDefaultMagField);
  EXPECT_LT(rotation_distance(qm, truth), 0.2 * kDeg);
}

TEST(MagOrientation, KeepsRollAndPitch) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> d(0.0, 20.0);
  for (int i = 0; i < 200; ++i) {
    const Quaternion q = random_unit(rng);
    if (std::abs(to_euler(q).pitch) > 1.3) continue;
    std::vector<Vec3> w(8);
    for (auto& m : w) m = Vec3{d(rng), d(rng), d(rng)} + Vec3{10.0, 10.0, 0.0};
    const Quaternion qm = mag_orientation(w, q, {0.0, 22.0, -40.0});
    EXPECT_NEAR(to_euler(qm).roll, to_euler(q).roll, 1e-9);
    EXPECT_NEAR(to_euler(qm).pitch, to_euler(q).pitch, 1e-9);
  }
  const std::vector<Vec3> vertical(4, Vec3{0.1, 0.1, -40.0});
  EXPECT_THROW(mag_orientation(vertical, Quaternion::identity(), {0.0, 22.0, -40.0}), std::domain_error);
}

TEST(FilterStep, StaticTiltConverges) {
  const auto c = scenarios::static_tilt_case();
  const auto run = scenarios::run_filter(c.imu, FilterParams{}, c.q0);
  EXPECT_NEAR(run.qae.front(), 30.0 * kDeg, 1e-9);
  EXPECT_LT(run.qae.back(), 2.0 * kDeg);
  EXPECT_LT(run.max_after(5.0), 2.0 * kDeg);
}

TEST(FilterStep, GyroOnlyBiasDrift) {
  const ImuSequence imu = scenarios::biased_walk({0.01, 0.0, 0.0});
  const auto run = scenarios::run_filter(imu, scenarios::gyro_only(), imu.truth[0].q);
  EXPECT_NEAR(run.qae.back(), 0.6, 0.03);
}

TEST(FilterStep, FilterBeatsGyroOnlyUnderTiltBias) {
  const ImuSequence imu = scenarios::biased_walk({0.01, 0.0, 0.0});
  const auto gyro = scenarios::run_filter(imu, scenarios::gyro_only(), imu.truth[0].q);
  const auto full = scenarios::run_filter(imu, FilterParams{}, imu.truth[0].q);
  EXPECT_LE(full.mean(), gyro.mean() / 5.0);
}

TEST(FilterStep, NoMagCorrectionWhenStationary) {
  const auto c = scenarios::static_tilt_case(0.0);
  std::vector<Vec3> pos(c.imu.size(), Vec3{});
  const auto r = align_sequence(c.imu, FilterParams{}, c.q0, pos);
  EXPECT_EQ(r.stats.mag_corrections, 0u);
  for (const auto& w : r.w_m) EXPECT_FALSE(w.has_value());
  EXPECT_GT(r.stats.accel_corrections, 0u);
}

TEST(FilterStep, DisabledCorrectionsEqualGyroIntegration) {
  const ImuSequence imu = scenarios::biased_walk({0.02, -0.01, 0.005}, 5.0);
  std::mt19937_64 rng(6);
  const Quaternion q0 = random_unit(rng);
  OrientationFilter f(scenarios::gyro_only(), imu.sample_rate, q0);
  Quaternion q = q0;
  for (std::size_t k = 0; k < imu.size(); ++k) {
    const StepOutput o = f.step(imu.accel[k], imu.gyro[k], imu.mag[k], imu.dt(), imu.truth[k].position);
    q = integrate_gyro(q, imu.gyro[k], imu.dt());
    ASSERT_EQ(o.q_new, q);
  }
}

TEST(FilterStep, UnitNormAndAlignedOutput) {
  const ImuSequence imu = scenarios::biased_walk({0.01, 0.0, 0.0}, 30.0);
  OrientationFilter f(FilterParams{}, imu.sample_rate, imu.truth[0].q);
  for (std::size_t k = 0; k < imu.size(); ++k) {
    const Quaternion pre = f.state().q;
    const StepOutput o = f.step(imu.accel[k], imu.gyro[k], imu.mag[k], imu.dt(), imu.truth[k].position);
    ASSERT_LT(std::abs(o.q_new.norm() - 1.0), 1e-12);
    EXPECT_EQ(o.aligned.accel, rotate_to_nav(pre, imu.accel[k]));
    EXPECT_EQ(o.aligned.gyro, rotate_to_nav(pre, imu.gyro[k]));
    EXPECT_EQ(o.aligned.mag, rotate_to_nav(pre, imu.mag[k]));
    if (o.w_a) {
      EXPECT_GE(*o.w_a, 0.0);
      EXPECT_LT(*o.w_a, 1.0);
    }
    if (o.w_m) {
      EXPECT_GT(*o.w_m, 0.0);
      EXPECT_LE(*o.w_m, 1.0);
    }
  }
  EXPECT_GT(f.state().stats.mag_corrections, 0u);
}

TEST(FilterStep, AccelWindowSize) {
  OrientationFilter f(FilterParams{}, 200.0);
  EXPECT_EQ(f.state().accel_capacity, 200u);
  FilterParams p;
  p.t_step = 0.333;
  EXPECT_EQ(OrientationFilter(p, 200.0).state().accel_capacity, 67u);
  p.delta = 0.0;
  EXPECT_THROW(OrientationFilter(p, 200.0), std::invalid_argument);
  EXPECT_THROW(OrientationFilter(FilterParams{}, 200.0).step({}, {}, std::nullopt, 0.0), std::invalid_argument);
}

TEST(FilterStep, InvertedMagWeightTrustsMagMore) {
  const ImuSequence imu = scenarios::biased_walk({0.0, 0.0, 0.01});
  FilterParams p;
  const auto nominal = scenarios::run_filter(imu, p, imu.truth[0].q);
  p.mag_weight_inverted = true;
  const auto inverted = scenarios::run_filter(imu, p, imu.truth[0].q);
  EXPECT_LT(inverted.mean(), nominal.mean());
}
