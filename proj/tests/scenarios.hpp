#pragma once

// Synthetic scenarios shared by the unit tests and the acceptance binary.

#include <cmath>
#include <numbers>
#include <vector>

#include "renil/geom.hpp"
#include "renil/orient.hpp"
#include "renil/synthimu.hpp"

namespace renil::scenarios {

inline constexpr double kDeg = std::numbers::pi / 180.0;

struct OrientRun {
  std::vector<double> t;
  std::vector<double> qae;  // rad, per sample, pre-update q against truth

  double mean() const {
    double s = 0.0;
    for (double v : qae) s += v;
    return s / static_cast<double>(qae.size());
  }
  double max_after(double t0) const {
    double m = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i)
      if (t[i] >= t0) m = std::max(m, qae[i]);
    return m;
  }
};

inline OrientRun run_filter(const ImuSequence& imu, const orient::FilterParams& p, const Quaternion& q0) {
  std::vector<Vec3> pos;
  for (const auto& s : imu.truth) pos.push_back(s.position);
  const auto r = orient::align_sequence(imu, p, q0, pos);
  OrientRun out;
  for (std::size_t k = 0; k < imu.size(); ++k) {
    out.t.push_back(imu.t[k]);
    out.qae.push_back(rotation_distance(r.orientation[k], imu.truth[k].q));
  }
  return out;
}

inline orient::FilterParams gyro_only() {
  orient::FilterParams p;
  p.enable_accel = false;
  p.enable_mag = false;
  return p;
}

// Stationary device, clean data, initial estimate off by `tilt` in roll with
// the true yaw.
struct TiltCase {
  ImuSequence imu;
  Quaternion q0;
};

inline TiltCase static_tilt_case(double tilt = 30.0 * kDeg, double duration = 10.0) {
  synth::TrajectorySpec s;
  s.duration = duration;
  s.gait.speed = 0.0;
  s.heading = 0.4;
  TiltCase c;
  c.imu = synth::inverse_imu(synth::generate_trajectory(s, 1));
  Euler e = to_euler(c.imu.truth[0].q);
  e.roll += tilt;
  c.q0 = from_euler(e);
  return c;
}

// Smooth 1 m/s straight walk with a tilted carry pose and a constant gyro
// bias; clean accelerometer and magnetometer.
inline ImuSequence biased_walk(const Vec3& bias, double duration = 60.0) {
  synth::TrajectorySpec s;
  s.duration = duration;
  s.gait.speed = 1.0;
  s.heading = 0.3;
  s.carry = from_euler({0.2, -0.15, 0.0});
  const ImuSequence clean = synth::inverse_imu(synth::generate_trajectory(s, 2));
  synth::NoiseSpec n;
  n.gyro_bias = bias;
  return synth::add_noise(clean, n, 3);
}

}  // namespace renil::scenarios
