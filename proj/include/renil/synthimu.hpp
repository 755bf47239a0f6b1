#pragma once

// Synthetic pedestrian trajectories and the inverse-strapdown IMU generator.
// Positions are planar except for a small vertical gait bounce; orientation
// follows the path heading plus a yaw sway at stride frequency, composed with a
// fixed device carry pose.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "renil/geom.hpp"
#include "renil/imu.hpp"

namespace renil::synth {

inline constexpr double kDefaultGravity = 9.81;
inline constexpr Vec3 kDefaultMagField{0.0, 22.0, -40.0};  // uT

enum class PathKind { kStraight, kCircle, kWaypointSpline };

inline std::string to_string(PathKind k) {
  switch (k) {
    case PathKind::kStraight: return "straight";
    case PathKind::kCircle: return "circle";
    case PathKind::kWaypointSpline: return "spline";
  }
  return "unknown";
}

inline PathKind path_kind_from_string(const std::string& s) {
  if (s == "straight") return PathKind::kStraight;
  if (s == "circle") return PathKind::kCircle;
  if (s == "spline") return PathKind::kWaypointSpline;
  throw std::invalid_argument("unsupported path kind: " + s);
}

struct GaitModel {
  double speed = 1.0;             // m/s
  double step_frequency = 1.8;    // Hz
  double bounce_amplitude = 0.0;  // m, vertical
  double sway_amplitude = 0.0;    // rad, yaw sway at stride frequency
  double surge_amplitude = 0.0;   // m, along-track oscillation at step frequency
  double bounce_phase = 0.5 * std::numbers::pi;  // rad, bounce lead over surge
};

struct TrajectorySpec {
  double duration = 10.0;     // s
  double sample_rate = 200.0; // Hz
  PathKind kind = PathKind::kStraight;
  Vec3 start;                 // m, z ignored
  double heading = 0.0;       // rad, straight path direction
  double radius = 5.0;        // m, circle
  bool clockwise = false;     // circle
  std::vector<Vec3> waypoints;  // spline knots, z ignored
  GaitModel gait;
  Quaternion carry = Quaternion::identity();  // device pose relative to walking body

  void validate() const {
    if (!(duration > 0.0)) throw std::invalid_argument("trajectory duration must be positive");
    if (!(sample_rate > 0.0)) throw std::invalid_argument("sample rate must be positive");
    if (!(gait.speed >= 0.0)) throw std::invalid_argument("gait speed must be non-negative");
    if (kind == PathKind::kCircle && !(radius > 0.0)) {
      throw std::invalid_argument("circle radius must be positive");
    }
    if (kind == PathKind::kWaypointSpline && waypoints.size() < 2) {
      throw std::invalid_argument("spline path needs at least two waypoints");
    }
    require_unit(carry);
  }
};

struct DisturbancePatch {
  Vec3 location;  // nav frame, m
  double radius = 1.0;
  Vec3 offset;    // nav frame, uT
};

struct NoiseSpec {
  double accel_sigma = 0.0;
  double gyro_sigma = 0.0;
  Vec3 gyro_bias;
  double mag_sigma = 0.0;
  std::vector<DisturbancePatch> mag_patches;
};

// Uniform Catmull-Rom spline through planar waypoints, evaluated by arc length.
class WaypointSpline {
 public:
  explicit WaypointSpline(std::vector<Vec3> pts) : pts_(std::move(pts)) {
    if (pts_.size() < 2) throw std::invalid_argument("spline needs two waypoints");
    for (auto& p : pts_) p.z = 0.0;
    for (std::size_t i = 1; i < pts_.size(); ++i) {
      if ((pts_[i] - pts_[i - 1]).norm() < 1e-9) {
        throw std::invalid_argument("consecutive spline waypoints coincide");
      }
    }
    cumulative_.push_back(0.0);
    for (std::size_t s = 0; s + 1 < pts_.size(); ++s) {
      cumulative_.push_back(cumulative_.back() + segment_length(s, 1.0));
    }
  }

  double length() const { return cumulative_.back(); }
  std::size_t segments() const { return pts_.size() - 1; }
  double knot_arclength(std::size_t i) const { return cumulative_.at(i); }

  // Position and unit tangent at arc length s; beyond the ends the path
  // continues straight along the end tangent.
  void evaluate(double s, Vec3& pos, Vec3& tangent) const {
    if (s <= 0.0) {
      const Vec3 d = derivative(0, 0.0);
      tangent = d / d.norm();
      pos = pts_.front() + tangent * s;
      return;
    }
    if (s >= length()) {
      const std::size_t last = segments() - 1;
      const Vec3 d = derivative(last, 1.0);
      tangent = d / d.norm();
      pos = pts_.back() + tangent * (s - length());
      return;
    }
    std::size_t seg = 0;
    while (seg + 1 < segments() && cumulative_[seg + 1] <= s) ++seg;
    const double target = s - cumulative_[seg];
    const double seg_len = cumulative_[seg + 1] - cumulative_[seg];
    double u = target / seg_len;
    for (int it = 0; it < 50; ++it) {
      const double f = segment_length(seg, u) - target;
      const double df = derivative(seg, u).norm();
      const double step = f / df;
      u = std::clamp(u - step, 0.0, 1.0);
      if (std::abs(step) < 1e-15) break;
    }
    pos = point(seg, u);
    const Vec3 d = derivative(seg, u);
    tangent = d / d.norm();
  }

 private:
  const Vec3& knot(long i) const {
    const long n = static_cast<long>(pts_.size());
    return pts_[static_cast<std::size_t>(std::clamp(i, 0L, n - 1))];
  }

  // Catmull-Rom control points, with reflected phantom endpoints.
  std::array<Vec3, 4> controls(std::size_t seg) const {
    const long i = static_cast<long>(seg);
    const Vec3 p1 = knot(i), p2 = knot(i + 1);
    const Vec3 p0 = seg == 0 ? p1 * 2.0 - p2 : knot(i - 1);
    const Vec3 p3 = seg + 2 >= pts_.size() ? p2 * 2.0 - p1 : knot(i + 2);
    return {p0, p1, p2, p3};
  }

  Vec3 point(std::size_t seg, double u) const {
    const auto [p0, p1, p2, p3] = controls(seg);
    const double u2 = u * u, u3 = u2 * u;
    return (p1 * 2.0 + (p2 - p0) * u + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * u2 +
            (p1 * 3.0 - p0 - p2 * 3.0 + p3) * u3) *
           0.5;
  }

  Vec3 derivative(std::size_t seg, double u) const {
    const auto [p0, p1, p2, p3] = controls(seg);
    return ((p2 - p0) + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * (2.0 * u) +
            (p1 * 3.0 - p0 - p2 * 3.0 + p3) * (3.0 * u * u)) *
           0.5;
  }

  // 10-point Gauss-Legendre arc length over [0, u].
  double segment_length(std::size_t seg, double u) const {
    static constexpr std::array<double, 5> x{0.1488743389816312, 0.4333953941292472,
                                             0.6794095682990244, 0.8650633666889845,
                                             0.9739065285171717};
    static constexpr std::array<double, 5> w{0.2955242247147529, 0.2692667193099963,
                                             0.2190863625159820, 0.1494513491505806,
                                             0.0666713443086881};
    double acc = 0.0;
    const double half = 0.5 * u;
    for (std::size_t k = 0; k < x.size(); ++k) {
      acc += w[k] * (derivative(seg, half * (1.0 + x[k])).norm() +
                     derivative(seg, half * (1.0 - x[k])).norm());
    }
    return acc * half;
  }

  std::vector<Vec3> pts_;
  std::vector<double> cumulative_;
};

namespace detail {

struct GaitPhase {
  double phase = 0.0;  // rad, common offset of all gait terms
  double sway_phase = 0.0;
};

// Along-track arc length: constant speed plus an asymmetric surge term.
inline double arclength(const TrajectorySpec& spec, const GaitPhase& g, double t) {
  const double w = 2.0 * std::numbers::pi * spec.gait.step_frequency;
  const double a = spec.gait.surge_amplitude;
  double s = spec.gait.speed * t;
  if (a != 0.0) {
    s += a * ((std::sin(w * t + g.phase) - std::sin(g.phase)) +
              0.5 * (std::sin(2.0 * (w * t + g.phase)) - std::sin(2.0 * g.phase)));
  }
  return s;
}

}  // namespace detail

// Poses at k / rate for k = 0..round(duration * rate), inclusive of the end.
inline std::vector<PoseSample> generate_trajectory(const TrajectorySpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
  detail::GaitPhase g;
  g.phase = phase_dist(rng);
  g.sway_phase = phase_dist(rng);

  std::unique_ptr<WaypointSpline> spline;
  if (spec.kind == PathKind::kWaypointSpline) {
    spline = std::make_unique<WaypointSpline>(spec.waypoints);
  }

  const auto n = static_cast<std::size_t>(std::llround(spec.duration * spec.sample_rate));
  const double w = 2.0 * std::numbers::pi * spec.gait.step_frequency;
  std::vector<PoseSample> poses;
  poses.reserve(n + 1);
  for (std::size_t k = 0; k <= n; ++k) {
    const double t = static_cast<double>(k) / spec.sample_rate;
    const double s = detail::arclength(spec, g, t);
    Vec3 pos, tangent;
    switch (spec.kind) {
      case PathKind::kStraight: {
        tangent = {std::cos(spec.heading), std::sin(spec.heading), 0.0};
        pos = Vec3{spec.start.x, spec.start.y, 0.0} + tangent * s;
        break;
      }
      case PathKind::kCircle: {
        // Start point is on the circle; the centre sits to the left (ccw) or right (cw).
        const double dir = spec.clockwise ? -1.0 : 1.0;
        const Vec3 h0{std::cos(spec.heading), std::sin(spec.heading), 0.0};
        const Vec3 left{-h0.y, h0.x, 0.0};
        const Vec3 centre = Vec3{spec.start.x, spec.start.y, 0.0} + left * (dir * spec.radius);
        const double a0 = std::atan2(-left.y * dir, -left.x * dir);
        const double a = a0 + dir * s / spec.radius;
        pos = centre + Vec3{std::cos(a), std::sin(a), 0.0} * spec.radius;
        tangent = Vec3{-std::sin(a), std::cos(a), 0.0} * dir;
        break;
      }
      case PathKind::kWaypointSpline: {
        spline->evaluate(s, pos, tangent);
        break;
      }
    }
    if (spec.gait.bounce_amplitude != 0.0) {
      pos.z = spec.gait.bounce_amplitude * std::sin(w * t + g.phase + spec.gait.bounce_phase);
    }
    double yaw = std::atan2(tangent.y, tangent.x);
    if (spec.gait.sway_amplitude != 0.0) {
      yaw += spec.gait.sway_amplitude * std::sin(0.5 * w * t + g.sway_phase);
    }
    // Carry pose first, then the body yaw: rotate_to_nav(carry (x) yaw, v) = Rz(yaw) C v.
    const Quaternion q = quat_multiply(spec.carry, yaw_orientation(yaw)).normalized();
    poses.push_back({t, pos, q});
  }
  return poses;
}

// Specific force, body rate and magnetic field in the device frame.
// accel_k = q_k (x) (p''_k + g z) (x) q_k^-1 with central second differences;
// gyro_k is the constant body rate carrying q_k to q_{k+1} (last sample repeats).
inline ImuSequence inverse_imu(const std::vector<PoseSample>& poses,
                               double gravity = kDefaultGravity,
                               const Vec3& mag_field = kDefaultMagField) {
  const std::size_t n = poses.size();
  if (n < 3) throw std::invalid_argument("inverse_imu needs at least 3 poses");
  const double dt = poses[1].t - poses[0].t;
  if (!(dt > 0.0)) throw std::invalid_argument("pose timestamps must increase");
  for (std::size_t i = 1; i < n; ++i) {
    if (std::abs((poses[i].t - poses[i - 1].t) - dt) > 1e-9) {
      throw std::invalid_argument("pose timestamps are not uniform");
    }
  }

  ImuSequence imu;
  imu.sample_rate = 1.0 / dt;
  imu.frame = Frame::kDevice;
  imu.t.resize(n);
  imu.accel.resize(n);
  imu.gyro.resize(n);
  imu.mag.resize(n);
  imu.truth = poses;

  std::vector<Vec3> acc(n);
  const double inv_dt2 = 1.0 / (dt * dt);
  for (std::size_t k = 1; k + 1 < n; ++k) {
    acc[k] = (poses[k + 1].position - poses[k].position * 2.0 + poses[k - 1].position) * inv_dt2;
  }
  if (n >= 4) {
    acc[0] = (poses[0].position * 2.0 - poses[1].position * 5.0 + poses[2].position * 4.0 -
              poses[3].position) *
             inv_dt2;
    acc[n - 1] = (poses[n - 1].position * 2.0 - poses[n - 2].position * 5.0 +
                  poses[n - 3].position * 4.0 - poses[n - 4].position) *
                 inv_dt2;
  } else {
    acc[0] = acc[1];
    acc[n - 1] = acc[1];
  }

  const Vec3 up{0.0, 0.0, gravity};
  for (std::size_t k = 0; k < n; ++k) {
    const Quaternion& q = poses[k].q;
    imu.t[k] = poses[k].t;
    imu.accel[k] = rotate_to_device(q, acc[k] + up);
    imu.mag[k] = rotate_to_device(q, mag_field);
    if (k + 1 < n) {
      imu.gyro[k] = body_rate_between(q, poses[k + 1].q, dt);
    } else {
      imu.gyro[k] = imu.gyro[k - 1];
    }
  }
  return imu;
}

inline ImuSequence add_noise(const ImuSequence& clean, const NoiseSpec& spec, std::uint64_t seed) {
  for (const double s : {spec.accel_sigma, spec.gyro_sigma, spec.mag_sigma}) {
    if (!(s >= 0.0)) throw std::invalid_argument("noise sigma must be non-negative");
  }
  ImuSequence out = clean;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  auto jitter = [&](double sigma) -> Vec3 {
    if (sigma == 0.0) return {};
    const double a = unit(rng), b = unit(rng), c = unit(rng);
    return Vec3{a, b, c} * sigma;
  };
  if (!spec.mag_patches.empty() && (!clean.has_truth() || !clean.has_mag())) {
    throw std::invalid_argument("magnetic disturbance patches need truth poses and mag data");
  }
  for (std::size_t k = 0; k < out.size(); ++k) {
    out.accel[k] += jitter(spec.accel_sigma);
    out.gyro[k] += jitter(spec.gyro_sigma) + spec.gyro_bias;
    if (out.has_mag()) {
      out.mag[k] += jitter(spec.mag_sigma);
      for (const auto& patch : spec.mag_patches) {
        const Vec3 d = out.truth[k].position - patch.location;
        if (Vec3{d.x, d.y, 0.0}.norm() <= patch.radius) {
          out.mag[k] += rotate_to_device(out.truth[k].q, patch.offset);
        }
      }
    }
  }
  return out;
}

// Plausible walking parameters: cadence and gait amplitudes grow with speed.
inline GaitModel walking_gait(double speed) {
  GaitModel g;
  g.speed = speed;
  g.step_frequency = 1.0 + 0.6 * speed;
  g.bounce_amplitude = 0.012 + 0.006 * speed;
  g.surge_amplitude = 0.004 * speed;
  g.sway_amplitude = 0.08;
  g.bounce_phase = 0.0;  // vertical and along-track accelerations in phase
  return g;
}

// Random straight / circle / spline walk used for desk-scale corpora.
inline TrajectorySpec random_walk_spec(PathKind kind, double duration, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  TrajectorySpec spec;
  spec.duration = duration;
  spec.kind = kind;
  spec.heading = 2.0 * std::numbers::pi * uni(rng);
  spec.gait = walking_gait(0.7 + 0.9 * uni(rng));
  spec.radius = 4.0 + 8.0 * uni(rng);
  spec.clockwise = uni(rng) < 0.5;
  if (kind == PathKind::kWaypointSpline) {
    Vec3 p{};
    double h = spec.heading;
    const double path_len = spec.gait.speed * duration;
    const int legs = std::max(3, static_cast<int>(path_len / 8.0) + 1);
    spec.waypoints.push_back(p);
    for (int i = 0; i < legs; ++i) {
      h += (uni(rng) - 0.5) * 1.6;
      const double len = 6.0 + 6.0 * uni(rng);
      p += Vec3{std::cos(h), std::sin(h), 0.0} * len;
      spec.waypoints.push_back(p);
    }
  }
  // Device held in front of the body, pitched and rolled by a few degrees.
  const Euler carry{(uni(rng) - 0.5) * 0.3, (uni(rng) - 0.5) * 0.3, 0.0};
  spec.carry = from_euler(carry);
  return spec;
}

}  // namespace renil::synth
