#pragma once

// Motion-aware orientation filter. The gyro propagates q every sample; an
// accelerometer window of one gait cycle and a distance-triggered
// magnetometer window produce tilt-only and yaw-only corrections that are
// blended back into q with adaptive weights.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "renil/geom.hpp"
#include "renil/imu.hpp"

namespace renil::orient {

struct FilterParams {
  double u = 1.0;
  double v = 1000.0;
  double h = 8.0;
  double gravity = 9.81;     // m/s^2
  double t_step = 1.0;       // s, accelerometer window (one walking cycle)
  double delta = 10.0;       // m, magnetometer window trigger distance
  bool enable_accel = true;
  bool enable_mag = true;
  // Use 1 - W_m as the gyro-branch weight instead of W_m.
  bool mag_weight_inverted = false;

  void validate() const {
    if (!(u > 0 && v > 0 && h > 0 && gravity > 0 && t_step > 0 && delta > 0)) {
      throw std::invalid_argument("filter parameters must all be positive");
    }
  }
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

template <class Range>
Vec3 mean_of(const Range& samples) {
  Vec3 m;
  for (const Vec3& s : samples) m += s;
  return m / static_cast<double>(samples.size());
}

// W_a = 2 sigma( u/|D| sum | |a_i| - G | + v sum_j Var_j(a) ) - 1, population variance.
inline double accel_weight(std::span<const Vec3> window, const FilterParams& p) {
  if (window.empty()) throw std::invalid_argument("accel window is empty");
  const double n = static_cast<double>(window.size());
  double intensity = 0.0;
  for (const Vec3& a : window) intensity += std::abs(a.norm() - p.gravity);
  const Vec3 m = mean_of(window);
  double var = 0.0;
  for (const Vec3& a : window) {
    const Vec3 d = a - m;
    var += d.x * d.x + d.y * d.y + d.z * d.z;
  }
  var /= n;
  return 2.0 * sigmoid(p.u / n * intensity + p.v * var) - 1.0;
}

// W_m = 2 sigma( h / |m_hist - mean(D^m)| ) - 1; zero deviation gives 1.
inline double mag_weight(std::span<const Vec3> window, const Vec3& history_mean,
                         const FilterParams& p) {
  if (window.empty()) throw std::invalid_argument("mag window is empty");
  const double dev = (history_mean - mean_of(window)).norm();
  if (dev == 0.0) return 1.0;
  return 2.0 * sigmoid(p.h / dev) - 1.0;
}

// Tilt-only correction: roll and pitch from the window-mean specific force
// (expressed in the device frame through q), yaw kept from q.
inline Quaternion accel_orientation(std::span<const Vec3> nav_window, const Quaternion& q,
                                    double gravity) {
  if (nav_window.empty()) throw std::invalid_argument("accel window is empty");
  const Vec3 mean_nav = mean_of(nav_window);
  if (!(mean_nav.norm() > 0.1 * gravity)) {
    throw std::domain_error("accelerometer window is degenerate (free fall)");
  }
  const Vec3 a = rotate_to_device(q, mean_nav);
  Euler e = to_euler(q);
  e.roll = std::atan2(a.y, a.z);
  e.pitch = std::atan2(-a.x, std::hypot(a.y, a.z));
  Quaternion qa = from_euler(e);
  if (qa.dot(q) < 0.0) qa = -qa;
  return qa;
}

// Yaw-only correction aligning the horizontal projection of the measured
// nav-frame field with that of ref_field.
inline Quaternion mag_orientation(std::span<const Vec3> nav_window, const Quaternion& q,
                                  const Vec3& ref_field) {
  if (nav_window.empty()) throw std::invalid_argument("mag window is empty");
  const Vec3 m = mean_of(nav_window);
  if (std::hypot(m.x, m.y) <= 1.0 || std::hypot(ref_field.x, ref_field.y) <= 1.0) {
    throw std::domain_error("horizontal magnetic field is degenerate");
  }
  const double dpsi = std::atan2(ref_field.y, ref_field.x) - std::atan2(m.y, m.x);
  Quaternion qm = quat_multiply(q, yaw_orientation(wrap_angle(dpsi))).normalized();
  if (qm.dot(q) < 0.0) qm = -qm;
  return qm;
}

struct AlignedSample {
  Vec3 accel;
  Vec3 gyro;
  Vec3 mag;
};

struct StepOutput {
  Quaternion q_new;
  std::optional<double> w_a;
  std::optional<double> w_m;
  AlignedSample aligned;
};

struct FilterStats {
  std::size_t accel_corrections = 0;
  std::size_t mag_corrections = 0;
  std::size_t skipped = 0;
};

struct FilterState {
  Quaternion q = Quaternion::identity();
  std::vector<Vec3> accel_window;
  std::size_t accel_capacity = 0;
  std::vector<Vec3> mag_window;
  std::optional<Vec3> mag_anchor;
  Vec3 mag_history_mean;
  Vec3 mag_reference;
  std::size_t mag_windows = 0;
  FilterStats stats;
};

class OrientationFilter {
 public:
  OrientationFilter(const FilterParams& params, double sample_rate,
                    const Quaternion& q0 = Quaternion::identity())
      : params_(params) {
    params_.validate();
    if (!(sample_rate > 0.0)) throw std::invalid_argument("sample rate must be positive");
    require_unit(q0);
    state_.q = q0;
    state_.accel_capacity =
        static_cast<std::size_t>(std::ceil(params_.t_step * sample_rate - 1e-9));
    state_.accel_window.reserve(state_.accel_capacity);
  }

  const FilterState& state() const { return state_; }
  const FilterParams& params() const { return params_; }

  // position: current planar position estimate used for the mag window trigger.
  StepOutput step(const Vec3& accel, const Vec3& gyro, const std::optional<Vec3>& mag, double dt,
                  const std::optional<Vec3>& position = std::nullopt) {
    if (!(dt > 0.0)) throw std::invalid_argument("filter step requires dt > 0");
    StepOutput out;
    const Quaternion q_pre = state_.q;
    out.aligned.accel = rotate_to_nav(q_pre, accel);
    out.aligned.gyro = rotate_to_nav(q_pre, gyro);
    if (mag) out.aligned.mag = rotate_to_nav(q_pre, *mag);

    state_.q = integrate_gyro(state_.q, gyro, dt);

    if (params_.enable_accel) {
      state_.accel_window.push_back(out.aligned.accel);
      if (state_.accel_window.size() >= state_.accel_capacity) {
        const double wa = accel_weight(state_.accel_window, params_);
        try {
          const Quaternion qa = accel_orientation(state_.accel_window, state_.q, params_.gravity);
          state_.q = blend(state_.q, qa, wa);
          out.w_a = wa;
          ++state_.stats.accel_corrections;
        } catch (const std::domain_error&) {
          ++state_.stats.skipped;
        }
        state_.accel_window.clear();
      }
    }

    if (params_.enable_mag && mag) {
      state_.mag_window.push_back(out.aligned.mag);
      if (position) {
        const Vec3 p{position->x, position->y, 0.0};
        if (!state_.mag_anchor) state_.mag_anchor = p;
        if ((p - *state_.mag_anchor).norm() >= params_.delta) {
          close_mag_window(out);
          state_.mag_anchor = p;
        }
      }
    }
    out.q_new = state_.q;
    return out;
  }

 private:
  void close_mag_window(StepOutput& out) {
    const Vec3 mean = mean_of(state_.mag_window);
    if (state_.mag_windows == 0) {
      state_.mag_history_mean = mean;
      state_.mag_reference = mean;
    } else {
      const double wm = mag_weight(state_.mag_window, state_.mag_history_mean, params_);
      const double w_gyro = params_.mag_weight_inverted ? 1.0 - wm : wm;
      try {
        const Quaternion qm = mag_orientation(state_.mag_window, state_.q, state_.mag_reference);
        state_.q = blend(state_.q, qm, w_gyro);
        out.w_m = wm;
        ++state_.stats.mag_corrections;
      } catch (const std::domain_error&) {
        ++state_.stats.skipped;
      }
      const double n = static_cast<double>(state_.mag_windows);
      state_.mag_history_mean = (state_.mag_history_mean * n + mean) / (n + 1.0);
    }
    ++state_.mag_windows;
    state_.mag_window.clear();
  }

  FilterParams params_;
  FilterState state_;
};

struct AlignmentResult {
  ImuSequence aligned;                 // nav frame
  std::vector<Quaternion> orientation;  // pre-update q of every sample
  std::vector<std::optional<double>> w_a;
  std::vector<std::optional<double>> w_m;
  FilterStats stats;
};

// Runs the filter over a device-frame sequence. Positions for the mag window
// trigger are taken from `positions` when given (one per sample).
inline AlignmentResult align_sequence(const ImuSequence& imu, const FilterParams& params,
                                      const Quaternion& q0,
                                      std::span<const Vec3> positions = {}) {
  imu.validate();
  if (!positions.empty() && positions.size() != imu.size()) {
    throw std::invalid_argument("position track length differs from IMU length");
  }
  OrientationFilter filter(params, imu.sample_rate, q0);
  AlignmentResult r;
  r.aligned.sample_rate = imu.sample_rate;
  r.aligned.frame = Frame::kNav;
  r.aligned.t = imu.t;
  r.aligned.truth = imu.truth;
  const std::size_t n = imu.size();
  r.aligned.accel.resize(n);
  r.aligned.gyro.resize(n);
  if (imu.has_mag()) r.aligned.mag.resize(n);
  r.orientation.resize(n);
  r.w_a.resize(n);
  r.w_m.resize(n);
  const double dt = imu.dt();
  for (std::size_t k = 0; k < n; ++k) {
    r.orientation[k] = filter.state().q;
    std::optional<Vec3> mag;
    if (imu.has_mag()) mag = imu.mag[k];
    std::optional<Vec3> pos;
    if (!positions.empty()) pos = positions[k];
    const StepOutput s = filter.step(imu.accel[k], imu.gyro[k], mag, dt, pos);
    r.aligned.accel[k] = s.aligned.accel;
    r.aligned.gyro[k] = s.aligned.gyro;
    if (imu.has_mag()) r.aligned.mag[k] = s.aligned.mag;
    r.w_a[k] = s.w_a;
    r.w_m[k] = s.w_m;
  }
  r.stats = filter.state().stats;
  return r;
}

// Rotates a device-frame sequence with known orientations (e.g. ground truth).
inline ImuSequence align_with_truth(const ImuSequence& imu) {
  if (!imu.has_truth()) throw std::invalid_argument("sequence has no truth orientation");
  ImuSequence out = imu;
  out.frame = Frame::kNav;
  for (std::size_t k = 0; k < imu.size(); ++k) {
    const Quaternion& q = imu.truth[k].q;
    out.accel[k] = rotate_to_nav(q, imu.accel[k]);
    out.gyro[k] = rotate_to_nav(q, imu.gyro[k]);
    if (imu.has_mag()) out.mag[k] = rotate_to_nav(q, imu.mag[k]);
  }
  return out;
}

}  // namespace renil::orient
