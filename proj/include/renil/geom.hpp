#pragma once

// Quaternion algebra and frame rotations.
//
// Frame convention: a quaternion q describes the device orientation and maps
// a device-frame vector X to the navigation frame as  X^g = q^-1 (x) X (x) q.
// This is the transpose of the usual q X q^-1 convention. Every module in the
// library (simulator, filter, augmentations) uses it, so device->nav semantics
// stay consistent.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace renil {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr Vec3() = default;
  constexpr Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  constexpr Vec3 operator-() const { return {-x, -y, -z}; }
  constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  constexpr Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  constexpr Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  constexpr Vec3& operator-=(const Vec3& o) {
    x -= o.x;
    y -= o.y;
    z -= o.z;
    return *this;
  }
  constexpr Vec3& operator*=(double s) {
    x *= s;
    y *= s;
    z *= s;
    return *this;
  }
  constexpr bool operator==(const Vec3&) const = default;

  constexpr double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  constexpr Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const { return std::sqrt(dot(*this)); }
  constexpr double squared_norm() const { return dot(*this); }
  bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

inline constexpr Vec3 operator*(double s, const Vec3& v) { return v * s; }

struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr Quaternion() = default;
  constexpr Quaternion(double w_, double x_, double y_, double z_) : w(w_), x(x_), y(y_), z(z_) {}

  static constexpr Quaternion identity() { return {1.0, 0.0, 0.0, 0.0}; }
  static constexpr Quaternion pure(const Vec3& v) { return {0.0, v.x, v.y, v.z}; }

  constexpr Vec3 vec() const { return {x, y, z}; }
  constexpr Quaternion conjugate() const { return {w, -x, -y, -z}; }
  constexpr Quaternion operator-() const { return {-w, -x, -y, -z}; }
  constexpr Quaternion operator+(const Quaternion& o) const {
    return {w + o.w, x + o.x, y + o.y, z + o.z};
  }
  constexpr Quaternion operator*(double s) const { return {w * s, x * s, y * s, z * s}; }
  constexpr bool operator==(const Quaternion&) const = default;

  constexpr double dot(const Quaternion& o) const {
    return w * o.w + x * o.x + y * o.y + z * o.z;
  }
  constexpr double squared_norm() const { return dot(*this); }
  double norm() const { return std::sqrt(squared_norm()); }

  Quaternion normalized() const {
    const double n = norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw std::invalid_argument("cannot normalize a zero or non-finite quaternion");
    }
    return {w / n, x / n, y / n, z / n};
  }

  // q^-1 = conj(q) / |q|^2
  Quaternion inverse() const {
    const double n2 = squared_norm();
    if (!(n2 > 0.0)) throw std::invalid_argument("zero quaternion has no inverse");
    return conjugate() * (1.0 / n2);
  }
};

inline constexpr double kUnitTolerance = 1e-6;

// Hamilton product.
inline constexpr Quaternion quat_multiply(const Quaternion& a, const Quaternion& b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
          a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
          a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

inline constexpr Quaternion operator*(const Quaternion& a, const Quaternion& b) {
  return quat_multiply(a, b);
}

inline bool is_unit(const Quaternion& q, double tol = kUnitTolerance) {
  return std::abs(q.norm() - 1.0) <= tol;
}

inline void require_unit(const Quaternion& q) {
  if (!is_unit(q)) throw std::invalid_argument("quaternion is not unit-norm");
}

// Device -> navigation: vec(q^-1 (x) (0,v) (x) q). For unit q, q^-1 == conj(q).
inline Vec3 rotate_to_nav(const Quaternion& q, const Vec3& v) {
  require_unit(q);
  return quat_multiply(quat_multiply(q.conjugate(), Quaternion::pure(v)), q).vec();
}

// Navigation -> device: vec(q (x) (0,v) (x) q^-1).
inline Vec3 rotate_to_device(const Quaternion& q, const Vec3& v) {
  require_unit(q);
  return quat_multiply(quat_multiply(q, Quaternion::pure(v)), q.conjugate()).vec();
}

// Standard Hamilton exponential (cos(a/2), sin(a/2) * axis).
inline Quaternion quat_from_axis_angle(const Vec3& axis, double angle) {
  const double n = axis.norm();
  if (!(n > 0.0)) throw std::invalid_argument("rotation axis must be non-zero");
  const double s = std::sin(0.5 * angle) / n;
  return Quaternion{std::cos(0.5 * angle), axis.x * s, axis.y * s, axis.z * s}.normalized();
}

// exp of a rotation vector; small angles use the series form.
inline Quaternion quat_exp(const Vec3& rotvec) {
  const double theta = rotvec.norm();
  const double half = 0.5 * theta;
  double k;
  if (theta < 1e-8) {
    k = 0.5 - theta * theta / 48.0;
  } else {
    k = std::sin(half) / theta;
  }
  return Quaternion{std::cos(half), rotvec.x * k, rotvec.y * k, rotvec.z * k}.normalized();
}

// Rotation vector of a unit quaternion, angle in [0, pi] (sign chosen so w >= 0).
inline Vec3 quat_log(const Quaternion& q_in) {
  Quaternion q = q_in.w < 0.0 ? -q_in : q_in;
  const Vec3 v = q.vec();
  const double s = v.norm();
  if (s < 1e-12) return v * 2.0;
  const double angle = 2.0 * std::atan2(s, q.w);
  return v * (angle / s);
}

struct AxisAngle {
  Vec3 axis;
  double angle = 0.0;
};

inline AxisAngle quat_to_axis_angle(const Quaternion& q) {
  const Vec3 r = quat_log(q);
  const double a = r.norm();
  if (a < 1e-15) return {{1.0, 0.0, 0.0}, 0.0};
  return {r / a, a};
}

// Angle of the relative rotation between two orientations, in [0, pi].
// Sign-insensitive (double cover).
inline double rotation_distance(const Quaternion& a, const Quaternion& b) {
  const double d = std::abs(a.normalized().dot(b.normalized()));
  return 2.0 * std::acos(std::min(1.0, d));
}

// Advance the orientation by a constant body-frame rate over dt using the
// exponential map. Under the q^-1 X q convention a body rotation e acts as
// q_new = conj(e) (x) q.
inline Quaternion integrate_gyro(const Quaternion& q, const Vec3& omega, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("integrate_gyro requires dt > 0");
  if (omega.x == 0.0 && omega.y == 0.0 && omega.z == 0.0) return q;
  const Quaternion e = quat_exp(omega * dt);
  return quat_multiply(e.conjugate(), q).normalized();
}

// Body rate that carries q0 to q1 over dt (inverse of integrate_gyro).
inline Vec3 body_rate_between(const Quaternion& q0, const Quaternion& q1, double dt) {
  // q1 = conj(e) q0  =>  e = conj(q1 q0^-1)
  const Quaternion e = quat_multiply(q1, q0.conjugate()).conjugate();
  return quat_log(e) / dt;
}

// Hemisphere-aligned normalized linear interpolation: w*q_main + (1-w)*q_corr.
inline Quaternion blend(const Quaternion& q_main, const Quaternion& q_corr, double w) {
  require_unit(q_main);
  require_unit(q_corr);
  if (!(w >= 0.0 && w <= 1.0)) throw std::invalid_argument("blend weight must lie in [0,1]");
  const double d = q_main.dot(q_corr);
  if (std::abs(d) < 1e-6) throw std::domain_error("blend of antipodal rotations is undefined");
  const Quaternion c = d < 0.0 ? -q_corr : q_corr;
  return (q_main * w + c * (1.0 - w)).normalized();
}

// Row-major 3x3 matrix of the device->nav map v_nav = M v_dev.
using Mat3 = std::array<std::array<double, 3>, 3>;

inline Mat3 device_to_nav_matrix(const Quaternion& q) {
  // Standard R(q) rotates by q; the q^-1 X q map is its transpose.
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  const Mat3 r{{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
                {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
                {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}}};
  Mat3 t{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) t[i][j] = r[j][i];
  return t;
}

inline Vec3 mat_mul(const Mat3& m, const Vec3& v) {
  return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
          m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
          m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
}

// Inverse of device_to_nav_matrix for a proper rotation matrix.
inline Quaternion quat_from_device_to_nav(const Mat3& m) {
  // device_to_nav_matrix(q) = R(q)^T, so q is the standard quaternion of m^T.
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r[i][j] = m[j][i];
  Quaternion s;
  const double tr = r[0][0] + r[1][1] + r[2][2];
  if (tr > 0.0) {
    const double k = 2.0 * std::sqrt(tr + 1.0);
    s = {0.25 * k, (r[2][1] - r[1][2]) / k, (r[0][2] - r[2][0]) / k, (r[1][0] - r[0][1]) / k};
  } else if (r[0][0] > r[1][1] && r[0][0] > r[2][2]) {
    const double k = 2.0 * std::sqrt(1.0 + r[0][0] - r[1][1] - r[2][2]);
    s = {(r[2][1] - r[1][2]) / k, 0.25 * k, (r[0][1] + r[1][0]) / k, (r[0][2] + r[2][0]) / k};
  } else if (r[1][1] > r[2][2]) {
    const double k = 2.0 * std::sqrt(1.0 + r[1][1] - r[0][0] - r[2][2]);
    s = {(r[0][2] - r[2][0]) / k, (r[0][1] + r[1][0]) / k, 0.25 * k, (r[1][2] + r[2][1]) / k};
  } else {
    const double k = 2.0 * std::sqrt(1.0 + r[2][2] - r[0][0] - r[1][1]);
    s = {(r[1][0] - r[0][1]) / k, (r[0][2] + r[2][0]) / k, (r[1][2] + r[2][1]) / k, 0.25 * k};
  }
  return s.normalized();
}

// Z-Y-X decomposition of the device->nav map: M = Rz(yaw) Ry(pitch) Rx(roll).
struct Euler {
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;
};

inline Euler to_euler(const Quaternion& q) {
  const Mat3 m = device_to_nav_matrix(q);
  Euler e;
  e.pitch = std::asin(std::clamp(-m[2][0], -1.0, 1.0));
  e.roll = std::atan2(m[2][1], m[2][2]);
  e.yaw = std::atan2(m[1][0], m[0][0]);
  return e;
}

inline Quaternion from_euler(const Euler& e) {
  const double cr = std::cos(e.roll), sr = std::sin(e.roll);
  const double cp = std::cos(e.pitch), sp = std::sin(e.pitch);
  const double cy = std::cos(e.yaw), sy = std::sin(e.yaw);
  const Mat3 m{{{cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr},
                {sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr},
                {-sp, cp * sr, cp * cr}}};
  return quat_from_device_to_nav(m);
}

// Orientation whose device->nav map is a pure yaw rotation.
inline Quaternion yaw_orientation(double yaw) {
  return quat_from_axis_angle({0.0, 0.0, 1.0}, yaw).conjugate();
}

inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a + std::numbers::pi, two_pi);
  if (a <= 0.0) a += two_pi;
  return a - std::numbers::pi;
}

}  // namespace renil
