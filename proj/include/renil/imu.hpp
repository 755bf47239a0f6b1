#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "renil/geom.hpp"

namespace renil {

// Ground-truth pose; q maps device -> nav under the library convention.
struct PoseSample {
  double t = 0.0;
  Vec3 position;
  Quaternion q;
};

enum class Frame { kDevice, kNav };

// Timestamped 9-axis (or aligned 6-axis) samples at a fixed rate.
// mag and truth are optional; when present they have one entry per sample.
struct ImuSequence {
  double sample_rate = 200.0;
  Frame frame = Frame::kDevice;
  std::vector<double> t;
  std::vector<Vec3> accel;
  std::vector<Vec3> gyro;
  std::vector<Vec3> mag;
  std::vector<PoseSample> truth;

  std::size_t size() const { return t.size(); }
  bool has_mag() const { return !mag.empty(); }
  bool has_truth() const { return !truth.empty(); }
  double dt() const { return 1.0 / sample_rate; }

  void validate(double tol = 1e-6) const {
    const std::size_t n = t.size();
    if (n == 0) throw std::invalid_argument("IMU sequence is empty");
    if (!(sample_rate > 0.0)) throw std::invalid_argument("sample rate must be positive");
    if (accel.size() != n || gyro.size() != n) {
      throw std::invalid_argument("IMU channel lengths disagree with timestamps");
    }
    if (!mag.empty() && mag.size() != n) throw std::invalid_argument("mag length mismatch");
    if (!truth.empty() && truth.size() != n) throw std::invalid_argument("truth length mismatch");
    const double step = dt();
    for (std::size_t i = 1; i < n; ++i) {
      if (std::abs((t[i] - t[i - 1]) - step) > tol) {
        throw std::invalid_argument("IMU timestamps are not uniform at the declared rate");
      }
    }
  }
};

}  // namespace renil
