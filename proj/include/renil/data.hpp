#pragma once

// IPDP window sampling, patching and the training augmentations.
// Channel layout is (ax, ay, az, gx, gy, gz) in the navigation frame with z up.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "renil/geom.hpp"
#include "renil/imu.hpp"
#include "renil/rng.hpp"

namespace renil::data {

inline constexpr std::size_t kChannels = 6;

using Window = Eigen::Matrix<double, 6, Eigen::Dynamic>;
using Vec2 = Eigen::Vector2d;

// (B, P, 6, L) row-major; valid_length[b] samples of element b are real data,
// everything after is zero padding.
struct PatchTensor {
  std::size_t batch = 0;
  std::size_t patches = 0;
  std::size_t length = 0;
  std::vector<double> values;
  std::vector<std::size_t> valid_length;

  PatchTensor() = default;
  PatchTensor(std::size_t b, std::size_t p, std::size_t l)
      : batch(b), patches(p), length(l), values(b * p * kChannels * l, 0.0), valid_length(b, 0) {}

  std::size_t index(std::size_t b, std::size_t p, std::size_t c, std::size_t l) const {
    return ((b * patches + p) * kChannels + c) * length + l;
  }
  double& at(std::size_t b, std::size_t p, std::size_t c, std::size_t l) {
    return values[index(b, p, c, l)];
  }
  double at(std::size_t b, std::size_t p, std::size_t c, std::size_t l) const {
    return values[index(b, p, c, l)];
  }
  // Sample-major accessor over the unpadded time axis.
  double& sample(std::size_t b, std::size_t c, std::size_t t) {
    return at(b, t / length, c, t % length);
  }
  double sample(std::size_t b, std::size_t c, std::size_t t) const {
    return at(b, t / length, c, t % length);
  }
  std::size_t element_size() const { return patches * kChannels * length; }
};

inline std::size_t patch_count(std::size_t samples, std::size_t patch_length) {
  return (samples + patch_length - 1) / patch_length;
}

// Non-overlapping patches of length L; the tail patch is zero padded.
inline PatchTensor patch(const Window& x, std::size_t patch_length) {
  const auto t = static_cast<std::size_t>(x.cols());
  if (t == 0) throw std::invalid_argument("cannot patch an empty window");
  if (patch_length == 0) throw std::invalid_argument("patch length must be positive");
  PatchTensor out(1, patch_count(t, patch_length), patch_length);
  out.valid_length[0] = t;
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t c = 0; c < kChannels; ++c) out.sample(0, c, i) = x(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(i));
  return out;
}

// Stacks equally-patched single windows into one batch.
inline PatchTensor stack(std::span<const PatchTensor> items) {
  if (items.empty()) throw std::invalid_argument("cannot stack an empty batch");
  const std::size_t p = items[0].patches, l = items[0].length;
  PatchTensor out(0, p, l);
  for (const auto& it : items) {
    if (it.patches != p || it.length != l) {
      throw std::invalid_argument("batch elements must share patch count and length");
    }
    out.values.insert(out.values.end(), it.values.begin(), it.values.end());
    out.valid_length.insert(out.valid_length.end(), it.valid_length.begin(), it.valid_length.end());
    out.batch += it.batch;
  }
  return out;
}

inline PatchTensor select(const PatchTensor& x, std::size_t b) {
  PatchTensor out(1, x.patches, x.length);
  const std::size_t n = x.element_size();
  std::copy_n(x.values.begin() + static_cast<std::ptrdiff_t>(b * n), n, out.values.begin());
  out.valid_length[0] = x.valid_length[b];
  return out;
}

// Concatenates patches of element b and trims the padding.
inline Window unpatch(const PatchTensor& x, std::size_t b = 0) {
  const std::size_t t = x.valid_length.at(b);
  Window w(6, static_cast<Eigen::Index>(t));
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t c = 0; c < kChannels; ++c) w(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(i)) = x.sample(b, c, i);
  return w;
}

// ---------------------------------------------------------------------------
// IPDP windows

struct SampleWindow {
  std::size_t sequence = 0;
  std::size_t start = 0;  // first sample (IPDP t_{n-1})
  std::size_t end = 0;    // IPDP t_n; samples [start, end) feed the network
  double duration = 0.0;  // s
  Vec2 displacement = Vec2::Zero();  // m
  Vec2 velocity = Vec2::Zero();      // m/s, displacement / duration

  std::size_t samples() const { return end - start; }
};

struct ScaleDistribution {
  enum class Kind { kFixed, kUniform, kLogUniform };
  Kind kind = Kind::kLogUniform;
  double min_s = 1.0;
  double max_s = 60.0;

  static ScaleDistribution fixed(double s) { return {Kind::kFixed, s, s}; }
  static ScaleDistribution log_uniform(double lo, double hi) { return {Kind::kLogUniform, lo, hi}; }
  static ScaleDistribution uniform(double lo, double hi) { return {Kind::kUniform, lo, hi}; }

  double draw(Rng& rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    switch (kind) {
      case Kind::kFixed: return min_s;
      case Kind::kUniform: return min_s + (max_s - min_s) * u(rng);
      case Kind::kLogUniform: return std::exp(std::log(min_s) + (std::log(max_s) - std::log(min_s)) * u(rng));
    }
    return min_s;
  }
};

inline std::string to_string(ScaleDistribution::Kind k) {
  switch (k) {
    case ScaleDistribution::Kind::kFixed: return "fixed";
    case ScaleDistribution::Kind::kUniform: return "uniform";
    case ScaleDistribution::Kind::kLogUniform: return "log_uniform";
  }
  return "unknown";
}

inline ScaleDistribution::Kind scale_kind_from_string(const std::string& s) {
  if (s == "fixed") return ScaleDistribution::Kind::kFixed;
  if (s == "uniform") return ScaleDistribution::Kind::kUniform;
  if (s == "log_uniform") return ScaleDistribution::Kind::kLogUniform;
  throw std::invalid_argument("unknown scale distribution: " + s);
}

// Planar truth displacement between two samples, linearly interpolated when
// the truth track is shorter than the IMU track.
inline Vec2 truth_position(const ImuSequence& seq, double index) {
  if (!seq.has_truth()) throw std::invalid_argument("sequence carries no ground truth");
  const double last = static_cast<double>(seq.truth.size() - 1);
  if (index < 0.0 || index > last) throw std::out_of_range("window exceeds sequence bounds");
  const auto i0 = static_cast<std::size_t>(std::floor(index));
  const std::size_t i1 = std::min(i0 + 1, seq.truth.size() - 1);
  const double f = index - static_cast<double>(i0);
  const Vec3 a = seq.truth[i0].position, b = seq.truth[i1].position;
  return {a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)};
}

inline SampleWindow make_window(const ImuSequence& seq, std::size_t seq_id, std::size_t start,
                                std::size_t samples) {
  if (samples == 0) throw std::invalid_argument("window needs at least one sample");
  // The closing IPDP needs a truth sample at index start + samples.
  if (start + samples + 1 > seq.size()) throw std::out_of_range("window exceeds sequence bounds");
  SampleWindow w;
  w.sequence = seq_id;
  w.start = start;
  w.end = start + samples;
  w.duration = static_cast<double>(samples) / seq.sample_rate;
  w.displacement = truth_position(seq, static_cast<double>(w.end)) -
                   truth_position(seq, static_cast<double>(w.start));
  w.velocity = w.displacement / w.duration;
  return w;
}

// Random windows with durations from `scale`, deterministic in `seed`.
inline std::vector<SampleWindow> sample_windows(std::span<const ImuSequence> dataset,
                                                const ScaleDistribution& scale, std::size_t count,
                                                std::uint64_t seed) {
  if (dataset.empty()) throw std::invalid_argument("dataset is empty");
  for (const auto& s : dataset) {
    if (!s.has_truth()) throw std::invalid_argument("window sampling needs ground truth");
  }
  std::vector<SampleWindow> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, i, 0x77));
    const double duration = scale.draw(rng);
    std::vector<std::size_t> fits;
    for (std::size_t s = 0; s < dataset.size(); ++s) {
      const auto n = static_cast<std::size_t>(std::llround(duration * dataset[s].sample_rate));
      if (n >= 1 && n + 1 <= dataset[s].size()) fits.push_back(s);
    }
    if (fits.empty()) throw std::out_of_range("window duration exceeds every sequence");
    std::uniform_int_distribution<std::size_t> pick(0, fits.size() - 1);
    const std::size_t s = fits[pick(rng)];
    const auto n = static_cast<std::size_t>(std::llround(duration * dataset[s].sample_rate));
    std::uniform_int_distribution<std::size_t> start(0, dataset[s].size() - 1 - n);
    out.push_back(make_window(dataset[s], s, start(rng), n));
  }
  return out;
}

// Aligned 6-channel slice [start, end) of a nav-frame sequence.
inline Window extract(const ImuSequence& seq, std::size_t start, std::size_t end) {
  if (seq.frame != Frame::kNav) throw std::invalid_argument("network input must be nav-aligned");
  if (end <= start || end > seq.size()) throw std::out_of_range("window exceeds sequence bounds");
  Window w(6, static_cast<Eigen::Index>(end - start));
  for (std::size_t k = start; k < end; ++k) {
    const auto c = static_cast<Eigen::Index>(k - start);
    w.col(c) << seq.accel[k].x, seq.accel[k].y, seq.accel[k].z, seq.gyro[k].x, seq.gyro[k].y,
        seq.gyro[k].z;
  }
  return w;
}

// ---------------------------------------------------------------------------
// Augmentations. Each acts per batch element with a stream derived from
// (seed, element) and leaves the padded tail at exactly zero.

struct AugmentationSpec {
  double mask_probability = 0.1;       // per patch
  double quat_bias_max_angle = 0.05;   // rad
  double accel_sigma = 0.05;           // m/s^2
  double gyro_sigma = 0.01;            // rad/s
  double heading_range = std::numbers::pi;  // rad, uniform in [-range, range]
  std::size_t protrusion_count = 2;    // per channel
  double protrusion_amplitude = 0.5;
  double protrusion_width = 10.0;      // samples (Gaussian sigma)

  // Probability that each augmentation is applied to a window.
  double p_mask = 0.5;
  double p_quat_bias = 0.5;
  double p_gaussian = 0.5;
  double p_heading = 0.5;
  double p_protrusion = 0.5;

  void validate() const {
    for (double p : {mask_probability, p_mask, p_quat_bias, p_gaussian, p_heading, p_protrusion}) {
      if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("probabilities must lie in [0,1]");
    }
    for (double a : {quat_bias_max_angle, accel_sigma, gyro_sigma, heading_range,
                     protrusion_amplitude, protrusion_width}) {
      if (!(a >= 0.0)) throw std::invalid_argument("augmentation amplitudes must be >= 0");
    }
  }

  static AugmentationSpec none() {
    AugmentationSpec s;
    s.p_mask = s.p_quat_bias = s.p_gaussian = s.p_heading = s.p_protrusion = 0.0;
    return s;
  }
};

namespace detail {
inline void rotate_triples(PatchTensor& x, std::size_t b, const Mat3& r) {
  for (std::size_t t = 0; t < x.valid_length[b]; ++t) {
    for (std::size_t base : {std::size_t{0}, std::size_t{3}}) {
      const Vec3 v{x.sample(b, base, t), x.sample(b, base + 1, t), x.sample(b, base + 2, t)};
      const Vec3 w = mat_mul(r, v);
      x.sample(b, base, t) = w.x;
      x.sample(b, base + 1, t) = w.y;
      x.sample(b, base + 2, t) = w.z;
    }
  }
}
}  // namespace detail

inline PatchTensor augment_mask(const PatchTensor& x, double probability, std::uint64_t seed) {
  PatchTensor out = x;
  if (probability <= 0.0) return out;
  for (std::size_t b = 0; b < x.batch; ++b) {
    Rng rng(derive_seed(seed, b, 1));
    std::bernoulli_distribution hit(probability);
    for (std::size_t p = 0; p < x.patches; ++p) {
      if (!hit(rng)) continue;
      for (std::size_t c = 0; c < kChannels; ++c)
        for (std::size_t l = 0; l < x.length; ++l) out.at(b, p, c, l) = 0.0;
    }
  }
  return out;
}

// Uniformly random axis, angle uniform in [0, max_angle]; returns the applied
// nav-frame rotation matrices per element.
inline PatchTensor augment_quat_bias(const PatchTensor& x, double max_angle, std::uint64_t seed,
                                     std::vector<Mat3>* applied = nullptr) {
  PatchTensor out = x;
  if (applied) applied->clear();
  for (std::size_t b = 0; b < x.batch; ++b) {
    Rng rng(derive_seed(seed, b, 2));
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Vec3 axis{n(rng), n(rng), n(rng)};
    if (axis.norm() < 1e-12) axis = {0.0, 0.0, 1.0};
    const double angle = max_angle * u(rng);
    const Mat3 r = device_to_nav_matrix(quat_from_axis_angle(axis, angle));
    if (angle > 0.0) detail::rotate_triples(out, b, r);
    if (applied) applied->push_back(r);
  }
  return out;
}

inline PatchTensor augment_gaussian(const PatchTensor& x, double accel_sigma, double gyro_sigma,
                                    std::uint64_t seed) {
  PatchTensor out = x;
  if (accel_sigma == 0.0 && gyro_sigma == 0.0) return out;
  for (std::size_t b = 0; b < x.batch; ++b) {
    Rng rng(derive_seed(seed, b, 3));
    std::normal_distribution<double> n(0.0, 1.0);
    for (std::size_t t = 0; t < x.valid_length[b]; ++t)
      for (std::size_t c = 0; c < kChannels; ++c)
        out.sample(b, c, t) += (c < 3 ? accel_sigma : gyro_sigma) * n(rng);
  }
  return out;
}

// Rotates element b's horizontal accel/gyro pairs (0,1), (3,4) and its label
// by theta in the navigation plane.
inline void rotate_heading(PatchTensor& x, std::size_t b, Vec2& label, double theta) {
  if (theta == 0.0) return;
  const double c = std::cos(theta), s = std::sin(theta);
  for (std::size_t t = 0; t < x.valid_length[b]; ++t) {
    for (std::size_t base : {std::size_t{0}, std::size_t{3}}) {
      const double px = x.sample(b, base, t), py = x.sample(b, base + 1, t);
      x.sample(b, base, t) = c * px - s * py;
      x.sample(b, base + 1, t) = s * px + c * py;
    }
  }
  label = Vec2{c * label.x() - s * label.y(), s * label.x() + c * label.y()};
}

// Rotates horizontal accel/gyro pairs (0,1), (3,4) and the planar labels by a
// per-element angle theta; `angles` receives the drawn angles.
inline PatchTensor augment_heading(const PatchTensor& x, std::span<Vec2> labels, double range,
                                   std::uint64_t seed, std::vector<double>* angles = nullptr) {
  if (labels.size() != x.batch) throw std::invalid_argument("one label per batch element");
  PatchTensor out = x;
  if (angles) angles->clear();
  for (std::size_t b = 0; b < x.batch; ++b) {
    Rng rng(derive_seed(seed, b, 4));
    std::uniform_real_distribution<double> u(-range, range);
    const double theta = range > 0.0 ? u(rng) : 0.0;
    if (angles) angles->push_back(theta);
    rotate_heading(out, b, labels[b], theta);
  }
  return out;
}

// Gaussian bump truncated at +-4 widths.
inline void add_bump(std::span<double> signal, double centre, double amplitude, double width) {
  if (width <= 0.0 || amplitude == 0.0) return;
  const double reach = 4.0 * width;
  const auto lo = static_cast<long>(std::ceil(centre - reach));
  const auto hi = static_cast<long>(std::floor(centre + reach));
  for (long i = std::max(0L, lo); i <= hi && i < static_cast<long>(signal.size()); ++i) {
    const double d = (static_cast<double>(i) - centre) / width;
    signal[static_cast<std::size_t>(i)] += amplitude * std::exp(-0.5 * d * d);
  }
}

inline PatchTensor augment_protrusions(const PatchTensor& x, std::size_t count, double amplitude,
                                       double width, std::uint64_t seed) {
  PatchTensor out = x;
  if (count == 0 || amplitude == 0.0) return out;
  std::vector<double> buf;
  for (std::size_t b = 0; b < x.batch; ++b) {
    Rng rng(derive_seed(seed, b, 5));
    const std::size_t t = x.valid_length[b];
    std::uniform_real_distribution<double> where(0.0, static_cast<double>(t));
    std::bernoulli_distribution sign(0.5);
    for (std::size_t c = 0; c < kChannels; ++c) {
      buf.assign(t, 0.0);
      for (std::size_t k = 0; k < count; ++k) {
        const double centre = where(rng);
        add_bump(buf, centre, sign(rng) ? amplitude : -amplitude, width);
      }
      for (std::size_t i = 0; i < t; ++i) out.sample(b, c, i) += buf[i];
    }
  }
  return out;
}

struct AugmentResult {
  PatchTensor clean_view;  // label-changing part only (heading), target of feature matching
  PatchTensor augmented;   // heading + nuisance augmentations
  std::vector<Vec2> labels;
};

// Each augmentation is applied independently with its configured probability.
// Heading rotation changes the label, so it is also applied to the clean view.
inline AugmentResult augment(const PatchTensor& x, std::span<const Vec2> labels,
                             const AugmentationSpec& spec, std::uint64_t seed) {
  spec.validate();
  AugmentResult r;
  r.labels.assign(labels.begin(), labels.end());
  r.clean_view = x;
  // Per-element on/off flags, drawn up front so the composition is seedable.
  std::vector<std::array<bool, 5>> on(x.batch);
  for (std::size_t b = 0; b < x.batch; ++b) {
    Rng rng(derive_seed(seed, b, 9));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    on[b] = {u(rng) < spec.p_heading, u(rng) < spec.p_quat_bias, u(rng) < spec.p_gaussian,
             u(rng) < spec.p_protrusion, u(rng) < spec.p_mask};
  }
  auto apply_per_element = [&](PatchTensor& t, std::size_t which, auto&& fn) {
    for (std::size_t b = 0; b < t.batch; ++b) {
      if (!on[b][which]) continue;
      PatchTensor one = select(t, b);
      one = fn(one, b);
      std::copy(one.values.begin(), one.values.end(),
                t.values.begin() + static_cast<std::ptrdiff_t>(b * t.element_size()));
    }
  };
  apply_per_element(r.clean_view, 0, [&](const PatchTensor& one, std::size_t b) {
    Vec2 lab = r.labels[b];
    PatchTensor rotated = augment_heading(one, std::span<Vec2>(&lab, 1), spec.heading_range,
                                          derive_seed(seed, b, 10));
    r.labels[b] = lab;
    return rotated;
  });
  r.augmented = r.clean_view;
  apply_per_element(r.augmented, 1, [&](const PatchTensor& one, std::size_t b) {
    return augment_quat_bias(one, spec.quat_bias_max_angle, derive_seed(seed, b, 11));
  });
  apply_per_element(r.augmented, 2, [&](const PatchTensor& one, std::size_t b) {
    return augment_gaussian(one, spec.accel_sigma, spec.gyro_sigma, derive_seed(seed, b, 12));
  });
  apply_per_element(r.augmented, 3, [&](const PatchTensor& one, std::size_t b) {
    return augment_protrusions(one, spec.protrusion_count, spec.protrusion_amplitude,
                               spec.protrusion_width, derive_seed(seed, b, 13));
  });
  apply_per_element(r.augmented, 4, [&](const PatchTensor& one, std::size_t b) {
    return augment_mask(one, spec.mask_probability, derive_seed(seed, b, 14));
  });
  return r;
}

}  // namespace renil::data
