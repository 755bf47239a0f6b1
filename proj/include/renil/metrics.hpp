#pragma once

// Trajectory error metrics and the predictive-interval coverage harness.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "renil/geom.hpp"

namespace renil::metrics {

using Vec2 = Eigen::Vector2d;

inline constexpr double kMinHeadingStep = 0.01;  // m

struct TrajectoryEstimate {
  std::vector<double> t;
  std::vector<Vec2> p;
  std::vector<Quaternion> q;  // optional, empty or one per point
  std::vector<Vec2> b;        // optional per-point Laplace scales, m

  std::size_t size() const { return t.size(); }

  void validate() const {
    if (p.size() != t.size()) throw std::invalid_argument("trajectory positions and timestamps differ in length");
    if (!q.empty() && q.size() != t.size()) throw std::invalid_argument("trajectory quaternion count mismatch");
    if (!b.empty() && b.size() != t.size()) throw std::invalid_argument("trajectory scale count mismatch");
    for (std::size_t i = 1; i < t.size(); ++i) {
      if (!(t[i] > t[i - 1])) throw std::invalid_argument("trajectory timestamps must increase");
    }
  }
};

struct Match {
  std::size_t est = 0;
  std::size_t truth = 0;
};

inline double median_step(const std::vector<double>& t) {
  if (t.size() < 2) return 0.0;
  std::vector<double> d;
  d.reserve(t.size() - 1);
  for (std::size_t i = 1; i < t.size(); ++i) d.push_back(t[i] - t[i - 1]);
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
  return d[d.size() / 2];
}

// Pairs each estimate with the nearest truth sample within half a truth step.
inline std::vector<Match> match(const TrajectoryEstimate& est, const TrajectoryEstimate& truth) {
  est.validate();
  truth.validate();
  std::vector<Match> out;
  if (truth.size() == 0) return out;
  const double tol = truth.size() > 1 ? 0.5 * median_step(truth.t) : 1e-9;
  std::size_t j = 0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double ti = est.t[i];
    while (j + 1 < truth.size() && std::abs(truth.t[j + 1] - ti) <= std::abs(truth.t[j] - ti)) ++j;
    if (std::abs(truth.t[j] - ti) <= tol + 1e-12) out.push_back({i, j});
  }
  return out;
}

namespace detail {
inline std::vector<Match> require_overlap(const TrajectoryEstimate& est, const TrajectoryEstimate& truth,
                                          std::size_t min_count = 1) {
  std::vector<Match> m = match(est, truth);
  if (m.size() < min_count) throw std::invalid_argument("estimate and truth do not overlap in time");
  return m;
}
}  // namespace detail

// Mean Euclidean position error, m.
inline double mae(const TrajectoryEstimate& est, const TrajectoryEstimate& truth) {
  const auto m = detail::require_overlap(est, truth);
  double s = 0.0;
  for (const Match& k : m) s += (est.p[k.est] - truth.p[k.truth]).norm();
  return s / static_cast<double>(m.size());
}

// Mean displacement-rate error over consecutive matched points, m/s.
inline double ade(const TrajectoryEstimate& est, const TrajectoryEstimate& truth) {
  const auto m = detail::require_overlap(est, truth, 2);
  double s = 0.0;
  for (std::size_t i = 1; i < m.size(); ++i) {
    const Vec2 de = est.p[m[i].est] - est.p[m[i - 1].est];
    const Vec2 dt = truth.p[m[i].truth] - truth.p[m[i - 1].truth];
    s += (de - dt).norm() / (est.t[m[i].est] - est.t[m[i - 1].est]);
  }
  return s / static_cast<double>(m.size() - 1);
}

// Mean absolute heading error of per-step displacement directions, rad.
// Steps shorter than kMinHeadingStep in either trajectory are skipped.
inline double he(const TrajectoryEstimate& est, const TrajectoryEstimate& truth) {
  const auto m = detail::require_overlap(est, truth, 2);
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 1; i < m.size(); ++i) {
    const Vec2 de = est.p[m[i].est] - est.p[m[i - 1].est];
    const Vec2 dt = truth.p[m[i].truth] - truth.p[m[i - 1].truth];
    if (de.norm() < kMinHeadingStep || dt.norm() < kMinHeadingStep) continue;
    s += std::abs(wrap_angle(std::atan2(de.y(), de.x()) - std::atan2(dt.y(), dt.x())));
    ++n;
  }
  if (n == 0) throw std::invalid_argument("no moving steps to define heading");
  return s / static_cast<double>(n);
}

// Mean 2 acos(|<q_est, q_truth>|), rad.
inline double qae(std::span<const Quaternion> est, std::span<const Quaternion> truth) {
  if (est.size() != truth.size() || est.empty()) throw std::invalid_argument("qae: streams must be non-empty and equal length");
  double s = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) s += rotation_distance(est[i], truth[i]);
  return s / static_cast<double>(est.size());
}

// Mean cosine similarity after aligning each estimate to the truth hemisphere.
inline double cs(std::span<const Quaternion> est, std::span<const Quaternion> truth) {
  if (est.size() != truth.size() || est.empty()) throw std::invalid_argument("cs: streams must be non-empty and equal length");
  double s = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const Quaternion a = est[i].dot(truth[i]) < 0.0 ? -est[i] : est[i];
    s += std::min(1.0, a.dot(truth[i]) / (a.norm() * truth[i].norm()));
  }
  return s / static_cast<double>(est.size());
}

// Orientation metrics on time-matched samples of two trajectories.
inline std::pair<double, double> orientation_errors(const TrajectoryEstimate& est, const TrajectoryEstimate& truth) {
  if (est.q.empty() || truth.q.empty()) throw std::invalid_argument("orientation metrics need quaternions");
  const auto m = detail::require_overlap(est, truth);
  std::vector<Quaternion> a, b;
  for (const Match& k : m) {
    a.push_back(est.q[k.est]);
    b.push_back(truth.q[k.truth]);
  }
  return {qae(a, b), cs(a, b)};
}

// Half-width of the central interval of Laplace(0, b) holding `level` mass.
inline double laplace_half_width(double b, double level) {
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("coverage level must lie in (0, 1)");
  return b * std::log(1.0 / (1.0 - level));
}

// Fraction of per-axis residuals inside the central Laplace interval of each
// level; every sample contributes two axes.
inline std::vector<double> coverage(std::span<const Vec2> dp_hat, std::span<const Vec2> b_hat,
                                    std::span<const Vec2> dp_truth, std::span<const double> levels) {
  if (dp_hat.size() != b_hat.size() || dp_hat.size() != dp_truth.size() || dp_hat.empty()) {
    throw std::invalid_argument("coverage: inputs must be non-empty and equal length");
  }
  std::vector<double> out;
  for (double level : levels) {
    const double f = laplace_half_width(1.0, level);
    std::size_t inside = 0;
    for (std::size_t i = 0; i < dp_hat.size(); ++i) {
      for (int k = 0; k < 2; ++k) {
        if (!(b_hat[i][k] > 0.0)) throw std::invalid_argument("coverage: scales must be positive");
        inside += std::abs(dp_truth[i][k] - dp_hat[i][k]) <= f * b_hat[i][k];
      }
    }
    out.push_back(static_cast<double>(inside) / static_cast<double>(2 * dp_hat.size()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// report

struct Report {
  std::size_t matched = 0;
  std::optional<double> mae, ade, he, qae, cs;
  std::vector<std::pair<double, double>> coverage;  // (level, rate)
};

// One "key = value" line per metric; absent metrics are omitted.
inline void write_report(std::ostream& os, const Report& r) {
  const auto flags = os.flags();
  const auto prec = os.precision();
  os << std::setprecision(9);
  os << "matched = " << r.matched << '\n';
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (v) os << key << " = " << *v << '\n';
  };
  put("mae_m", r.mae);
  put("ade_mps", r.ade);
  put("he_rad", r.he);
  put("qae_rad", r.qae);
  put("cs", r.cs);
  for (const auto& [level, rate] : r.coverage) os << "coverage_" << level << " = " << rate << '\n';
  os.flags(flags);
  os.precision(prec);
}

inline Report evaluate(const TrajectoryEstimate& est, const TrajectoryEstimate& truth) {
  Report r;
  r.matched = detail::require_overlap(est, truth).size();
  r.mae = mae(est, truth);
  if (r.matched >= 2) {
    r.ade = ade(est, truth);
    try {
      r.he = he(est, truth);
    } catch (const std::invalid_argument&) {
      r.he.reset();  // stationary
    }
  }
  if (!est.q.empty() && !truth.q.empty()) {
    const auto [q, c] = orientation_errors(est, truth);
    r.qae = q;
    r.cs = c;
  }
  return r;
}

}  // namespace renil::metrics
