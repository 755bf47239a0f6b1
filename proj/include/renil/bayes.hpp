#pragma once

// Position inference from chained displacement predictions: the pure IPDP
// chain with Laplace process noise, and Kalman-Gibbs fusion with linear
// external observations.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "renil/rng.hpp"

namespace renil::bayes {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

inline constexpr double kScaleFloor = 1e-9;  // smallest Laplace scale, m
inline constexpr double kTauFloor = 1e-6;    // smallest mixing variable

struct PositionBelief {
  Vec2 mean = Vec2::Zero();  // m
  Mat2 cov = Mat2::Zero();   // m^2
  double t = 0.0;            // s

  void validate() const {
    if (!mean.allFinite() || !cov.allFinite()) throw std::invalid_argument("belief is not finite");
    if (std::abs(cov(0, 1) - cov(1, 0)) > 1e-9 * std::max(1.0, cov.cwiseAbs().maxCoeff())) {
      throw std::invalid_argument("belief covariance is not symmetric");
    }
    if (Eigen::SelfAdjointEigenSolver<Mat2>(cov).eigenvalues().minCoeff() < -1e-12) {
      throw std::invalid_argument("belief covariance is not positive semi-definite");
    }
  }
};

// One network prediction: displacement and per-axis Laplace scale in metres.
struct AsleControl {
  Vec2 dp = Vec2::Zero();
  Vec2 b = Vec2::Ones();
  double dt = 1.0;

  void validate() const {
    if (!dp.allFinite()) throw std::invalid_argument("control displacement is not finite");
    if (!(b.minCoeff() > 0.0) || !b.allFinite()) throw std::invalid_argument("control scale must be positive");
    if (!(dt > 0.0)) throw std::invalid_argument("control duration must be positive");
  }
};

// z = H p + v, v ~ N(0, R).
struct ExternalObservation {
  Eigen::VectorXd z;
  Eigen::MatrixXd h;  // k x 2
  Eigen::MatrixXd r;  // k x k

  void validate() const {
    const Eigen::Index k = z.size();
    if (k == 0) throw std::invalid_argument("observation is empty");
    if (h.rows() != k || h.cols() != 2) throw std::invalid_argument("observation matrix must be k x 2");
    if (r.rows() != k || r.cols() != k) throw std::invalid_argument("observation noise must be k x k");
    if (!z.allFinite() || !h.allFinite() || !r.allFinite()) throw std::invalid_argument("observation is not finite");
    if (!r.isApprox(r.transpose(), 1e-9)) throw std::invalid_argument("observation noise is not symmetric");
    if (Eigen::LLT<Eigen::MatrixXd>(r).info() != Eigen::Success) {
      throw std::invalid_argument("observation noise is not positive definite");
    }
  }
};

struct GibbsConfig {
  std::size_t sweeps = 5;
  std::size_t burn_in = 2;
  std::uint64_t seed = 0;
  std::optional<double> fixed_tau;  // pins the mixing variable

  void validate() const {
    if (!(sweeps > burn_in)) throw std::invalid_argument("gibbs sweeps must exceed burn-in");
    if (fixed_tau && !(*fixed_tau > 0.0)) throw std::invalid_argument("pinned tau must be positive");
  }
};

// ---------------------------------------------------------------------------
// Laplace noise as a Gaussian scale mixture

inline Vec2 floor_scale(const Vec2& b) { return b.cwiseMax(kScaleFloor); }

// Per-axis variance 2 b^2 of Laplace(0, b).
inline Mat2 laplace_cov(const Vec2& b) {
  const Vec2 s = floor_scale(b);
  return Vec2(2.0 * s.x() * s.x(), 2.0 * s.y() * s.y()).asDiagonal();
}

// tau ~ Exp(1), w | tau ~ N(0, 2 tau b^2): marginally Laplace(0, b) per axis.
inline Vec2 laplace_mixture_sample(const Vec2& b, Rng& rng) {
  const Vec2 s = floor_scale(b);
  std::exponential_distribution<double> exp1(1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  Vec2 w;
  for (int i = 0; i < 2; ++i) {
    const double tau = exp1(rng);
    w[i] = std::sqrt(2.0 * tau) * s[i] * n01(rng);
  }
  return w;
}

inline Vec2 laplace_mixture_sample(const Vec2& b, std::uint64_t seed) {
  Rng rng(seed);
  return laplace_mixture_sample(b, rng);
}

// Symmetrises and clips negative eigenvalues to zero.
inline Mat2 clip_psd(const Mat2& m, bool* clipped = nullptr) {
  const Mat2 s = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Mat2> es(s);
  Vec2 ev = es.eigenvalues();
  const bool neg = ev.minCoeff() < 0.0;
  if (clipped) *clipped = neg;
  if (!neg) return s;
  ev = ev.cwiseMax(0.0);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// ---------------------------------------------------------------------------
// pure chain

inline PositionBelief chain_step(const PositionBelief& belief, const AsleControl& u) {
  u.validate();
  PositionBelief out;
  out.mean = belief.mean + u.dp;
  out.cov = belief.cov + laplace_cov(u.b);
  out.t = belief.t + u.dt;
  return out;
}

// A single noisy realisation of one chain step.
inline Vec2 sample_chain_step(const Vec2& p, const AsleControl& u, Rng& rng) {
  return p + u.dp + laplace_mixture_sample(u.b, rng);
}

// ---------------------------------------------------------------------------
// Gibbs pieces

inline double gibbs_delta(const Vec2& p_prev, const Vec2& p_curr, const Mat2& sigma_w) {
  const Eigen::FullPivLU<Mat2> lu(sigma_w);
  if (!lu.isInvertible()) throw std::invalid_argument("gibbs_delta: singular noise covariance");
  const Vec2 d = p_prev - p_curr;
  return d.dot(lu.solve(d));
}

// Michael-Schucany-Haas transform.
inline double inverse_gaussian(double mu, double lambda, Rng& rng) {
  if (!(mu > 0.0 && lambda > 0.0)) throw std::invalid_argument("inverse Gaussian needs mu, lambda > 0");
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double nu = n01(rng);
  const double y = nu * nu;
  const double x = mu + mu * mu * y / (2.0 * lambda) -
                   mu / (2.0 * lambda) * std::sqrt(4.0 * mu * lambda * y + mu * mu * y * y);
  return u01(rng) <= mu / (mu + x) ? x : mu * mu / x;
}

// tau ~ InverseGaussian(sqrt(delta), delta); delta = 0 gives the floor.
inline double gibbs_tau_resample(double delta, Rng& rng) {
  if (delta < 0.0 || !std::isfinite(delta)) throw std::invalid_argument("gibbs delta must be finite and >= 0");
  if (delta <= 0.0) return kTauFloor;
  return std::max(kTauFloor, inverse_gaussian(std::sqrt(delta), delta, rng));
}

inline double gibbs_tau_resample(double delta, std::uint64_t seed) {
  Rng rng(seed);
  return gibbs_tau_resample(delta, rng);
}

// ---------------------------------------------------------------------------
// fusion

struct KalmanResult {
  PositionBelief predicted;
  PositionBelief updated;
  bool clipped = false;
};

inline KalmanResult kalman_predict_update(const PositionBelief& belief, const AsleControl& u, double tau,
                                          const ExternalObservation& obs) {
  KalmanResult r;
  r.predicted.mean = belief.mean + u.dp;
  r.predicted.cov = belief.cov + tau * laplace_cov(u.b);
  r.predicted.t = belief.t + u.dt;

  const Eigen::MatrixXd& h = obs.h;
  const Eigen::MatrixXd s = h * r.predicted.cov * h.transpose() + obs.r;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(s);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() <= 1e-15 * std::max(1.0, ldlt.vectorD().cwiseAbs().maxCoeff())) {
    throw std::domain_error("singular innovation covariance");
  }
  const Eigen::MatrixXd k = ldlt.solve(h * r.predicted.cov).transpose();  // P H^T S^-1
  const Eigen::VectorXd innov = obs.z - h * r.predicted.mean;
  r.updated.mean = r.predicted.mean + k * innov;
  const Mat2 ikh = Mat2::Identity() - k * h;
  const Mat2 joseph = ikh * r.predicted.cov * ikh.transpose() + k * obs.r * k.transpose();
  r.updated.cov = clip_psd(joseph, &r.clipped);
  r.updated.t = r.predicted.t;
  return r;
}

struct FuseResult {
  PositionBelief belief;
  std::vector<double> taus;  // tau used by each sweep
  std::size_t clipped = 0;   // sweeps whose covariance needed clipping
};

// Gibbs over the shared mixing variable tau: each sweep predicts with
// Q = tau * diag(2 b^2), updates with the observation, and resamples tau from
// the predicted-to-updated Mahalanobis distance. The result averages the
// post-burn-in posteriors, adding the between-sweep spread of their means.
inline FuseResult fuse_step_detail(const PositionBelief& belief, const AsleControl& u,
                                   const ExternalObservation& obs, const GibbsConfig& cfg) {
  u.validate();
  obs.validate();
  cfg.validate();
  Rng rng(cfg.seed);
  const Mat2 sigma_w = laplace_cov(u.b);
  double tau = cfg.fixed_tau.value_or(1.0);
  FuseResult out;
  std::vector<PositionBelief> kept;
  for (std::size_t s = 0; s < cfg.sweeps; ++s) {
    out.taus.push_back(tau);
    const KalmanResult kr = kalman_predict_update(belief, u, tau, obs);
    out.clipped += kr.clipped;
    if (s >= cfg.burn_in) kept.push_back(kr.updated);
    if (!cfg.fixed_tau) tau = gibbs_tau_resample(gibbs_delta(kr.predicted.mean, kr.updated.mean, sigma_w), rng);
  }
  const double n = static_cast<double>(kept.size());
  Vec2 mean = Vec2::Zero();
  for (const auto& b : kept) mean += b.mean;
  mean /= n;
  Mat2 cov = Mat2::Zero();
  for (const auto& b : kept) {
    const Vec2 d = b.mean - mean;
    cov += b.cov + d * d.transpose();
  }
  out.belief.mean = mean;
  out.belief.cov = clip_psd(cov / n);
  out.belief.t = belief.t + u.dt;
  return out;
}

inline PositionBelief fuse_step(const PositionBelief& belief, const AsleControl& u, const ExternalObservation& obs,
                                const GibbsConfig& cfg) {
  return fuse_step_detail(belief, u, obs, cfg).belief;
}

// ---------------------------------------------------------------------------
// confidence regions

// Quantile of the chi-square distribution with 2 degrees of freedom.
inline double chi2_2dof_quantile(double confidence) {
  if (!(confidence > 0.0 && confidence < 1.0)) throw std::invalid_argument("confidence must lie in (0, 1)");
  return -2.0 * std::log1p(-confidence);
}

struct Ellipse {
  Vec2 center = Vec2::Zero();
  double semi_major = 0.0;  // m
  double semi_minor = 0.0;  // m
  double angle = 0.0;       // rad, major axis from +x
};

inline Ellipse uncertainty_ellipse(const PositionBelief& belief, double confidence) {
  const double q = chi2_2dof_quantile(confidence);
  Eigen::SelfAdjointEigenSolver<Mat2> es(clip_psd(belief.cov));
  const Vec2 ev = es.eigenvalues().cwiseMax(0.0);  // ascending
  Ellipse e;
  e.center = belief.mean;
  e.semi_major = std::sqrt(q * ev[1]);
  e.semi_minor = std::sqrt(q * ev[0]);
  const Vec2 major = es.eigenvectors().col(1);
  e.angle = std::atan2(major.y(), major.x());
  return e;
}

inline bool ellipse_contains(const Ellipse& e, const Vec2& p) {
  const Vec2 d = p - e.center;
  const double c = std::cos(e.angle), s = std::sin(e.angle);
  const double u = c * d.x() + s * d.y();
  const double v = -s * d.x() + c * d.y();
  if (e.semi_minor <= 0.0) return std::abs(v) == 0.0 && std::abs(u) <= e.semi_major;
  return (u * u) / (e.semi_major * e.semi_major) + (v * v) / (e.semi_minor * e.semi_minor) <= 1.0;
}

}  // namespace renil::bayes
