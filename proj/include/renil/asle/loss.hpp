#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "renil/asle/model.hpp"
#include "renil/asle/tensor.hpp"
#include "renil/data.hpp"

namespace renil::asle {

// |v - v_hat| exp(-log_b) + log_b, optionally + log t.
inline double nll_term(double v, double v_hat, double log_b, double t = 1.0, bool include_log_t = false) {
  double l = std::abs(v - v_hat) * std::exp(-log_b) + log_b;
  if (include_log_t) l += std::log(t);
  return l;
}

inline double nll_dlogb(double v, double v_hat, double log_b) {
  return 1.0 - std::abs(v - v_hat) * std::exp(-log_b);
}

inline double nll_dvhat(double v, double v_hat, double log_b) {
  const double d = v - v_hat;
  const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
  return -s * std::exp(-log_b);
}

// Mean over batch and both axes.
inline double nll_loss(std::span<const Prediction> pred, std::span<const data::Vec2> labels,
                       bool include_log_t = false) {
  if (pred.size() != labels.size() || pred.empty()) throw std::invalid_argument("nll: batch sizes differ");
  double acc = 0.0;
  for (std::size_t b = 0; b < pred.size(); ++b)
    for (int k = 0; k < 2; ++k) acc += nll_term(labels[b][k], pred[b].v[k], pred[b].log_b[k], pred[b].t, include_log_t);
  return acc / static_cast<double>(2 * pred.size());
}

struct LossGrad {
  double value = 0.0;
  std::vector<double> grad;
};

// Loss on raw head outputs (B, 4, 1, 1) with gradient w.r.t. the head. The
// log t term carries no gradient.
template <class T>
LossGrad nll_loss_head(const Tensor<T>& head, std::span<const data::Vec2> labels, std::span<const double> t,
                       bool include_log_t = false) {
  const std::size_t b = head.n();
  if (head.c() * head.h() * head.w() != kOutputWidth || labels.size() != b || t.size() != b) {
    throw std::invalid_argument("nll: shapes do not match");
  }
  LossGrad r;
  r.grad.assign(b * kOutputWidth, 0.0);
  const double inv = 1.0 / static_cast<double>(2 * b);
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t k = 0; k < 2; ++k) {
      const double vh = head.data[n * 4 + k], lb = head.data[n * 4 + 2 + k];
      const double v = labels[n][static_cast<Eigen::Index>(k)];
      r.value += nll_term(v, vh, lb, t[n], include_log_t) * inv;
      r.grad[n * 4 + k] = nll_dvhat(v, vh, lb) * inv;
      r.grad[n * 4 + 2 + k] = nll_dlogb(v, vh, lb) * inv;
    }
  return r;
}

// Mean squared difference; gradient is w.r.t. `aug` only.
template <class T>
LossGrad feature_match_loss(const Tensor<T>& clean, const Tensor<T>& aug) {
  if (!clean.same_shape(aug)) {
    throw std::invalid_argument("feature maps differ in shape: " + shape_string(clean) + " vs " + shape_string(aug));
  }
  if (aug.size() == 0) throw std::invalid_argument("feature maps are empty");
  LossGrad r;
  r.grad.resize(aug.size());
  const double inv = 1.0 / static_cast<double>(aug.size());
  for (std::size_t i = 0; i < aug.size(); ++i) {
    const double d = static_cast<double>(aug.data[i]) - static_cast<double>(clean.data[i]);
    r.value += d * d;
    r.grad[i] = 2.0 * d * inv;
  }
  r.value *= inv;
  return r;
}

}  // namespace renil::asle
