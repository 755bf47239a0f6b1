#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "renil/asle/model.hpp"

namespace renil::asle {

struct AdamParams {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
class Adam {
 public:
  explicit Adam(const AdamParams& p = {}) : p_(p) {
    if (!(p.lr > 0 && p.beta1 >= 0 && p.beta1 < 1 && p.beta2 >= 0 && p.beta2 < 1 && p.eps > 0)) {
      throw std::invalid_argument("invalid Adam hyperparameters");
    }
  }

  double lr() const { return p_.lr; }
  void set_lr(double lr) { p_.lr = lr; }
  std::size_t steps() const { return t_; }

  void step(AsleModel<T>& model) {
    std::vector<Parameter<T>*> params = model.parameters();
    if (m_.empty()) {
      for (const auto* p : params) {
        m_.emplace_back(p->size(), 0.0);
        v_.emplace_back(p->size(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw std::logic_error("optimizer bound to a different model");
    ++t_;
    const double c1 = 1.0 - std::pow(p_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(p_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter<T>& p = *params[i];
      std::vector<double>& m = m_[i];
      std::vector<double>& v = v_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double g = p.grad[j];
        m[j] = p_.beta1 * m[j] + (1.0 - p_.beta1) * g;
        v[j] = p_.beta2 * v[j] + (1.0 - p_.beta2) * g * g;
        const double upd = p_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + p_.eps);
        p.value[j] = static_cast<T>(p.value[j] - upd);
      }
    }
  }

 private:
  AdamParams p_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Multiplies the learning rate by `factor` after `patience` epochs without
// a relative improvement of `threshold` in the monitored loss.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor = 0.1, std::size_t patience = 10, double min_lr = 1e-12, double threshold = 1e-4)
      : factor_(factor), patience_(patience), min_lr_(min_lr), threshold_(threshold) {
    if (!(factor > 0.0 && factor < 1.0)) throw std::invalid_argument("plateau factor must be in (0, 1)");
  }

  // Returns the learning rate to use next.
  double update(double metric, double lr) {
    if (metric < best_ * (1.0 - threshold_)) {
      best_ = metric;
      bad_ = 0;
      return lr;
    }
    if (++bad_ > patience_) {
      bad_ = 0;
      return std::max(lr * factor_, min_lr_);
    }
    return lr;
  }

  double best() const { return best_; }

 private:
  double factor_;
  std::size_t patience_;
  double min_lr_;
  double threshold_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_ = 0;
};

}  // namespace renil::asle
