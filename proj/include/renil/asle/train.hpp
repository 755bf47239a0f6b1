#pragma once

// Training loop: augmented forward with Laplace NLL, feature matching against
// the gradient-blocked clean view, Adam updates and plateau LR decay.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "renil/asle/loss.hpp"
#include "renil/asle/model.hpp"
#include "renil/asle/optim.hpp"
#include "renil/data.hpp"
#include "renil/errors.hpp"
#include "renil/imu.hpp"
#include "renil/rng.hpp"

namespace renil::asle {

struct TrainingSample {
  data::PatchTensor x;  // single element
  data::Vec2 v = data::Vec2::Zero();
  double t = 0.0;
};

inline TrainingSample make_sample(const ImuSequence& seq, const data::SampleWindow& w, std::size_t patch_length) {
  TrainingSample s;
  s.x = data::patch(data::extract(seq, w.start, w.end), patch_length);
  s.v = w.velocity;
  s.t = w.duration;
  return s;
}

struct TrainConfig {
  AdamParams adam{};
  std::size_t batch_size = 128;
  std::size_t epochs = 200;
  double plateau_factor = 0.1;
  std::size_t plateau_patience = 10;
  double min_lr = 1e-12;
  double fm_weight = 1.0;
  bool include_log_t = false;
  std::size_t windows_per_epoch = 4096;
  data::ScaleDistribution scale = data::ScaleDistribution::log_uniform(1.0, 60.0);
  std::size_t val_windows = 256;
  double val_duration = 5.0;  // s
  data::AugmentationSpec augmentation{};

  void validate() const {
    if (batch_size == 0 || epochs == 0 || windows_per_epoch == 0 || val_windows == 0) {
      throw std::invalid_argument("training sizes must be positive");
    }
    if (!(fm_weight >= 0.0)) throw std::invalid_argument("fm_weight must be non-negative");
    if (!(val_duration > 0.0)) throw std::invalid_argument("val_duration must be positive");
    if (!(scale.min_s > 0.0 && scale.max_s >= scale.min_s)) throw std::invalid_argument("invalid scale range");
    augmentation.validate();
  }
};

struct LossBreakdown {
  double nll = 0.0;
  double fm = 0.0;
  double total = 0.0;
};

// One augmented training example with its dropout stream.
struct AugmentedSample {
  data::AugmentResult views;
  double t = 1.0;
  std::uint64_t dropout_seed = 0;
};

inline AugmentedSample prepare_sample(const TrainingSample& s, const data::AugmentationSpec& aug,
                                      std::uint64_t seed) {
  AugmentedSample a;
  a.views = data::augment(s.x, std::span<const data::Vec2>(&s.v, 1), aug, seed);
  a.t = s.t;
  a.dropout_seed = derive_seed(seed, 1);
  return a;
}

// Feature-matching target: context features of the clean view, treated as a
// constant by the gradient.
template <class T>
Tensor<T> clean_target(const AsleModel<T>& model, const AugmentedSample& a) {
  return model.run(a.views.clean_view, false).context;
}

// Loss of one sample; with `backprop` the gradients scaled by `grad_scale`
// are accumulated into the model.
template <class T>
LossBreakdown sample_loss(AsleModel<T>& model, const AugmentedSample& a, const Tensor<T>* target, double fm_weight,
                          bool include_log_t, bool backprop, double grad_scale = 1.0) {
  typename AsleModel<T>::Cache cache;
  const auto out = model.run(a.views.augmented, true, a.dropout_seed, backprop ? &cache : nullptr);
  LossGrad nll = nll_loss_head(out.head, a.views.labels, std::span<const double>(&a.t, 1), include_log_t);
  LossBreakdown r;
  r.nll = nll.value;
  Tensor<T> d_ctx;
  const bool use_fm = fm_weight > 0.0 && target != nullptr;
  if (use_fm) {
    LossGrad fm = feature_match_loss(*target, out.context);
    r.fm = fm.value;
    if (backprop) {
      d_ctx = Tensor<T>(out.context.n(), out.context.c(), out.context.h(), out.context.w());
      for (std::size_t k = 0; k < d_ctx.size(); ++k) d_ctx.data[k] = static_cast<T>(fm.grad[k] * fm_weight * grad_scale);
    }
  }
  r.total = r.nll + fm_weight * r.fm;
  if (!std::isfinite(r.nll) || !std::isfinite(r.fm)) {
    throw DivergenceError("non-finite loss at step " + std::to_string(model.step) + " (nll=" + std::to_string(r.nll) +
                          ", fm=" + std::to_string(r.fm) + ")");
  }
  if (backprop) {
    Tensor<T> d_head(1, kOutputWidth, 1, 1);
    for (std::size_t k = 0; k < kOutputWidth; ++k) d_head.data[k] = static_cast<T>(nll.grad[k] * grad_scale);
    model.backward(cache, d_head, use_fm ? &d_ctx : nullptr);
  }
  return r;
}

// One optimizer update on `batch`. The loss is the batch mean of per-sample
// NLL plus fm_weight times the per-sample feature-matching MSE.
template <class T>
LossBreakdown train_step(AsleModel<T>& model, std::span<const TrainingSample> batch, Adam<T>& opt,
                         const data::AugmentationSpec& aug, std::uint64_t seed, double fm_weight = 1.0,
                         bool include_log_t = false) {
  if (batch.empty()) throw std::invalid_argument("empty training batch");
  model.zero_grad();
  LossBreakdown loss;
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const AugmentedSample a = prepare_sample(batch[i], aug, derive_seed(seed, i, 0xA5));
    Tensor<T> target;
    if (fm_weight > 0.0) target = clean_target(model, a);
    const LossBreakdown l = sample_loss(model, a, fm_weight > 0.0 ? &target : nullptr, fm_weight, include_log_t,
                                        true, scale);
    loss.nll += l.nll * scale;
    loss.fm += l.fm * scale;
  }
  loss.total = loss.nll + fm_weight * loss.fm;
  opt.step(model);
  ++model.step;
  if (!model.parameters_finite()) {
    throw DivergenceError("non-finite parameters after step " + std::to_string(model.step));
  }
  return loss;
}

struct EvalResult {
  double nll = 0.0;
  double mae = 0.0;           // mean |dp_hat - dp|, m
  double baseline_mae = 0.0;  // zero-displacement predictor, m
  std::size_t count = 0;
};

template <class T>
std::vector<Prediction> predict_samples(const AsleModel<T>& model, std::span<const TrainingSample> samples,
                                        std::size_t chunk = 32) {
  std::vector<Prediction> out;
  out.reserve(samples.size());
  std::size_t i = 0;
  while (i < samples.size()) {
    std::size_t j = i + 1;
    while (j < samples.size() && j - i < chunk && samples[j].x.patches == samples[i].x.patches) ++j;
    std::vector<data::PatchTensor> xs;
    std::vector<double> ts;
    for (std::size_t k = i; k < j; ++k) {
      xs.push_back(samples[k].x);
      ts.push_back(samples[k].t);
    }
    const auto p = model.forward(data::stack(xs), ts);
    out.insert(out.end(), p.begin(), p.end());
    i = j;
  }
  return out;
}

template <class T>
EvalResult evaluate(const AsleModel<T>& model, std::span<const TrainingSample> samples) {
  if (samples.empty()) throw std::invalid_argument("no evaluation samples");
  const std::vector<Prediction> pred = predict_samples(model, samples);
  EvalResult r;
  r.count = samples.size();
  std::vector<data::Vec2> labels;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const data::Vec2 dp = samples[i].v * samples[i].t;
    r.mae += (pred[i].dp - dp).norm();
    r.baseline_mae += dp.norm();
    labels.push_back(samples[i].v);
  }
  r.nll = nll_loss(pred, labels);
  r.mae /= static_cast<double>(r.count);
  r.baseline_mae /= static_cast<double>(r.count);
  return r;
}

struct EpochStats {
  std::size_t epoch = 0;
  LossBreakdown train;
  EvalResult val;
  double lr = 0.0;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Trains on windows drawn from `train` and validates on fixed-duration windows
// from `val` after every epoch.
template <class T>
std::vector<EpochStats> fit(AsleModel<T>& model, std::span<const ImuSequence> train,
                            std::span<const ImuSequence> val, const TrainConfig& cfg, std::uint64_t seed,
                            const EpochCallback& on_epoch = {}) {
  cfg.validate();
  const std::size_t l = model.config().patch_length;
  std::vector<TrainingSample> val_samples;
  for (const auto& w : data::sample_windows(val, data::ScaleDistribution::fixed(cfg.val_duration), cfg.val_windows,
                                            derive_seed(seed, 0, 0x7A1))) {
    val_samples.push_back(make_sample(val[w.sequence], w, l));
  }
  Adam<T> opt(cfg.adam);
  PlateauScheduler sched(cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr);
  std::vector<EpochStats> history;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    std::vector<TrainingSample> samples;
    for (const auto& w : data::sample_windows(train, cfg.scale, cfg.windows_per_epoch, derive_seed(seed, e, 0x7A2))) {
      samples.push_back(make_sample(train[w.sequence], w, l));
    }
    EpochStats st;
    st.epoch = e + 1;
    std::size_t batches = 0;
    for (std::size_t i = 0; i < samples.size(); i += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, samples.size() - i);
      const LossBreakdown lb =
          train_step(model, std::span<const TrainingSample>(samples.data() + i, n), opt, cfg.augmentation,
                     derive_seed(seed, e * 1000003 + batches, 0x7A3), cfg.fm_weight, cfg.include_log_t);
      st.train.nll += lb.nll;
      st.train.fm += lb.fm;
      st.train.total += lb.total;
      ++batches;
    }
    st.train.nll /= static_cast<double>(batches);
    st.train.fm /= static_cast<double>(batches);
    st.train.total /= static_cast<double>(batches);
    st.val = evaluate(model, val_samples);
    opt.set_lr(sched.update(st.val.nll, opt.lr()));
    st.lr = opt.lr();
    history.push_back(st);
    if (on_epoch) on_epoch(st);
  }
  return history;
}

}  // namespace renil::asle
