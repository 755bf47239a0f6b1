#pragma once

// The any-scale estimator: patch embedding, per-patch residual feature
// extractor, cross-patch context blocks, multi-kernel pooling and a head that
// regresses average velocity and its log Laplace scale.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "renil/asle/config.hpp"
#include "renil/asle/layers.hpp"
#include "renil/asle/tensor.hpp"
#include "renil/data.hpp"
#include "renil/errors.hpp"

namespace renil::asle {

struct Prediction {
  Eigen::Vector2d v = Eigen::Vector2d::Zero();      // m/s
  Eigen::Vector2d log_b = Eigen::Vector2d::Zero();  // log Laplace scale of v
  Eigen::Vector2d dp = Eigen::Vector2d::Zero();     // t * v, m
  Eigen::Vector2d b = Eigen::Vector2d::Zero();      // t * exp(log_b), m
  double t = 0.0;
};

inline Prediction make_prediction(double vx, double vy, double lbx, double lby, double t) {
  if (!(t > 0.0)) throw std::invalid_argument("prediction duration must be positive");
  Prediction p;
  p.v = {vx, vy};
  p.log_b = {lbx, lby};
  p.t = t;
  p.dp = t * p.v;
  p.b = {t * std::exp(lbx), t * std::exp(lby)};
  return p;
}

// Analytic parameter tally for a configuration.
inline std::size_t param_count(const AsleConfig& c) {
  auto conv = [](std::size_t cin, std::size_t cout, std::size_t k) { return cout * cin * k + cout; };
  auto block = [&](std::size_t cin, std::size_t cout, std::size_t k) {
    std::size_t n = 2 * cin + conv(cin, cout, k) + 2 * cout + conv(cout, cout, k);
    if (cin != cout) n += conv(cin, cout, 1);
    return n;
  };
  std::size_t n = 0;
  std::size_t ch = kInputChannels;
  for (std::size_t i = 0; i < c.embed_layers; ++i) {
    n += conv(ch, c.embed_channels, c.embed_kernel);
    ch = c.embed_channels;
  }
  n += 2 * c.embed_channels;
  for (std::size_t out : c.extractor_channels) {
    n += block(ch, out, c.extractor_kernel);
    ch = out;
  }
  for (std::size_t i = 0; i < c.context_blocks; ++i) {
    n += block(ch, c.context_channels, c.context_kernel * c.context_kernel);
    ch = c.context_channels;
  }
  n += c.pooled_width() * c.head_hidden + c.head_hidden;
  n += c.head_hidden * kOutputWidth + kOutputWidth;
  return n;
}

// Multiply-accumulate count of all conv and linear layers for one window of
// `samples` IMU samples.
inline std::size_t flop_estimate(const AsleConfig& c, std::size_t samples) {
  const std::size_t p = data::patch_count(samples, c.patch_length);
  std::size_t macs = 0;
  std::size_t ch = kInputChannels, w = c.patch_length;
  for (std::size_t i = 0; i < c.embed_layers; ++i) {
    w = same_out(w, c.embed_stride);
    macs += p * c.embed_channels * ch * c.embed_kernel * w;
    ch = c.embed_channels;
  }
  for (std::size_t out : c.extractor_channels) {
    macs += p * w * (out * ch * c.extractor_kernel + out * out * c.extractor_kernel);
    if (ch != out) macs += p * w * out * ch;
    ch = out;
  }
  const std::size_t k2 = c.context_kernel * c.context_kernel;
  for (std::size_t i = 0; i < c.context_blocks; ++i) {
    macs += p * w * (c.context_channels * ch * k2 + c.context_channels * c.context_channels * k2);
    if (ch != c.context_channels) macs += p * w * c.context_channels * ch;
    ch = c.context_channels;
  }
  macs += c.pooled_width() * c.head_hidden + c.head_hidden * kOutputWidth;
  return macs;
}

inline std::size_t flop_estimate(const AsleConfig& c, double seconds, double sample_rate) {
  if (!(seconds > 0.0 && sample_rate > 0.0)) throw std::invalid_argument("duration and rate must be positive");
  return flop_estimate(c, static_cast<std::size_t>(std::llround(seconds * sample_rate)));
}

template <class T>
Tensor<T> to_input(const data::PatchTensor& x) {
  Tensor<T> t(x.batch * x.patches, kInputChannels, 1, x.length);
  for (std::size_t i = 0; i < x.values.size(); ++i) t.data[i] = static_cast<T>(x.values[i]);
  return t;
}

template <class T>
class AsleModel {
 public:
  struct Cache {
    std::size_t batch = 0, patches = 0;
    std::vector<typename Conv2d<T>::Cache> embed_conv;
    Tensor<T> embed_relu;
    typename GroupNorm<T>::Cache embed_gn;
    std::vector<typename ResidualBlock<T>::Cache> extractor, context;
    std::vector<typename AdaptivePool<T>::Cache> pools;
    typename Linear<T>::Cache fc1, fc2;
    Tensor<T> fc1_relu;
    typename Dropout<T>::Cache drop;
  };

  struct Output {
    std::size_t batch = 0, patches = 0;
    Tensor<T> extractor;  // (B, P, C, W)
    Tensor<T> context;    // (B, C, P, W)
    Tensor<T> head;       // (B, 4, 1, 1): vx, vy, log_bx, log_by
  };

  explicit AsleModel(const AsleConfig& config = {}, std::uint64_t seed = 0) : config_(config) {
    config_.validate();
    build();
    init(seed);
  }

  const AsleConfig& config() const { return config_; }
  std::uint64_t step = 0;

  void init(std::uint64_t seed) {
    std::uint64_t k = 0;
    for (auto& c : embed_) c.init(derive_seed(seed, k++, 11));
    for (auto& b : extractor_) b.init(derive_seed(seed, k++, 11));
    for (auto& b : context_) b.init(derive_seed(seed, k++, 11));
    fc1_.init(derive_seed(seed, k++, 11));
    fc2_.init(derive_seed(seed, k++, 11));
  }

  // Visits every parameter in a fixed order.
  template <class F>
  void visit(F&& f) {
    for (auto& c : embed_) { f(c.weight); f(c.bias); }
    f(embed_gn_.gamma);
    f(embed_gn_.beta);
    for (auto& b : extractor_) b.visit(f);
    for (auto& b : context_) b.visit(f);
    f(fc1_.weight); f(fc1_.bias);
    f(fc2_.weight); f(fc2_.bias);
  }

  template <class F>
  void visit(F&& f) const {
    const_cast<AsleModel*>(this)->visit([&](Parameter<T>& p) { f(static_cast<const Parameter<T>&>(p)); });
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    visit([&](Parameter<T>& p) { out.push_back(&p); });
    return out;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    visit([&](const Parameter<T>& p) { n += p.size(); });
    return n;
  }

  void zero_grad() {
    visit([](Parameter<T>& p) { p.zero_grad(); });
  }

  bool parameters_finite() const {
    bool ok = true;
    visit([&](const Parameter<T>& p) {
      for (T v : p.value) ok = ok && std::isfinite(v);
    });
    return ok;
  }

  // Layer access for tests and probes.
  std::vector<Conv2d<T>>& embed_layers() { return embed_; }
  std::vector<ResidualBlock<T>>& extractor_blocks() { return extractor_; }
  std::vector<ResidualBlock<T>>& context_blocks() { return context_; }

  // (N, 6, 1, L) -> (N, e, 1, L').
  Tensor<T> embed(const Tensor<T>& x, Cache* c = nullptr) const {
    if (x.c() != kInputChannels) throw std::invalid_argument("embed expects 6 input channels");
    if (x.w() < config_.embed_stride) throw std::invalid_argument("patch length shorter than embedding stride");
    if (c) c->embed_conv.resize(embed_.size());
    Tensor<T> h = x;
    for (std::size_t i = 0; i < embed_.size(); ++i) h = embed_[i].forward(h, c ? &c->embed_conv[i] : nullptr);
    h = relu(h);
    Tensor<T> y = embed_gn_.forward(h, c ? &c->embed_gn : nullptr);
    if (c) c->embed_relu = std::move(h);
    return y;
  }

  // Runs the embedding on a (B, P, 6, L) tensor and returns (B, P, e, L').
  Tensor<T> embed(const data::PatchTensor& x) const {
    Tensor<T> y = embed(to_input<T>(x));
    y.reshape(x.batch, x.patches, y.c(), y.w());
    return y;
  }

  // (N, e, 1, L') -> (N, C, 1, L'), one patch per image.
  Tensor<T> extract_features(const Tensor<T>& e, Cache* c = nullptr) const {
    if (c) c->extractor.resize(extractor_.size());
    Tensor<T> h = e;
    for (std::size_t i = 0; i < extractor_.size(); ++i) {
      h = extractor_[i].forward(h, c ? &c->extractor[i] : nullptr);
    }
    return h;
  }

  // (B, P, C, W) -> (B, C, P, W).
  Tensor<T> build_context(const Tensor<T>& xf, Cache* c = nullptr) const {
    if (c) c->context.resize(context_.size());
    Tensor<T> h = swap_axes12(xf);
    for (std::size_t i = 0; i < context_.size(); ++i) h = context_[i].forward(h, c ? &c->context[i] : nullptr);
    return h;
  }

  // Pools both feature maps and applies the regression head: (B, 4, 1, 1).
  Tensor<T> pco(const Tensor<T>& xf, const Tensor<T>& ctx, bool training = false, std::uint64_t dropout_seed = 0,
                Cache* c = nullptr) const {
    const std::size_t b = xf.n();
    if (ctx.n() != b) throw std::invalid_argument("pco: batch dimensions differ");
    Tensor<T> feat(b, config_.pooled_width(), 1, 1);
    const std::size_t fw = config_.pooled_width();
    // xf is (B, P, C, W): mean over P and W per channel.
    const std::size_t p = xf.c(), ch = xf.h(), w = xf.w();
    if (ch != config_.extractor_out()) throw std::invalid_argument("pco: extractor channel mismatch");
    const double norm = static_cast<double>(p * w);
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t k = 0; k < ch; ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < p; ++i)
          for (std::size_t q = 0; q < w; ++q) acc += xf(n, i, k, q);
        feat.data[n * fw + k] = static_cast<T>(acc / norm);
      }
    std::size_t off = ch;
    if (c) c->pools.resize(pools_.size());
    for (std::size_t i = 0; i < pools_.size(); ++i) {
      const std::vector<T> y = pools_[i].forward(ctx, c ? &c->pools[i] : nullptr);
      const std::size_t pw = pools_[i].width(ctx.c());
      for (std::size_t n = 0; n < b; ++n) std::copy_n(y.data() + n * pw, pw, feat.data.data() + n * fw + off);
      off += pw;
    }
    Tensor<T> h = relu(fc1_.forward(feat, c ? &c->fc1 : nullptr));
    Tensor<T> d = dropout_.forward(h, training, dropout_seed, c ? &c->drop : nullptr);
    if (c) c->fc1_relu = std::move(h);
    return fc2_.forward(d, c ? &c->fc2 : nullptr);
  }

  Output run(const data::PatchTensor& x, bool training = false, std::uint64_t dropout_seed = 0,
             Cache* c = nullptr) const {
    if (x.length != config_.patch_length) {
      throw std::invalid_argument("patch length " + std::to_string(x.length) + " differs from model's " +
                                  std::to_string(config_.patch_length));
    }
    if (x.batch == 0 || x.patches == 0) throw std::invalid_argument("empty patch tensor");
    Output out;
    out.batch = x.batch;
    out.patches = x.patches;
    if (c) {
      c->batch = x.batch;
      c->patches = x.patches;
    }
    Tensor<T> h = extract_features(embed(to_input<T>(x), c), c);
    h.reshape(x.batch, x.patches, h.c(), h.w());
    out.context = build_context(h, c);
    out.head = pco(h, out.context, training, dropout_seed, c);
    out.extractor = std::move(h);
    if (!out.head.all_finite()) throw DivergenceError("non-finite network output");
    return out;
  }

  // Predictions for a batch; t[b] is the window duration in seconds.
  std::vector<Prediction> forward(const data::PatchTensor& x, std::span<const double> t) const {
    if (t.size() != x.batch) throw std::invalid_argument("one duration per batch element required");
    for (double ti : t)
      if (!(ti > 0.0)) throw std::invalid_argument("window duration must be positive");
    const Output o = run(x);
    std::vector<Prediction> out;
    out.reserve(x.batch);
    for (std::size_t b = 0; b < x.batch; ++b) {
      out.push_back(make_prediction(o.head.data[b * 4 + 0], o.head.data[b * 4 + 1], o.head.data[b * 4 + 2],
                                    o.head.data[b * 4 + 3], t[b]));
    }
    return out;
  }

  // Accumulates parameter gradients from d_head (B, 4, 1, 1) and an optional
  // extra gradient on the context features (B, C, P, W).
  void backward(const Cache& c, const Tensor<T>& d_head, const Tensor<T>* d_context = nullptr) {
    const std::size_t b = c.batch, p = c.patches;
    Tensor<T> d = fc2_.backward(d_head, c.fc2);
    d = relu_backward(dropout_.backward(d, c.drop), c.fc1_relu);
    const Tensor<T> dfeat = fc1_.backward(d, c.fc1);
    const std::size_t fw = config_.pooled_width();

    const std::size_t c_ctx = config_.context_out();
    const std::size_t w = c.pools.front().in_shape[3];
    Tensor<T> dctx(b, c_ctx, p, w);
    std::size_t off = config_.extractor_out();
    std::vector<T> slice;
    for (std::size_t i = 0; i < pools_.size(); ++i) {
      const std::size_t pw = pools_[i].width(c_ctx);
      slice.assign(b * pw, T(0));
      for (std::size_t n = 0; n < b; ++n) std::copy_n(dfeat.data.data() + n * fw + off, pw, slice.data() + n * pw);
      pools_[i].backward(slice.data(), c.pools[i], dctx);
      off += pw;
    }
    if (d_context) add_inplace(dctx, *d_context);

    for (std::size_t i = context_.size(); i-- > 0;) dctx = context_[i].backward(dctx, c.context[i]);
    Tensor<T> dxf = swap_axes12(dctx);  // (B, P, C, W)

    const std::size_t ch = config_.extractor_out();
    const T inv = static_cast<T>(1.0 / static_cast<double>(p * w));
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t k = 0; k < ch; ++k) {
        const T g = dfeat.data[n * fw + k] * inv;
        for (std::size_t i = 0; i < p; ++i)
          for (std::size_t q = 0; q < w; ++q) dxf(n, i, k, q) += g;
      }
    dxf.reshape(b * p, ch, 1, w);

    for (std::size_t i = extractor_.size(); i-- > 0;) dxf = extractor_[i].backward(dxf, c.extractor[i]);
    Tensor<T> de = embed_gn_.backward(dxf, c.embed_gn);
    de = relu_backward(de, c.embed_relu);
    for (std::size_t i = embed_.size(); i-- > 0;) de = embed_[i].backward(de, c.embed_conv[i], i > 0);
  }

 private:
  void build() {
    const AsleConfig& c = config_;
    std::size_t ch = kInputChannels;
    for (std::size_t i = 0; i < c.embed_layers; ++i) {
      embed_.emplace_back("embed.conv" + std::to_string(i), ch, c.embed_channels, 1, c.embed_kernel, 1,
                          c.embed_stride);
      ch = c.embed_channels;
    }
    embed_gn_ = GroupNorm<T>("embed.gn", c.embed_channels, c.group_size, c.gn_eps);
    for (std::size_t i = 0; i < c.extractor_channels.size(); ++i) {
      extractor_.emplace_back("extractor." + std::to_string(i), ch, c.extractor_channels[i], 1,
                              c.extractor_kernel, c.group_size, c.gn_eps);
      ch = c.extractor_channels[i];
    }
    for (std::size_t i = 0; i < c.context_blocks; ++i) {
      context_.emplace_back("context." + std::to_string(i), ch, c.context_channels, c.context_kernel,
                            c.context_kernel, c.group_size, c.gn_eps);
      ch = c.context_channels;
    }
    for (const PoolSpec& s : c.context_pools) pools_.push_back(AdaptivePool<T>{s});
    fc1_ = Linear<T>("head.fc1", c.pooled_width(), c.head_hidden);
    dropout_.rate = c.dropout;
    fc2_ = Linear<T>("head.fc2", c.head_hidden, kOutputWidth);
  }

  AsleConfig config_;
  std::vector<Conv2d<T>> embed_;
  GroupNorm<T> embed_gn_;
  std::vector<ResidualBlock<T>> extractor_;
  std::vector<ResidualBlock<T>> context_;
  std::vector<AdaptivePool<T>> pools_;
  Linear<T> fc1_;
  Dropout<T> dropout_;
  Linear<T> fc2_;
};

}  // namespace renil::asle
