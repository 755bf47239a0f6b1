#pragma once

// Layers with explicit forward caches and hand-written backward passes.
// forward() is const and only writes into the optional cache; backward()
// accumulates parameter gradients and returns the input gradient.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "renil/asle/tensor.hpp"
#include "renil/rng.hpp"

namespace renil::asle {

template <class T>
struct Parameter {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<T> value;
  std::vector<T> grad;

  Parameter() = default;
  Parameter(std::string n, std::vector<std::size_t> s, T fill = T(0)) : name(std::move(n)), shape(std::move(s)) {
    std::size_t count = 1;
    for (std::size_t d : shape) count *= d;
    value.assign(count, fill);
    grad.assign(count, T(0));
  }
  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <class T>
void fan_in_init(Parameter<T>& p, std::size_t fan_in, std::uint64_t seed) {
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (T& v : p.value) v = static_cast<T>(dist(rng));
}

inline std::size_t same_out(std::size_t in, std::size_t stride) { return (in + stride - 1) / stride; }

inline std::size_t same_pad_before(std::size_t in, std::size_t k, std::size_t stride) {
  const std::size_t out = same_out(in, stride);
  const std::ptrdiff_t total = static_cast<std::ptrdiff_t>((out - 1) * stride + k) -
                               static_cast<std::ptrdiff_t>(in);
  return total > 0 ? static_cast<std::size_t>(total / 2) : 0;
}

template <class T>
struct Conv2d {
  std::size_t cin = 0, cout = 0, kh = 1, kw = 1, sh = 1, sw = 1;
  Parameter<T> weight;  // (cout, cin, kh, kw)
  Parameter<T> bias;    // (cout)

  struct Cache {
    std::array<std::size_t, 4> in_shape{};
    std::size_t ho = 0, wo = 0, ph = 0, pw = 0;
    std::vector<T> cols;  // (cin*kh*kw) x (n*ho*wo)
  };

  Conv2d() = default;
  Conv2d(const std::string& name, std::size_t cin_, std::size_t cout_, std::size_t kh_, std::size_t kw_,
         std::size_t sh_ = 1, std::size_t sw_ = 1)
      : cin(cin_), cout(cout_), kh(kh_), kw(kw_), sh(sh_), sw(sw_),
        weight(name + ".weight", {cout_, cin_, kh_, kw_}), bias(name + ".bias", {cout_}) {
    if (!(cin && cout && kh && kw && sh && sw)) throw std::invalid_argument("conv dimensions must be positive");
  }

  std::size_t fan_in() const { return cin * kh * kw; }

  void init(std::uint64_t seed) {
    fan_in_init(weight, fan_in(), seed);
    std::fill(bias.value.begin(), bias.value.end(), T(0));
  }

  std::size_t macs(std::size_t n, std::size_t h, std::size_t w) const {
    return n * cout * fan_in() * same_out(h, sh) * same_out(w, sw);
  }

  void check_input(const Tensor<T>& x) const {
    if (x.c() != cin) {
      throw std::invalid_argument(weight.name + ": expected " + std::to_string(cin) + " channels, got " +
                                  shape_string(x));
    }
    if (x.h() == 0 || x.w() == 0) throw std::invalid_argument(weight.name + ": empty input");
  }

  Tensor<T> forward(const Tensor<T>& x, Cache* cache = nullptr) const {
    check_input(x);
    const std::size_t n = x.n(), h = x.h(), w = x.w();
    const std::size_t ho = same_out(h, sh), wo = same_out(w, sw);
    const std::size_t ph = same_pad_before(h, kh, sh), pw = same_pad_before(w, kw, sw);
    const std::size_t kdim = fan_in(), pix = ho * wo, ncols = n * pix;

    std::vector<T> cols(kdim * ncols, T(0));
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t ki = 0; ki < kh; ++ki)
        for (std::size_t kj = 0; kj < kw; ++kj) {
          T* row = cols.data() + ((ci * kh + ki) * kw + kj) * ncols;
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t oh = 0; oh < ho; ++oh) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * sh + ki) - static_cast<std::ptrdiff_t>(ph);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
              const T* src = x.data.data() + ((b * cin + ci) * h + static_cast<std::size_t>(ih)) * w;
              T* dst = row + b * pix + oh * wo;
              for (std::size_t ow = 0; ow < wo; ++ow) {
                const std::ptrdiff_t iw =
                    static_cast<std::ptrdiff_t>(ow * sw + kj) - static_cast<std::ptrdiff_t>(pw);
                if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(w)) dst[ow] = src[iw];
              }
            }
        }

    std::vector<T> out(cout * ncols, T(0));
    gemm_acc(cout, ncols, kdim, weight.value.data(), cols.data(), out.data());

    Tensor<T> y(n, cout, ho, wo);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t co = 0; co < cout; ++co) {
        const T* src = out.data() + co * ncols + b * pix;
        T* dst = y.data.data() + (b * cout + co) * pix;
        const T bv = bias.value[co];
        for (std::size_t p = 0; p < pix; ++p) dst[p] = src[p] + bv;
      }

    if (cache) {
      cache->in_shape = x.shape;
      cache->ho = ho;
      cache->wo = wo;
      cache->ph = ph;
      cache->pw = pw;
      cache->cols = std::move(cols);
    }
    return y;
  }

  // need_dx = false skips the input gradient (first layer of the network).
  Tensor<T> backward(const Tensor<T>& dy, const Cache& c, bool need_dx = true) {
    const std::size_t n = c.in_shape[0], h = c.in_shape[2], w = c.in_shape[3];
    const std::size_t pix = c.ho * c.wo, ncols = n * pix, kdim = fan_in();
    if (dy.n() != n || dy.c() != cout || dy.h() != c.ho || dy.w() != c.wo) {
      throw std::invalid_argument(weight.name + ": gradient shape mismatch");
    }
    std::vector<T> g(cout * ncols);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t co = 0; co < cout; ++co) {
        const T* src = dy.data.data() + (b * cout + co) * pix;
        std::copy(src, src + pix, g.data() + co * ncols + b * pix);
      }
    for (std::size_t co = 0; co < cout; ++co) {
      T s = T(0);
      const T* row = g.data() + co * ncols;
      for (std::size_t j = 0; j < ncols; ++j) s += row[j];
      bias.grad[co] += s;
    }
    {
      std::vector<T> cols_t(ncols * kdim);
      transpose(kdim, ncols, c.cols.data(), cols_t.data());
      gemm_acc(cout, kdim, ncols, g.data(), cols_t.data(), weight.grad.data());
    }
    Tensor<T> dx;
    if (!need_dx) return dx;

    std::vector<T> w_t(kdim * cout);
    transpose(cout, kdim, weight.value.data(), w_t.data());
    std::vector<T> dcols(kdim * ncols, T(0));
    gemm_acc(kdim, ncols, cout, w_t.data(), g.data(), dcols.data());

    dx = Tensor<T>(n, cin, h, w);
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t ki = 0; ki < kh; ++ki)
        for (std::size_t kj = 0; kj < kw; ++kj) {
          const T* row = dcols.data() + ((ci * kh + ki) * kw + kj) * ncols;
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t oh = 0; oh < c.ho; ++oh) {
              const std::ptrdiff_t ih =
                  static_cast<std::ptrdiff_t>(oh * sh + ki) - static_cast<std::ptrdiff_t>(c.ph);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
              T* dst = dx.data.data() + ((b * cin + ci) * h + static_cast<std::size_t>(ih)) * w;
              const T* src = row + b * pix + oh * c.wo;
              for (std::size_t ow = 0; ow < c.wo; ++ow) {
                const std::ptrdiff_t iw =
                    static_cast<std::ptrdiff_t>(ow * sw + kj) - static_cast<std::ptrdiff_t>(c.pw);
                if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(w)) dst[iw] += src[ow];
              }
            }
        }
    return dx;
  }
};

// Group normalization over (channels in group, H, W) per sample, with affine.
template <class T>
struct GroupNorm {
  std::size_t channels = 0;
  std::size_t group_size = 4;
  double eps = 1e-5;
  Parameter<T> gamma, beta;

  struct Cache {
    Tensor<T> xhat;
    std::vector<double> inv_std;  // per (n, group)
  };

  GroupNorm() = default;
  GroupNorm(const std::string& name, std::size_t channels_, std::size_t group_size_, double eps_ = 1e-5)
      : channels(channels_), group_size(group_size_), eps(eps_),
        gamma(name + ".gamma", {channels_}, T(1)), beta(name + ".beta", {channels_}, T(0)) {
    if (group_size == 0 || channels % group_size != 0) {
      throw std::invalid_argument(name + ": channel count " + std::to_string(channels) +
                                  " not divisible by group size " + std::to_string(group_size));
    }
  }

  std::size_t groups() const { return channels / group_size; }

  Tensor<T> forward(const Tensor<T>& x, Cache* cache = nullptr) const {
    if (x.c() != channels) throw std::invalid_argument(gamma.name + ": channel mismatch " + shape_string(x));
    const std::size_t n = x.n(), pix = x.plane(), gsz = group_size * pix;
    Tensor<T> y(x.n(), x.c(), x.h(), x.w());
    if (cache) {
      cache->xhat = Tensor<T>(x.n(), x.c(), x.h(), x.w());
      cache->inv_std.assign(n * groups(), 0.0);
    }
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t g = 0; g < groups(); ++g) {
        const std::size_t off = (b * channels + g * group_size) * pix;
        const T* src = x.data.data() + off;
        double mean = 0.0;
        for (std::size_t i = 0; i < gsz; ++i) mean += src[i];
        mean /= static_cast<double>(gsz);
        double var = 0.0;
        for (std::size_t i = 0; i < gsz; ++i) {
          const double d = src[i] - mean;
          var += d * d;
        }
        var /= static_cast<double>(gsz);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t cc = 0; cc < group_size; ++cc) {
          const std::size_t ch = g * group_size + cc;
          const T ga = gamma.value[ch], be = beta.value[ch];
          for (std::size_t p = 0; p < pix; ++p) {
            const std::size_t i = cc * pix + p;
            const T xh = static_cast<T>((src[i] - mean) * inv);
            y.data[off + i] = ga * xh + be;
            if (cache) cache->xhat.data[off + i] = xh;
          }
        }
        if (cache) cache->inv_std[b * groups() + g] = inv;
      }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, const Cache& c) {
    const Tensor<T>& xh = c.xhat;
    if (!dy.same_shape(xh)) throw std::invalid_argument(gamma.name + ": gradient shape mismatch");
    const std::size_t n = dy.n(), pix = dy.plane(), gsz = group_size * pix;
    Tensor<T> dx(dy.n(), dy.c(), dy.h(), dy.w());
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t g = 0; g < groups(); ++g) {
        const std::size_t off = (b * channels + g * group_size) * pix;
        double sum_d = 0.0, sum_dx = 0.0;
        for (std::size_t cc = 0; cc < group_size; ++cc) {
          const std::size_t ch = g * group_size + cc;
          double gg = 0.0, gb = 0.0;
          for (std::size_t p = 0; p < pix; ++p) {
            const std::size_t i = off + cc * pix + p;
            const double d = dy.data[i];
            gg += d * xh.data[i];
            gb += d;
            const double dxhat = d * gamma.value[ch];
            sum_d += dxhat;
            sum_dx += dxhat * xh.data[i];
          }
          gamma.grad[ch] += static_cast<T>(gg);
          beta.grad[ch] += static_cast<T>(gb);
        }
        const double inv = c.inv_std[b * groups() + g];
        const double m = static_cast<double>(gsz);
        for (std::size_t cc = 0; cc < group_size; ++cc) {
          const std::size_t ch = g * group_size + cc;
          for (std::size_t p = 0; p < pix; ++p) {
            const std::size_t i = off + cc * pix + p;
            const double dxhat = static_cast<double>(dy.data[i]) * gamma.value[ch];
            dx.data[i] = static_cast<T>(inv * (dxhat - sum_d / m - xh.data[i] * sum_dx / m));
          }
        }
      }
    return dx;
  }
};

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (T& v : y.data) v = (v > T(0) || std::isnan(v)) ? v : T(0);  // NaN propagates
  return y;
}

// Gradient through ReLU given its output.
template <class T>
Tensor<T> relu_backward(const Tensor<T>& dy, const Tensor<T>& y) {
  Tensor<T> dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (!(y.data[i] > T(0))) dx.data[i] = T(0);
  return dx;
}

template <class T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("tensor shapes differ: " + shape_string(a) + " vs " + shape_string(b));
  for (std::size_t i = 0; i < a.size(); ++i) a.data[i] += b.data[i];
}

// Pre-activation residual block: GN -> ReLU -> conv -> GN -> ReLU -> conv,
// plus an identity shortcut or a 1x1 projection when channels change.
template <class T>
struct ResidualBlock {
  GroupNorm<T> gn1;
  Conv2d<T> conv1;
  GroupNorm<T> gn2;
  Conv2d<T> conv2;
  std::optional<Conv2d<T>> proj;

  struct Cache {
    typename GroupNorm<T>::Cache g1, g2;
    Tensor<T> a1, a2;
    typename Conv2d<T>::Cache c1, c2, p;
  };

  ResidualBlock() = default;
  ResidualBlock(const std::string& name, std::size_t cin, std::size_t cout, std::size_t kh, std::size_t kw,
                std::size_t group_size, double eps)
      : gn1(name + ".gn1", cin, group_size, eps),
        conv1(name + ".conv1", cin, cout, kh, kw),
        gn2(name + ".gn2", cout, group_size, eps),
        conv2(name + ".conv2", cout, cout, kh, kw) {
    if (cin != cout) proj.emplace(name + ".proj", cin, cout, 1, 1);
  }

  void init(std::uint64_t seed) {
    conv1.init(derive_seed(seed, 1));
    conv2.init(derive_seed(seed, 2));
    if (proj) proj->init(derive_seed(seed, 3));
  }

  template <class F>
  void visit(F&& f) {
    f(gn1.gamma); f(gn1.beta);
    f(conv1.weight); f(conv1.bias);
    f(gn2.gamma); f(gn2.beta);
    f(conv2.weight); f(conv2.bias);
    if (proj) { f(proj->weight); f(proj->bias); }
  }

  std::size_t macs(std::size_t n, std::size_t h, std::size_t w) const {
    std::size_t m = conv1.macs(n, h, w) + conv2.macs(n, h, w);
    if (proj) m += proj->macs(n, h, w);
    return m;
  }

  Tensor<T> forward(const Tensor<T>& x, Cache* c = nullptr) const {
    Tensor<T> a1 = relu(gn1.forward(x, c ? &c->g1 : nullptr));
    Tensor<T> h = conv1.forward(a1, c ? &c->c1 : nullptr);
    Tensor<T> a2 = relu(gn2.forward(h, c ? &c->g2 : nullptr));
    Tensor<T> out = conv2.forward(a2, c ? &c->c2 : nullptr);
    if (proj) {
      add_inplace(out, proj->forward(x, c ? &c->p : nullptr));
    } else {
      add_inplace(out, x);
    }
    if (c) {
      c->a1 = std::move(a1);
      c->a2 = std::move(a2);
    }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& dout, const Cache& c) {
    Tensor<T> d = conv2.backward(dout, c.c2);
    d = gn2.backward(relu_backward(d, c.a2), c.g2);
    d = conv1.backward(d, c.c1);
    Tensor<T> dx = gn1.backward(relu_backward(d, c.a1), c.g1);
    if (proj) {
      add_inplace(dx, proj->backward(dout, c.p));
    } else {
      add_inplace(dx, dout);
    }
    return dx;
  }
};

// Fully connected layer on (B, in, 1, 1) tensors.
template <class T>
struct Linear {
  std::size_t in = 0, out = 0;
  Parameter<T> weight;  // (out, in)
  Parameter<T> bias;

  struct Cache {
    Tensor<T> x;
  };

  Linear() = default;
  Linear(const std::string& name, std::size_t in_, std::size_t out_)
      : in(in_), out(out_), weight(name + ".weight", {out_, in_}), bias(name + ".bias", {out_}) {
    if (!(in && out)) throw std::invalid_argument("linear dimensions must be positive");
  }

  void init(std::uint64_t seed) {
    fan_in_init(weight, in, seed);
    std::fill(bias.value.begin(), bias.value.end(), T(0));
  }

  std::size_t macs(std::size_t n) const { return n * in * out; }

  Tensor<T> forward(const Tensor<T>& x, Cache* c = nullptr) const {
    if (x.c() * x.h() * x.w() != in) throw std::invalid_argument(weight.name + ": input width mismatch");
    const std::size_t b = x.n();
    std::vector<T> w_t(in * out);
    transpose(out, in, weight.value.data(), w_t.data());
    Tensor<T> y(b, out, 1, 1);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t o = 0; o < out; ++o) y.data[i * out + o] = bias.value[o];
    gemm_acc(b, out, in, x.data.data(), w_t.data(), y.data.data());
    if (c) c->x = x;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, const Cache& c) {
    const std::size_t b = c.x.n();
    std::vector<T> dy_t(out * b);
    transpose(b, out, dy.data.data(), dy_t.data());
    gemm_acc(out, in, b, dy_t.data(), c.x.data.data(), weight.grad.data());
    for (std::size_t o = 0; o < out; ++o) {
      T s = T(0);
      for (std::size_t i = 0; i < b; ++i) s += dy_t[o * b + i];
      bias.grad[o] += s;
    }
    Tensor<T> dx(c.x.n(), c.x.c(), c.x.h(), c.x.w());
    gemm_acc(b, in, out, dy.data.data(), weight.value.data(), dx.data.data());
    return dx;
  }
};

// Inverted dropout driven by an explicit seed.
template <class T>
struct Dropout {
  double rate = 0.0;

  struct Cache {
    std::vector<T> scale;
  };

  Tensor<T> forward(const Tensor<T>& x, bool training, std::uint64_t seed, Cache* c = nullptr) const {
    if (!training || rate <= 0.0) {
      if (c) c->scale.assign(x.size(), T(1));
      return x;
    }
    Rng rng(seed);
    std::bernoulli_distribution keep(1.0 - rate);
    const T s = static_cast<T>(1.0 / (1.0 - rate));
    Tensor<T> y = x;
    std::vector<T> scale(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      scale[i] = keep(rng) ? s : T(0);
      y.data[i] *= scale[i];
    }
    if (c) c->scale = std::move(scale);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, const Cache& c) const {
    Tensor<T> dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] *= c.scale[i];
    return dx;
  }
};

// PyTorch-style adaptive bin [floor(i*n/o), ceil((i+1)*n/o)).
inline std::pair<std::size_t, std::size_t> adaptive_bin(std::size_t i, std::size_t n, std::size_t o) {
  return {(i * n) / o, ((i + 1) * n + o - 1) / o};
}

enum class PoolKind { kAvg, kMax };

struct PoolSpec {
  PoolKind kind = PoolKind::kAvg;
  std::size_t bins = 1;  // output rows along H; W always collapses to 1
  bool operator==(const PoolSpec&) const = default;
};

// Adaptive pooling of (B, C, H, W) to (B, C*bins), flattened channel-major.
template <class T>
struct AdaptivePool {
  PoolSpec spec;

  struct Cache {
    std::array<std::size_t, 4> in_shape{};
    std::vector<std::size_t> argmax;
  };

  std::size_t width(std::size_t channels) const { return channels * spec.bins; }

  std::vector<T> forward(const Tensor<T>& x, Cache* c = nullptr) const {
    const std::size_t b = x.n(), ch = x.c(), h = x.h(), w = x.w(), o = spec.bins;
    std::vector<T> y(b * ch * o);
    if (c) {
      c->in_shape = x.shape;
      if (spec.kind == PoolKind::kMax) c->argmax.assign(y.size(), 0);
    }
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t k = 0; k < ch; ++k)
        for (std::size_t i = 0; i < o; ++i) {
          const auto [s, e] = adaptive_bin(i, h, o);
          const std::size_t base = (n * ch + k) * h * w;
          const std::size_t oi = (n * ch + k) * o + i;
          if (spec.kind == PoolKind::kAvg) {
            double acc = 0.0;
            for (std::size_t r = s; r < e; ++r)
              for (std::size_t q = 0; q < w; ++q) acc += x.data[base + r * w + q];
            y[oi] = static_cast<T>(acc / static_cast<double>((e - s) * w));
          } else {
            std::size_t best = base + s * w;
            for (std::size_t r = s; r < e; ++r)
              for (std::size_t q = 0; q < w; ++q)
                if (x.data[base + r * w + q] > x.data[best]) best = base + r * w + q;
            y[oi] = x.data[best];
            if (c) c->argmax[oi] = best;
          }
        }
    return y;
  }

  void backward(const T* dy, const Cache& c, Tensor<T>& dx) const {
    const std::size_t b = c.in_shape[0], ch = c.in_shape[1], h = c.in_shape[2], w = c.in_shape[3];
    const std::size_t o = spec.bins;
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t k = 0; k < ch; ++k)
        for (std::size_t i = 0; i < o; ++i) {
          const std::size_t oi = (n * ch + k) * o + i;
          if (spec.kind == PoolKind::kAvg) {
            const auto [s, e] = adaptive_bin(i, h, o);
            const T g = static_cast<T>(dy[oi] / static_cast<double>((e - s) * w));
            const std::size_t base = (n * ch + k) * h * w;
            for (std::size_t r = s; r < e; ++r)
              for (std::size_t q = 0; q < w; ++q) dx.data[base + r * w + q] += g;
          } else {
            dx.data[c.argmax[oi]] += dy[oi];
          }
        }
  }
};

// (B, P, C, W) <-> (B, C, P, W): swaps axes 1 and 2.
template <class T>
Tensor<T> swap_axes12(const Tensor<T>& x) {
  Tensor<T> y(x.n(), x.h(), x.c(), x.w());
  const std::size_t a = x.c(), b = x.h(), w = x.w();
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t j = 0; j < b; ++j) {
        const T* src = x.data.data() + ((n * a + i) * b + j) * w;
        T* dst = y.data.data() + ((n * b + j) * a + i) * w;
        std::copy(src, src + w, dst);
      }
  return y;
}

}  // namespace renil::asle
