#pragma once

// Minimal dense NCHW tensor and the GEMM kernels behind convolutions.
// The kernels accumulate every output element over the inner dimension in
// ascending order, independent of the other matrix sizes, so results do not
// depend on batch size.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace renil::asle {

template <class T>
struct Tensor {
  std::array<std::size_t, 4> shape{0, 0, 0, 0};
  std::vector<T> data;

  Tensor() = default;
  Tensor(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T fill = T(0))
      : shape{n, c, h, w}, data(n * c * h * w, fill) {}

  std::size_t n() const { return shape[0]; }
  std::size_t c() const { return shape[1]; }
  std::size_t h() const { return shape[2]; }
  std::size_t w() const { return shape[3]; }
  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return shape[2] * shape[3]; }

  T& operator()(std::size_t a, std::size_t b, std::size_t c_, std::size_t d) {
    return data[((a * shape[1] + b) * shape[2] + c_) * shape[3] + d];
  }
  T operator()(std::size_t a, std::size_t b, std::size_t c_, std::size_t d) const {
    return data[((a * shape[1] + b) * shape[2] + c_) * shape[3] + d];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](T v) { return std::isfinite(v); });
  }

  void reshape(std::size_t n_, std::size_t c_, std::size_t h_, std::size_t w_) {
    if (n_ * c_ * h_ * w_ != data.size()) throw std::invalid_argument("reshape changes element count");
    shape = {n_, c_, h_, w_};
  }
};

template <class T>
std::string shape_string(const Tensor<T>& t) {
  return "(" + std::to_string(t.shape[0]) + "," + std::to_string(t.shape[1]) + "," +
         std::to_string(t.shape[2]) + "," + std::to_string(t.shape[3]) + ")";
}

// C[M x N] += A[M x K] * B[K x N], all row-major.
template <class T>
void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  constexpr std::size_t kRows = 4;
  constexpr std::size_t kCols = 512;
  for (std::size_t j0 = 0; j0 < n; j0 += kCols) {
    const std::size_t jn = std::min(kCols, n - j0);
    std::size_t i = 0;
    for (; i + kRows <= m; i += kRows) {
      T* c0 = c + (i + 0) * n + j0;
      T* c1 = c + (i + 1) * n + j0;
      T* c2 = c + (i + 2) * n + j0;
      T* c3 = c + (i + 3) * n + j0;
      const T* a0 = a + (i + 0) * k;
      const T* a1 = a + (i + 1) * k;
      const T* a2 = a + (i + 2) * k;
      const T* a3 = a + (i + 3) * k;
      for (std::size_t p = 0; p < k; ++p) {
        const T* brow = b + p * n + j0;
        const T v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
        for (std::size_t j = 0; j < jn; ++j) {
          const T bv = brow[j];
          c0[j] += v0 * bv;
          c1[j] += v1 * bv;
          c2[j] += v2 * bv;
          c3[j] += v3 * bv;
        }
      }
    }
    for (; i < m; ++i) {
      T* ci = c + i * n + j0;
      const T* ai = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const T* brow = b + p * n + j0;
        const T v = ai[p];
        for (std::size_t j = 0; j < jn; ++j) ci[j] += v * brow[j];
      }
    }
  }
}

// out[N x M] = in[M x N]^T
template <class T>
void transpose(std::size_t m, std::size_t n, const T* in, T* out) {
  constexpr std::size_t kB = 32;
  for (std::size_t i0 = 0; i0 < m; i0 += kB)
    for (std::size_t j0 = 0; j0 < n; j0 += kB)
      for (std::size_t i = i0; i < std::min(m, i0 + kB); ++i)
        for (std::size_t j = j0; j < std::min(n, j0 + kB); ++j) out[j * m + i] = in[i * n + j];
}

}  // namespace renil::asle
