#pragma once

// Dense numeric kernels over raw row-major buffers.
//
// Two implementations live side by side: `mice::kernels` is the OpenMP
// production path used by the autodiff ops, and `mice::kernels::serial` is a
// plain-loop reference kept for the equivalence tests and the kernel
// benchmark. Every parallel loop assigns each output element to exactly one
// iteration and reduces in a fixed order, so results do not depend on the
// thread count.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>

namespace mice::kernels {

/// Value substituted for a disallowed logit before the softmax.
template <typename T>
constexpr T masked_logit() {
  if constexpr (sizeof(T) >= sizeof(double)) {
    return T(-1e300);
  } else {
    return T(-1e30);
  }
}

// Below this many multiply-adds a parallel region costs more than it saves.
inline constexpr std::size_t kParallelThreshold = 1 << 14;

namespace serial {

/// c[r×n] (+)= a[r×k] · b[k×n], textbook i-j-k order.
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t r, std::size_t k, std::size_t n,
             bool accumulate = false) {
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void masked_softmax_row(const T* logits, const std::uint8_t* allow, std::size_t s, T* out) {
  T mx = masked_logit<T>();
  for (std::size_t j = 0; j < s; ++j) {
    out[j] = allow[j] ? logits[j] : masked_logit<T>();
    if (out[j] > mx) mx = out[j];
  }
  T sum = 0;
  for (std::size_t j = 0; j < s; ++j) {
    out[j] = std::exp(out[j] - mx);
    sum += out[j];
  }
  for (std::size_t j = 0; j < s; ++j) out[j] = allow[j] ? out[j] / sum : T(0);
}

/// Multi-head masked attention, computed head by head with explicit score
/// matrices. Shapes: q[t×d], k[s×d], v[s×d], allow[t×s], probs[h×t×s], out[t×d].
template <typename T>
void attention_forward(const T* q, const T* k, const T* v, const std::uint8_t* allow,
                       std::size_t t, std::size_t s, std::size_t d, std::size_t heads, T* probs,
                       T* out) {
  const std::size_t dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  for (std::size_t i = 0; i < t * d; ++i) out[i] = 0;
  for (std::size_t h = 0; h < heads; ++h) {
    T* p = probs + h * t * s;
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t j = 0; j < s; ++j) {
        T dot = 0;
        for (std::size_t c = 0; c < dh; ++c) dot += q[i * d + h * dh + c] * k[j * d + h * dh + c];
        p[i * s + j] = dot * scale;
      }
      masked_softmax_row(p + i * s, allow + i * s, s, p + i * s);
    }
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t c = 0; c < dh; ++c) {
        T acc = 0;
        for (std::size_t j = 0; j < s; ++j) acc += p[i * s + j] * v[j * d + h * dh + c];
        out[i * d + h * dh + c] = acc;
      }
    }
  }
}

}  // namespace serial

/// c[r×n] (+)= a[r×k] · b[k×n]; rows of c are split across threads.
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t r, std::size_t k, std::size_t n,
             bool accumulate = false) {
  const auto rows = static_cast<std::ptrdiff_t>(r);
#pragma omp parallel for schedule(static) if (r * k * n > kParallelThreshold)
  for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    T* crow = c + i * n;
    if (!accumulate) {
      for (std::size_t j = 0; j < n; ++j) crow[j] = 0;
    }
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

/// c[r×n] (+)= a[r×k] · b[n×k]ᵀ.
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t r, std::size_t k, std::size_t n,
             bool accumulate = false) {
  const auto rows = static_cast<std::ptrdiff_t>(r);
#pragma omp parallel for schedule(static) if (r * k * n > kParallelThreshold)
  for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
    }
  }
}

/// c[r×n] (+)= a[k×r]ᵀ · b[k×n]. Each output row sums over k in ascending order.
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t r, std::size_t k, std::size_t n,
             bool accumulate = false) {
  const auto rows = static_cast<std::ptrdiff_t>(r);
#pragma omp parallel for schedule(static) if (r * k * n > kParallelThreshold)
  for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    T* crow = c + i * n;
    if (!accumulate) {
      for (std::size_t j = 0; j < n; ++j) crow[j] = 0;
    }
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[p * r + i];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

/// Row-wise masked softmax; `allow` has either `s` entries (shared by all
/// rows) or `rows*s`.
template <typename T>
void masked_softmax_rows(const T* logits, const std::uint8_t* allow, bool per_row,
                         std::size_t rows, std::size_t s, T* out) {
  const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * s > kParallelThreshold)
  for (std::ptrdiff_t ii = 0; ii < n; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    serial::masked_softmax_row(logits + i * s, allow + (per_row ? i * s : 0), s, out + i * s);
  }
}

/// Parallel-over-targets multi-head masked attention. Same contract as
/// serial::attention_forward.
template <typename T>
void attention_forward(const T* q, const T* k, const T* v, const std::uint8_t* allow,
                       std::size_t t, std::size_t s, std::size_t d, std::size_t heads, T* probs,
                       T* out) {
  const std::size_t dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const auto targets = static_cast<std::ptrdiff_t>(t);
#pragma omp parallel for schedule(static) if (t * s * d > kParallelThreshold)
  for (std::ptrdiff_t ii = 0; ii < targets; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const std::uint8_t* arow = allow + i * s;
    T* orow = out + i * d;
    for (std::size_t c = 0; c < d; ++c) orow[c] = 0;
    for (std::size_t h = 0; h < heads; ++h) {
      T* prow = probs + (h * t + i) * s;
      const T* qh = q + i * d + h * dh;
      for (std::size_t j = 0; j < s; ++j) {
        if (!arow[j]) {
          prow[j] = 0;
          continue;
        }
        const T* kh = k + j * d + h * dh;
        T dot = 0;
        for (std::size_t c = 0; c < dh; ++c) dot += qh[c] * kh[c];
        prow[j] = dot * scale;
      }
      serial::masked_softmax_row(prow, arow, s, prow);
      T* oh = orow + h * dh;
      for (std::size_t j = 0; j < s; ++j) {
        const T pj = prow[j];
        if (pj == T(0)) continue;
        const T* vh = v + j * d + h * dh;
        for (std::size_t c = 0; c < dh; ++c) oh[c] += pj * vh[c];
      }
    }
  }
}

/// Gradients of attention_forward. `dscores` is scratch of size h×t×s.
/// dq/dk/dv are accumulated into.
template <typename T>
void attention_backward(const T* q, const T* k, const T* v, const T* probs, const T* dout,
                        std::size_t t, std::size_t s, std::size_t d, std::size_t heads,
                        T* dscores, T* dq, T* dk, T* dv) {
  const std::size_t dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const auto targets = static_cast<std::ptrdiff_t>(t);
  const auto sources = static_cast<std::ptrdiff_t>(s);
  const bool par = t * s * d > kParallelThreshold;

#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t ii = 0; ii < targets; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    for (std::size_t h = 0; h < heads; ++h) {
      const T* prow = probs + (h * t + i) * s;
      T* grow = dscores + (h * t + i) * s;
      const T* go = dout + i * d + h * dh;
      T weighted = 0;
      for (std::size_t j = 0; j < s; ++j) {
        if (prow[j] == T(0)) {
          grow[j] = 0;
          continue;
        }
        const T* vh = v + j * d + h * dh;
        T dp = 0;
        for (std::size_t c = 0; c < dh; ++c) dp += go[c] * vh[c];
        grow[j] = dp;
        weighted += dp * prow[j];
      }
      for (std::size_t j = 0; j < s; ++j) grow[j] = prow[j] * (grow[j] - weighted) * scale;
      T* gq = dq + i * d + h * dh;
      for (std::size_t j = 0; j < s; ++j) {
        const T g = grow[j];
        if (g == T(0)) continue;
        const T* kh = k + j * d + h * dh;
        for (std::size_t c = 0; c < dh; ++c) gq[c] += g * kh[c];
      }
    }
  }

#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t jj = 0; jj < sources; ++jj) {
    const auto j = static_cast<std::size_t>(jj);
    for (std::size_t h = 0; h < heads; ++h) {
      T* gk = dk + j * d + h * dh;
      T* gv = dv + j * d + h * dh;
      for (std::size_t i = 0; i < t; ++i) {
        const T g = dscores[(h * t + i) * s + j];
        const T p = probs[(h * t + i) * s + j];
        if (g == T(0) && p == T(0)) continue;
        const T* qh = q + i * d + h * dh;
        const T* go = dout + i * d + h * dh;
        for (std::size_t c = 0; c < dh; ++c) {
          gk[c] += g * qh[c];
          gv[c] += p * go[c];
        }
      }
    }
  }
}

/// Row-wise layer normalization. Saves the normalized rows and the inverse
/// standard deviations for the backward pass.
template <typename T>
void layernorm_forward(const T* x, const T* gain, const T* bias, std::size_t rows, std::size_t d,
                       T eps, T* y, T* xhat, T* inv_std) {
  const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * d > kParallelThreshold)
  for (std::ptrdiff_t ii = 0; ii < n; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const T* xr = x + i * d;
    T mean = 0;
    for (std::size_t c = 0; c < d; ++c) mean += xr[c];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<T>(d);
    const T inv = T(1) / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (std::size_t c = 0; c < d; ++c) {
      const T h = (xr[c] - mean) * inv;
      xhat[i * d + c] = h;
      y[i * d + c] = h * gain[c] + bias[c];
    }
  }
}

template <typename T>
void layernorm_backward(const T* dy, const T* xhat, const T* inv_std, const T* gain,
                        std::size_t rows, std::size_t d, T* dx, T* dgain, T* dbias) {
  const auto n = static_cast<std::ptrdiff_t>(rows);
  const bool par = rows * d > kParallelThreshold;
  if (dx != nullptr) {
#pragma omp parallel for schedule(static) if (par)
    for (std::ptrdiff_t ii = 0; ii < n; ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      T sum_g = 0;
      T sum_gx = 0;
      for (std::size_t c = 0; c < d; ++c) {
        const T g = dy[i * d + c] * gain[c];
        sum_g += g;
        sum_gx += g * xhat[i * d + c];
      }
      const T inv_d = T(1) / static_cast<T>(d);
      for (std::size_t c = 0; c < d; ++c) {
        const T g = dy[i * d + c] * gain[c];
        dx[i * d + c] += inv_std[i] * (g - inv_d * sum_g - xhat[i * d + c] * inv_d * sum_gx);
      }
    }
  }
  if (dgain != nullptr || dbias != nullptr) {
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t c = 0; c < d; ++c) {
        if (dgain != nullptr) dgain[c] += dy[i * d + c] * xhat[i * d + c];
        if (dbias != nullptr) dbias[c] += dy[i * d + c];
      }
    }
  }
}

}  // namespace mice::kernels
