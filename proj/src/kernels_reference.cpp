// Serial reference kernels. Straight loop nests, no blocking, no SIMD hints.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "verse/kernels.hpp"

namespace verse::kernels {

bool fully_masked(const std::uint8_t* key_allowed, int keys) {
  if (key_allowed == nullptr) return false;
  for (int j = 0; j < keys; ++j) {
    if (key_allowed[j]) return false;
  }
  return true;
}

namespace reference {

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda, const T* b,
          int ldb, T beta, T* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T acc = 0;
      for (int p = 0; p < k; ++p) {
        const T av = trans_a ? a[p * lda + i] : a[i * lda + p];
        const T bv = trans_b ? b[j * ldb + p] : b[p * ldb + j];
        acc += av * bv;
      }
      T& out = c[i * ldc + j];
      out = (beta == T(0) ? T(0) : beta * out) + alpha * acc;
    }
  }
}

template <typename T>
void im2col(const ConvGeometry& g, const T* in, T* cols) {
  const int oh = g.out_h();
  const int ow = g.out_w();
  const int patch = g.patch();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      T* row = cols + static_cast<std::size_t>(oy * ow + ox) * patch;
      for (int ky = 0; ky < g.kernel; ++ky) {
        for (int kx = 0; kx < g.kernel; ++kx) {
          const int iy = oy * g.stride - g.pad + ky;
          const int ix = ox * g.stride - g.pad + kx;
          T* dst = row + (ky * g.kernel + kx) * g.in_c;
          const bool inside = iy >= 0 && iy < g.in_h && ix >= 0 && ix < g.in_w;
          for (int ch = 0; ch < g.in_c; ++ch) {
            dst[ch] = inside ? in[(static_cast<std::size_t>(iy) * g.in_w + ix) * g.in_c + ch] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* cols, T* grad_in) {
  const int oh = g.out_h();
  const int ow = g.out_w();
  const int patch = g.patch();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const T* row = cols + static_cast<std::size_t>(oy * ow + ox) * patch;
      for (int ky = 0; ky < g.kernel; ++ky) {
        for (int kx = 0; kx < g.kernel; ++kx) {
          const int iy = oy * g.stride - g.pad + ky;
          const int ix = ox * g.stride - g.pad + kx;
          if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
          const T* src = row + (ky * g.kernel + kx) * g.in_c;
          for (int ch = 0; ch < g.in_c; ++ch) {
            grad_in[(static_cast<std::size_t>(iy) * g.in_w + ix) * g.in_c + ch] += src[ch];
          }
        }
      }
    }
  }
}

namespace {

struct Tap {
  int i0;
  int i1;
  double w1;
};

Tap source_tap(int dst, int in_size, int out_size) {
  const double scale = static_cast<double>(in_size) / out_size;
  double src = (dst + 0.5) * scale - 0.5;
  if (src < 0) src = 0;
  int i0 = static_cast<int>(std::floor(src));
  if (i0 > in_size - 1) i0 = in_size - 1;
  const int i1 = std::min(i0 + 1, in_size - 1);
  return {i0, i1, src - i0};
}

}  // namespace

template <typename T>
void resize_bilinear(const T* in, int h, int w, int c, T* out, int oh, int ow) {
  for (int y = 0; y < oh; ++y) {
    const Tap ty = source_tap(y, h, oh);
    for (int x = 0; x < ow; ++x) {
      const Tap tx = source_tap(x, w, ow);
      const T wy1 = static_cast<T>(ty.w1), wy0 = T(1) - wy1;
      const T wx1 = static_cast<T>(tx.w1), wx0 = T(1) - wx1;
      for (int ch = 0; ch < c; ++ch) {
        const T v00 = in[(static_cast<std::size_t>(ty.i0) * w + tx.i0) * c + ch];
        const T v01 = in[(static_cast<std::size_t>(ty.i0) * w + tx.i1) * c + ch];
        const T v10 = in[(static_cast<std::size_t>(ty.i1) * w + tx.i0) * c + ch];
        const T v11 = in[(static_cast<std::size_t>(ty.i1) * w + tx.i1) * c + ch];
        out[(static_cast<std::size_t>(y) * ow + x) * c + ch] =
            wy0 * (wx0 * v00 + wx1 * v01) + wy1 * (wx0 * v10 + wx1 * v11);
      }
    }
  }
}

template <typename T>
void resize_bilinear_backward(const T* grad_out, int oh, int ow, int c, T* grad_in, int h, int w) {
  for (int y = 0; y < oh; ++y) {
    const Tap ty = source_tap(y, h, oh);
    for (int x = 0; x < ow; ++x) {
      const Tap tx = source_tap(x, w, ow);
      const T wy1 = static_cast<T>(ty.w1), wy0 = T(1) - wy1;
      const T wx1 = static_cast<T>(tx.w1), wx0 = T(1) - wx1;
      for (int ch = 0; ch < c; ++ch) {
        const T g = grad_out[(static_cast<std::size_t>(y) * ow + x) * c + ch];
        grad_in[(static_cast<std::size_t>(ty.i0) * w + tx.i0) * c + ch] += wy0 * wx0 * g;
        grad_in[(static_cast<std::size_t>(ty.i0) * w + tx.i1) * c + ch] += wy0 * wx1 * g;
        grad_in[(static_cast<std::size_t>(ty.i1) * w + tx.i0) * c + ch] += wy1 * wx0 * g;
        grad_in[(static_cast<std::size_t>(ty.i1) * w + tx.i1) * c + ch] += wy1 * wx1 * g;
      }
    }
  }
}

template <typename T>
void attention_forward(const AttentionShape& s, T scale, const T* q, const T* k, const T* v,
                       const std::uint8_t* key_allowed, T* probs, T* out) {
  const int dh = s.head_dim();
  const std::uint8_t* allowed = fully_masked(key_allowed, s.keys) ? nullptr : key_allowed;
  std::vector<T> logits(static_cast<std::size_t>(s.keys));
  for (int h = 0; h < s.heads; ++h) {
    for (int i = 0; i < s.queries; ++i) {
      T* p = probs + (static_cast<std::size_t>(h) * s.queries + i) * s.keys;
      T max_logit = -std::numeric_limits<T>::infinity();
      for (int j = 0; j < s.keys; ++j) {
        if (allowed && !allowed[j]) continue;
        T dot = 0;
        for (int d = 0; d < dh; ++d) {
          dot += q[static_cast<std::size_t>(i) * s.channels + h * dh + d] *
                 k[static_cast<std::size_t>(j) * s.channels + h * dh + d];
        }
        logits[j] = dot * scale;
        max_logit = std::max(max_logit, logits[j]);
      }
      T total = 0;
      for (int j = 0; j < s.keys; ++j) {
        if (allowed && !allowed[j]) {
          p[j] = T(0);
          continue;
        }
        p[j] = std::exp(logits[j] - max_logit);
        total += p[j];
      }
      for (int j = 0; j < s.keys; ++j) p[j] /= total;
      for (int d = 0; d < dh; ++d) {
        T acc = 0;
        for (int j = 0; j < s.keys; ++j) acc += p[j] * v[static_cast<std::size_t>(j) * s.channels + h * dh + d];
        out[static_cast<std::size_t>(i) * s.channels + h * dh + d] = acc;
      }
    }
  }
}

template <typename T>
void attention_backward(const AttentionShape& s, T scale, const T* q, const T* k, const T* v,
                        const T* probs, const T* grad_out, T* grad_q, T* grad_k, T* grad_v) {
  const int dh = s.head_dim();
  std::vector<T> dp(static_cast<std::size_t>(s.keys));
  for (int h = 0; h < s.heads; ++h) {
    for (int i = 0; i < s.queries; ++i) {
      const T* p = probs + (static_cast<std::size_t>(h) * s.queries + i) * s.keys;
      const T* go = grad_out + static_cast<std::size_t>(i) * s.channels + h * dh;
      T weighted = 0;
      for (int j = 0; j < s.keys; ++j) {
        T dot = 0;
        for (int d = 0; d < dh; ++d) dot += go[d] * v[static_cast<std::size_t>(j) * s.channels + h * dh + d];
        dp[j] = dot;
        weighted += p[j] * dot;
        for (int d = 0; d < dh; ++d) grad_v[static_cast<std::size_t>(j) * s.channels + h * dh + d] += p[j] * go[d];
      }
      for (int j = 0; j < s.keys; ++j) {
        const T ds = p[j] * (dp[j] - weighted) * scale;
        if (ds == T(0)) continue;
        for (int d = 0; d < dh; ++d) {
          grad_q[static_cast<std::size_t>(i) * s.channels + h * dh + d] +=
              ds * k[static_cast<std::size_t>(j) * s.channels + h * dh + d];
          grad_k[static_cast<std::size_t>(j) * s.channels + h * dh + d] +=
              ds * q[static_cast<std::size_t>(i) * s.channels + h * dh + d];
        }
      }
    }
  }
}

template <typename T>
void layer_norm_forward(const T* x, int rows, int cols, const T* gamma, const T* beta, T eps, T* y,
                        T* mean, T* rstd) {
  for (int r = 0; r < rows; ++r) {
    const T* xr = x + static_cast<std::size_t>(r) * cols;
    T mu = 0;
    for (int c = 0; c < cols; ++c) mu += xr[c];
    mu /= cols;
    T var = 0;
    for (int c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= cols;
    const T rs = T(1) / std::sqrt(var + eps);
    mean[r] = mu;
    rstd[r] = rs;
    for (int c = 0; c < cols; ++c) y[static_cast<std::size_t>(r) * cols + c] = (xr[c] - mu) * rs * gamma[c] + beta[c];
  }
}

template <typename T>
void layer_norm_backward(const T* x, int rows, int cols, const T* gamma, const T* mean, const T* rstd,
                         const T* grad_y, T* grad_x, T* grad_gamma, T* grad_beta) {
  for (int r = 0; r < rows; ++r) {
    const T* xr = x + static_cast<std::size_t>(r) * cols;
    const T* gy = grad_y + static_cast<std::size_t>(r) * cols;
    T sum_dxhat = 0;
    T sum_dxhat_xhat = 0;
    for (int c = 0; c < cols; ++c) {
      const T xhat = (xr[c] - mean[r]) * rstd[r];
      const T dxhat = gy[c] * gamma[c];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
      grad_gamma[c] += gy[c] * xhat;
      grad_beta[c] += gy[c];
    }
    for (int c = 0; c < cols; ++c) {
      const T xhat = (xr[c] - mean[r]) * rstd[r];
      const T dxhat = gy[c] * gamma[c];
      grad_x[static_cast<std::size_t>(r) * cols + c] +=
          rstd[r] * (dxhat - sum_dxhat / cols - xhat * sum_dxhat_xhat / cols);
    }
  }
}

template <typename T>
void gelu_forward(const T* x, std::size_t n, T* y, T* t) {
  constexpr T k = T(0.7978845608028654);
  constexpr T c = T(0.044715);
  for (std::size_t i = 0; i < n; ++i) {
    const T u = x[i];
    t[i] = std::tanh(k * (u + c * u * u * u));
    y[i] = T(0.5) * u * (T(1) + t[i]);
  }
}

template <typename T>
void gelu_backward(const T* x, const T* t, const T* grad_y, std::size_t n, T* grad_x) {
  constexpr T k = T(0.7978845608028654);
  constexpr T c = T(0.044715);
  for (std::size_t i = 0; i < n; ++i) {
    const T u = x[i];
    const T d = T(0.5) * (T(1) + t[i]) + T(0.5) * u * (T(1) - t[i] * t[i]) * k * (T(1) + T(3) * c * u * u);
    grad_x[i] += grad_y[i] * d;
  }
}

#define VERSE_INSTANTIATE(T)                                                                          \
  template void gemm<T>(bool, bool, int, int, int, T, const T*, int, const T*, int, T, T*, int);      \
  template void im2col<T>(const ConvGeometry&, const T*, T*);                                         \
  template void col2im<T>(const ConvGeometry&, const T*, T*);                                         \
  template void resize_bilinear<T>(const T*, int, int, int, T*, int, int);                            \
  template void resize_bilinear_backward<T>(const T*, int, int, int, T*, int, int);                   \
  template void attention_forward<T>(const AttentionShape&, T, const T*, const T*, const T*,          \
                                     const std::uint8_t*, T*, T*);                                    \
  template void attention_backward<T>(const AttentionShape&, T, const T*, const T*, const T*,         \
                                      const T*, const T*, T*, T*, T*);                                \
  template void layer_norm_forward<T>(const T*, int, int, const T*, const T*, T, T*, T*, T*);         \
  template void layer_norm_backward<T>(const T*, int, int, const T*, const T*, const T*, const T*,    \
                                       T*, T*, T*);                                                 \
  template void gelu_forward<T>(const T*, std::size_t, T*, T*);                                      \
  template void gelu_backward<T>(const T*, const T*, const T*, std::size_t, T*);

VERSE_INSTANTIATE(float)
VERSE_INSTANTIATE(double)
#undef VERSE_INSTANTIATE

}  // namespace reference
}  // namespace verse::kernels
