// OpenMP kernels. Dense products go through Eigen; everything else is a
// row-parallel loop whose inner dimension is the contiguous channel axis.

#include <omp.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include "verse/kernels.hpp"

namespace verse::kernels::parallel {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;

struct Tap {
  int i0;
  int i1;
  double w1;
};

std::vector<Tap> source_taps(int in_size, int out_size) {
  std::vector<Tap> taps(static_cast<std::size_t>(out_size));
  const double scale = static_cast<double>(in_size) / out_size;
  for (int d = 0; d < out_size; ++d) {
    double src = (d + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in_size - 1) i0 = in_size - 1;
    taps[d] = {i0, std::min(i0 + 1, in_size - 1), src - i0};
  }
  return taps;
}

// Nested parallel regions only oversubscribe; kernels called from an already
// parallel caller (per-instance evaluation) run their loops serially.
bool go_parallel() { return !omp_in_parallel(); }

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda, const T* b,
          int ldb, T beta, T* c, int ldc) {
  if (m == 0 || n == 0) return;
  MutMap<T> cm(c, m, n, Eigen::OuterStride<>(ldc));
  if (k == 0) {
    if (beta == T(0)) cm.setZero();
    else cm *= beta;
    return;
  }
  ConstMap<T> am(a, trans_a ? k : m, trans_a ? m : k, Eigen::OuterStride<>(lda));
  ConstMap<T> bm(b, trans_b ? n : k, trans_b ? k : n, Eigen::OuterStride<>(ldb));
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (beta == T(0)) {
      cm.noalias() = alpha * lhs * rhs;
    } else {
      if (beta != T(1)) cm *= beta;
      cm.noalias() += alpha * lhs * rhs;
    }
  };
  if (!trans_a && !trans_b) run(am, bm);
  else if (trans_a && !trans_b) run(am.transpose(), bm);
  else if (!trans_a && trans_b) run(am, bm.transpose());
  else run(am.transpose(), bm.transpose());
}

template <typename T>
void im2col(const ConvGeometry& g, const T* in, T* cols) {
  const int oh = g.out_h();
  const int ow = g.out_w();
  const int patch = g.patch();
#pragma omp parallel for schedule(static) if (go_parallel())
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      T* row = cols + static_cast<std::size_t>(oy * ow + ox) * patch;
      for (int ky = 0; ky < g.kernel; ++ky) {
        const int iy = oy * g.stride - g.pad + ky;
        for (int kx = 0; kx < g.kernel; ++kx) {
          const int ix = ox * g.stride - g.pad + kx;
          T* dst = row + (ky * g.kernel + kx) * g.in_c;
          if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) {
            std::memset(dst, 0, sizeof(T) * g.in_c);
          } else {
            std::memcpy(dst, in + (static_cast<std::size_t>(iy) * g.in_w + ix) * g.in_c, sizeof(T) * g.in_c);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* cols, T* grad_in) {
  // Gather form: each input pixel sums the patch entries that read it, so
  // rows of the input can be processed independently.
  const int oh = g.out_h();
  const int ow = g.out_w();
  const int patch = g.patch();
#pragma omp parallel for schedule(static) if (go_parallel())
  for (int iy = 0; iy < g.in_h; ++iy) {
    for (int ix = 0; ix < g.in_w; ++ix) {
      T* dst = grad_in + (static_cast<std::size_t>(iy) * g.in_w + ix) * g.in_c;
      for (int ky = 0; ky < g.kernel; ++ky) {
        const int ny = iy + g.pad - ky;
        if (ny < 0 || ny % g.stride != 0) continue;
        const int oy = ny / g.stride;
        if (oy >= oh) continue;
        for (int kx = 0; kx < g.kernel; ++kx) {
          const int nx = ix + g.pad - kx;
          if (nx < 0 || nx % g.stride != 0) continue;
          const int ox = nx / g.stride;
          if (ox >= ow) continue;
          const T* src = cols + static_cast<std::size_t>(oy * ow + ox) * patch + (ky * g.kernel + kx) * g.in_c;
          for (int ch = 0; ch < g.in_c; ++ch) dst[ch] += src[ch];
        }
      }
    }
  }
}

template <typename T>
void resize_bilinear(const T* in, int h, int w, int c, T* out, int oh, int ow) {
  const auto ty = source_taps(h, oh);
  const auto tx = source_taps(w, ow);
#pragma omp parallel for schedule(static) if (go_parallel())
  for (int y = 0; y < oh; ++y) {
    const T wy1 = static_cast<T>(ty[y].w1), wy0 = T(1) - wy1;
    const T* r0 = in + static_cast<std::size_t>(ty[y].i0) * w * c;
    const T* r1 = in + static_cast<std::size_t>(ty[y].i1) * w * c;
    for (int x = 0; x < ow; ++x) {
      const T wx1 = static_cast<T>(tx[x].w1), wx0 = T(1) - wx1;
      const T* a = r0 + static_cast<std::size_t>(tx[x].i0) * c;
      const T* b = r0 + static_cast<std::size_t>(tx[x].i1) * c;
      const T* d = r1 + static_cast<std::size_t>(tx[x].i0) * c;
      const T* e = r1 + static_cast<std::size_t>(tx[x].i1) * c;
      T* o = out + (static_cast<std::size_t>(y) * ow + x) * c;
      for (int ch = 0; ch < c; ++ch) o[ch] = wy0 * (wx0 * a[ch] + wx1 * b[ch]) + wy1 * (wx0 * d[ch] + wx1 * e[ch]);
    }
  }
}

template <typename T>
void resize_bilinear_backward(const T* grad_out, int oh, int ow, int c, T* grad_in, int h, int w) {
  const auto ty = source_taps(h, oh);
  const auto tx = source_taps(w, ow);
  // Scatter-add: threads own disjoint channel ranges.
#pragma omp parallel if (go_parallel())
  {
    const int nt = omp_get_num_threads();
    const int tid = omp_get_thread_num();
    const int c0 = c * tid / nt;
    const int c1 = c * (tid + 1) / nt;
    for (int y = 0; y < oh; ++y) {
      const T wy1 = static_cast<T>(ty[y].w1), wy0 = T(1) - wy1;
      T* r0 = grad_in + static_cast<std::size_t>(ty[y].i0) * w * c;
      T* r1 = grad_in + static_cast<std::size_t>(ty[y].i1) * w * c;
      for (int x = 0; x < ow; ++x) {
        const T wx1 = static_cast<T>(tx[x].w1), wx0 = T(1) - wx1;
        const T* g = grad_out + (static_cast<std::size_t>(y) * ow + x) * c;
        T* a = r0 + static_cast<std::size_t>(tx[x].i0) * c;
        T* b = r0 + static_cast<std::size_t>(tx[x].i1) * c;
        T* d = r1 + static_cast<std::size_t>(tx[x].i0) * c;
        T* e = r1 + static_cast<std::size_t>(tx[x].i1) * c;
        const T w00 = wy0 * wx0, w01 = wy0 * wx1, w10 = wy1 * wx0, w11 = wy1 * wx1;
        for (int ch = c0; ch < c1; ++ch) {
          a[ch] += w00 * g[ch];
          b[ch] += w01 * g[ch];
          d[ch] += w10 * g[ch];
          e[ch] += w11 * g[ch];
        }
      }
    }
  }
}

template <typename T>
void attention_forward(const AttentionShape& s, T scale, const T* q, const T* k, const T* v,
                       const std::uint8_t* key_allowed, T* probs, T* out) {
  const int dh = s.head_dim();
  const std::uint8_t* allowed = fully_masked(key_allowed, s.keys) ? nullptr : key_allowed;
  const Eigen::OuterStride<> stride(s.channels);
  for (int h = 0; h < s.heads; ++h) {
    ConstMap<T> qh(q + h * dh, s.queries, dh, stride);
    ConstMap<T> kh(k + h * dh, s.keys, dh, stride);
    ConstMap<T> vh(v + h * dh, s.keys, dh, stride);
    MutMap<T> p(probs + static_cast<std::size_t>(h) * s.queries * s.keys, s.queries, s.keys,
                Eigen::OuterStride<>(s.keys));
    p.noalias() = scale * qh * kh.transpose();
#pragma omp parallel for schedule(static) if (go_parallel())
    for (int i = 0; i < s.queries; ++i) {
      T* row = probs + (static_cast<std::size_t>(h) * s.queries + i) * s.keys;
      T max_logit = -std::numeric_limits<T>::infinity();
      for (int j = 0; j < s.keys; ++j) {
        if (!allowed || allowed[j]) max_logit = std::max(max_logit, row[j]);
      }
      T total = 0;
      for (int j = 0; j < s.keys; ++j) {
        if (allowed && !allowed[j]) {
          row[j] = T(0);
        } else {
          row[j] = std::exp(row[j] - max_logit);
          total += row[j];
        }
      }
      const T inv = T(1) / total;
      for (int j = 0; j < s.keys; ++j) row[j] *= inv;
    }
    MutMap<T> oh(out + h * dh, s.queries, dh, stride);
    oh.noalias() = p * vh;
  }
}

template <typename T>
void attention_backward(const AttentionShape& s, T scale, const T* q, const T* k, const T* v,
                        const T* probs, const T* grad_out, T* grad_q, T* grad_k, T* grad_v) {
  const int dh = s.head_dim();
  const Eigen::OuterStride<> stride(s.channels);
  RowMat<T> ds(s.queries, s.keys);
  for (int h = 0; h < s.heads; ++h) {
    ConstMap<T> qh(q + h * dh, s.queries, dh, stride);
    ConstMap<T> kh(k + h * dh, s.keys, dh, stride);
    ConstMap<T> vh(v + h * dh, s.keys, dh, stride);
    ConstMap<T> goh(grad_out + h * dh, s.queries, dh, stride);
    ConstMap<T> p(probs + static_cast<std::size_t>(h) * s.queries * s.keys, s.queries, s.keys,
                  Eigen::OuterStride<>(s.keys));
    MutMap<T> gqh(grad_q + h * dh, s.queries, dh, stride);
    MutMap<T> gkh(grad_k + h * dh, s.keys, dh, stride);
    MutMap<T> gvh(grad_v + h * dh, s.keys, dh, stride);
    gvh.noalias() += p.transpose() * goh;
    ds.noalias() = goh * vh.transpose();
#pragma omp parallel for schedule(static) if (go_parallel())
    for (int i = 0; i < s.queries; ++i) {
      T weighted = 0;
      for (int j = 0; j < s.keys; ++j) weighted += p(i, j) * ds(i, j);
      for (int j = 0; j < s.keys; ++j) ds(i, j) = p(i, j) * (ds(i, j) - weighted) * scale;
    }
    gqh.noalias() += ds * kh;
    gkh.noalias() += ds.transpose() * qh;
  }
}

template <typename T>
void layer_norm_forward(const T* x, int rows, int cols, const T* gamma, const T* beta, T eps, T* y,
                        T* mean, T* rstd) {
#pragma omp parallel for schedule(static) if (go_parallel())
  for (int r = 0; r < rows; ++r) {
    const T* xr = x + static_cast<std::size_t>(r) * cols;
    T* yr = y + static_cast<std::size_t>(r) * cols;
    T mu = 0;
    for (int c = 0; c < cols; ++c) mu += xr[c];
    mu /= cols;
    T var = 0;
    for (int c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= cols;
    const T rs = T(1) / std::sqrt(var + eps);
    mean[r] = mu;
    rstd[r] = rs;
    for (int c = 0; c < cols; ++c) yr[c] = (xr[c] - mu) * rs * gamma[c] + beta[c];
  }
}

template <typename T>
void layer_norm_backward(const T* x, int rows, int cols, const T* gamma, const T* mean, const T* rstd,
                         const T* grad_y, T* grad_x, T* grad_gamma, T* grad_beta) {
#pragma omp parallel for schedule(static) if (go_parallel())
  for (int r = 0; r < rows; ++r) {
    const T* xr = x + static_cast<std::size_t>(r) * cols;
    const T* gy = grad_y + static_cast<std::size_t>(r) * cols;
    T* gx = grad_x + static_cast<std::size_t>(r) * cols;
    T sum_dxhat = 0;
    T sum_dxhat_xhat = 0;
    for (int c = 0; c < cols; ++c) {
      const T xhat = (xr[c] - mean[r]) * rstd[r];
      const T dxhat = gy[c] * gamma[c];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
    }
    const T a = sum_dxhat / cols;
    const T b = sum_dxhat_xhat / cols;
    for (int c = 0; c < cols; ++c) {
      const T xhat = (xr[c] - mean[r]) * rstd[r];
      gx[c] += rstd[r] * (gy[c] * gamma[c] - a - xhat * b);
    }
  }
  // Parameter gradients reduce over rows; keep them serial so the summation
  // order is fixed.
  for (int r = 0; r < rows; ++r) {
    const T* xr = x + static_cast<std::size_t>(r) * cols;
    const T* gy = grad_y + static_cast<std::size_t>(r) * cols;
    const T mu = mean[r];
    const T rs = rstd[r];
    for (int c = 0; c < cols; ++c) {
      grad_gamma[c] += gy[c] * (xr[c] - mu) * rs;
      grad_beta[c] += gy[c];
    }
  }
}

template <typename T>
void gelu_forward(const T* x, std::size_t n, T* y, T* t) {
  constexpr T k = T(0.7978845608028654);
  constexpr T c = T(0.044715);
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  constexpr std::ptrdiff_t block = 4096;
  const auto total = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (go_parallel() && total > 4 * block)
  for (std::ptrdiff_t b = 0; b < total; b += block) {
    const std::ptrdiff_t len = std::min(block, total - b);
    Eigen::Map<const Arr> u(x + b, len);
    Eigen::Map<Arr> tt(t + b, len), yy(y + b, len);
    tt = (k * (u + c * u.cube())).tanh();
    yy = T(0.5) * u * (T(1) + tt);
  }
}

template <typename T>
void gelu_backward(const T* x, const T* t, const T* grad_y, std::size_t n, T* grad_x) {
  constexpr T k = T(0.7978845608028654);
  constexpr T c = T(0.044715);
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  Eigen::Map<const Arr> u(x, n), tt(t, n), g(grad_y, n);
  Eigen::Map<Arr> gx(grad_x, n);
  gx += g * (T(0.5) * (T(1) + tt) + T(0.5) * u * (T(1) - tt.square()) * k * (T(1) + T(3) * c * u.square()));
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

}  // namespace verse::kernels::parallel
