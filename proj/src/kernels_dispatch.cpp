#include <atomic>

#include "verse/kernels.hpp"

namespace verse::kernels {

namespace {
std::atomic<Backend> g_backend{Backend::parallel};
}

void set_backend(Backend b) { g_backend.store(b, std::memory_order_relaxed); }
Backend backend() { return g_backend.load(std::memory_order_relaxed); }

#define VERSE_DISPATCH(name, ...)                                       \
  if (backend() == Backend::reference) return reference::name(__VA_ARGS__); \
  return parallel::name(__VA_ARGS__)

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda, const T* b,
          int ldb, T beta, T* c, int ldc) {
  VERSE_DISPATCH(gemm, trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <typename T>
void im2col(const ConvGeometry& g, const T* in, T* cols) {
  VERSE_DISPATCH(im2col, g, in, cols);
}

template <typename T>
void col2im(const ConvGeometry& g, const T* cols, T* grad_in) {
  VERSE_DISPATCH(col2im, g, cols, grad_in);
}

template <typename T>
void resize_bilinear(const T* in, int h, int w, int c, T* out, int oh, int ow) {
  VERSE_DISPATCH(resize_bilinear, in, h, w, c, out, oh, ow);
}

template <typename T>
void resize_bilinear_backward(const T* grad_out, int oh, int ow, int c, T* grad_in, int h, int w) {
  VERSE_DISPATCH(resize_bilinear_backward, grad_out, oh, ow, c, grad_in, h, w);
}

template <typename T>
void attention_forward(const AttentionShape& s, T scale, const T* q, const T* k, const T* v,
                       const std::uint8_t* key_allowed, T* probs, T* out) {
  VERSE_DISPATCH(attention_forward, s, scale, q, k, v, key_allowed, probs, out);
}

template <typename T>
void attention_backward(const AttentionShape& s, T scale, const T* q, const T* k, const T* v,
                        const T* probs, const T* grad_out, T* grad_q, T* grad_k, T* grad_v) {
  VERSE_DISPATCH(attention_backward, s, scale, q, k, v, probs, grad_out, grad_q, grad_k, grad_v);
}

template <typename T>
void layer_norm_forward(const T* x, int rows, int cols, const T* gamma, const T* beta, T eps, T* y,
                        T* mean, T* rstd) {
  VERSE_DISPATCH(layer_norm_forward, x, rows, cols, gamma, beta, eps, y, mean, rstd);
}

template <typename T>
void layer_norm_backward(const T* x, int rows, int cols, const T* gamma, const T* mean, const T* rstd,
                         const T* grad_y, T* grad_x, T* grad_gamma, T* grad_beta) {
  VERSE_DISPATCH(layer_norm_backward, x, rows, cols, gamma, mean, rstd, grad_y, grad_x, grad_gamma, grad_beta);
}

template <typename T>
void gelu_forward(const T* x, std::size_t n, T* y, T* t) {
  VERSE_DISPATCH(gelu_forward, x, n, y, t);
}

template <typename T>
void gelu_backward(const T* x, const T* t, const T* grad_y, std::size_t n, T* grad_x) {
  VERSE_DISPATCH(gelu_backward, x, t, grad_y, n, grad_x);
}

#undef VERSE_DISPATCH

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

}  // namespace verse::kernels
