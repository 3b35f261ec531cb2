#pragma once

// Numeric kernels behind the autograd ops.
//
// Every kernel exists twice: `reference` is a plain serial loop nest kept as
// the testing oracle, `parallel` is the OpenMP (and Eigen GEMM) version used
// for training and inference. The free functions in `verse::kernels` dispatch
// on the process-wide backend. Layouts are row-major and channels-last:
// feature maps are [H, W, C], token sets are [N, C].

#include <cstddef>
#include <cstdint>

namespace verse::kernels {

enum class Backend { reference, parallel };

void set_backend(Backend backend);
Backend backend();

/// Restores the previous backend on scope exit.
class BackendGuard {
 public:
  explicit BackendGuard(Backend b) : previous_(backend()) { set_backend(b); }
  ~BackendGuard() { set_backend(previous_); }
  BackendGuard(const BackendGuard&) = delete;
  BackendGuard& operator=(const BackendGuard&) = delete;

 private:
  Backend previous_;
};

struct ConvGeometry {
  int in_h = 0;
  int in_w = 0;
  int in_c = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  int patch() const { return kernel * kernel * in_c; }
};

struct AttentionShape {
  int queries = 0;
  int keys = 0;
  int channels = 0;
  int heads = 1;
  int head_dim() const { return channels / heads; }
};

#define VERSE_KERNEL_DECLS                                                                        \
  /* c = alpha * op(a) * op(b) + beta * c; op(a) is m x k, op(b) is k x n. */                     \
  template <typename T>                                                                           \
  void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda,        \
            const T* b, int ldb, T beta, T* c, int ldc);                                          \
  /* [H,W,C] -> [Ho*Wo, k*k*C], zero padding. */                                                  \
  template <typename T>                                                                           \
  void im2col(const ConvGeometry& g, const T* in, T* cols);                                       \
  /* Adjoint of im2col; accumulates into grad_in. */                                              \
  template <typename T>                                                                           \
  void col2im(const ConvGeometry& g, const T* cols, T* grad_in);                                  \
  /* Half-pixel-centred bilinear resampling (align_corners = false). */                           \
  template <typename T>                                                                           \
  void resize_bilinear(const T* in, int h, int w, int c, T* out, int oh, int ow);                 \
  template <typename T>                                                                           \
  void resize_bilinear_backward(const T* grad_out, int oh, int ow, int c, T* grad_in, int h,      \
                                int w);                                                           \
  /* Multi-head attention with a key mask shared by every query row. key_allowed may be null.    \
     A row whose keys are all disallowed falls back to unmasked attention. probs is              \
     [heads, queries, keys] and holds exact zeros at masked positions. */                         \
  template <typename T>                                                                           \
  void attention_forward(const AttentionShape& s, T scale, const T* q, const T* k, const T* v,    \
                         const std::uint8_t* key_allowed, T* probs, T* out);                      \
  /* Accumulates into grad_q, grad_k, grad_v. */                                                  \
  template <typename T>                                                                           \
  void attention_backward(const AttentionShape& s, T scale, const T* q, const T* k, const T* v,   \
                          const T* probs, const T* grad_out, T* grad_q, T* grad_k, T* grad_v);    \
  /* Row-wise layer norm; mean and rstd are per-row outputs kept for the backward pass. */        \
  template <typename T>                                                                           \
  void layer_norm_forward(const T* x, int rows, int cols, const T* gamma, const T* beta, T eps,   \
                          T* y, T* mean, T* rstd);                                                \
  /* Accumulates into grad_x, grad_gamma, grad_beta. */                                           \
  template <typename T>                                                                           \
  void layer_norm_backward(const T* x, int rows, int cols, const T* gamma, const T* mean,         \
                           const T* rstd, const T* grad_y, T* grad_x, T* grad_gamma,              \
                           T* grad_beta);                                                         \
  /* Tanh-approximated GELU over n values; t receives the inner tanh for the backward pass. */    \
  template <typename T>                                                                           \
  void gelu_forward(const T* x, std::size_t n, T* y, T* t);                                       \
  /* Accumulates into grad_x. */                                                                  \
  template <typename T>                                                                           \
  void gelu_backward(const T* x, const T* t, const T* grad_y, std::size_t n, T* grad_x);

namespace reference {
VERSE_KERNEL_DECLS
}  // namespace reference

namespace parallel {
VERSE_KERNEL_DECLS
}  // namespace parallel

VERSE_KERNEL_DECLS

#undef VERSE_KERNEL_DECLS

/// True when a key mask disallows every key, i.e. the unmasked fallback applies.
bool fully_masked(const std::uint8_t* key_allowed, int keys);

}  // namespace verse::kernels
