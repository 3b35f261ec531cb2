#include "verse/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include "verse/kernels.hpp"

namespace verse::ad {

namespace {

thread_local bool t_grad_enabled = true;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

/// Wraps a freshly computed value into a graph node. The backward closure is
/// attached only when it can matter.
template <typename T>
Var<T> make_result(Tensor<T> value, std::initializer_list<Var<T>> inputs, std::function<void(Node<T>&)> fn) {
  bool needs = false;
  if (t_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (needs) {
    node->requires_grad = true;
    for (const auto& in : inputs) {
      if (in.requires_grad()) node->parents.push_back(in.node());
    }
    node->backward = std::move(fn);
  }
  return Var<T>(std::move(node));
}

template <typename T>
Var<T> make_result(Tensor<T> value, const std::vector<Var<T>>& inputs, std::function<void(Node<T>&)> fn) {
  bool needs = false;
  if (t_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (needs) {
    node->requires_grad = true;
    for (const auto& in : inputs) {
      if (in.requires_grad()) node->parents.push_back(in.node());
    }
    node->backward = std::move(fn);
  }
  return Var<T>(std::move(node));
}

template <typename T>
T* grad_of(const NodePtr<T>& n) {
  return n->requires_grad ? n->grad_buffer().data() : nullptr;
}

Shape replace_last(Shape s, int last) {
  s.back() = last;
  return s;
}

}  // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

template <typename T>
void backward(const Var<T>& root) {
  if (!root.requires_grad()) return;
  if (root.value().size() != 1) throw ContractError("backward: root must hold a single element");

  // Iterative post-order DFS; reversed it is a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && node->grad.defined()) node->backward(*node);
  }
  // Free intermediate gradients so repeated backward passes over shared
  // leaves do not double count through stale interior buffers.
  for (Node<T>* node : order) {
    if (node->backward) node->grad = Tensor<T>();
  }
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor<T> out(a.shape());
  const std::size_t n = out.size();
  const T* x = a.value().data();
  const T* y = b.value().data();
  T* o = out.data();
  for (std::size_t i = 0; i < n; ++i) o[i] = x[i] + y[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>(std::move(out), {a, b}, [an, bn](Node<T>& self) {
    const T* g = self.grad.data();
    const std::size_t n = self.grad.size();
    if (T* ga = grad_of(an)) for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
    if (T* gb = grad_of(bn)) for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor<T> out(a.shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = a.value()[i] - b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>(std::move(out), {a, b}, [an, bn](Node<T>& self) {
    const T* g = self.grad.data();
    const std::size_t n = self.grad.size();
    if (T* ga = grad_of(an)) for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
    if (T* gb = grad_of(bn)) for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor<T> out(a.shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = a.value()[i] * b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>(std::move(out), {a, b}, [an, bn](Node<T>& self) {
    const T* g = self.grad.data();
    const std::size_t n = self.grad.size();
    if (T* ga = grad_of(an)) for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bn->value[i];
    if (T* gb = grad_of(bn)) for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * an->value[i];
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * factor;
  auto an = a.node();
  return make_result<T>(std::move(out), {a}, [an, factor](Node<T>& self) {
    T* ga = grad_of(an);
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * factor;
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const int in = w.value().dim(1);
  const int out_dim = w.value().dim(0);
  if (x.value().cols() != in) {
    throw ContractError("linear: input " + shape_string(x.shape()) + " vs weight " + shape_string(w.shape()));
  }
  const int rows = x.value().rows();
  Tensor<T> out(replace_last(x.shape(), out_dim));
  kernels::gemm<T>(false, true, rows, out_dim, in, T(1), x.value().data(), in, w.value().data(), in, T(0),
                   out.data(), out_dim);
  if (b.defined()) {
    const T* bias = b.value().data();
    T* o = out.data();
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < out_dim; ++c) o[static_cast<std::size_t>(r) * out_dim + c] += bias[c];
  }
  auto xn = x.node(), wn = w.node();
  auto bn = b.defined() ? b.node() : nullptr;
  Var<T> result = b.defined() ? make_result<T>(std::move(out), {x, w, b}, nullptr)
                              : make_result<T>(std::move(out), {x, w}, nullptr);
  if (result.requires_grad()) {
    result.node()->backward = [xn, wn, bn, rows, in, out_dim](Node<T>& self) {
      const T* g = self.grad.data();
      if (T* gx = grad_of(xn)) {
        kernels::gemm<T>(false, false, rows, in, out_dim, T(1), g, out_dim, wn->value.data(), in, T(1), gx, in);
      }
      if (T* gw = grad_of(wn)) {
        kernels::gemm<T>(true, false, out_dim, in, rows, T(1), g, out_dim, xn->value.data(), in, T(1), gw, in);
      }
      if (bn) {
        if (T* gb = grad_of(bn)) {
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < out_dim; ++c) gb[c] += g[static_cast<std::size_t>(r) * out_dim + c];
        }
      }
    };
  }
  return result;
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
  if (x.value().rank() != 3 || w.value().rank() != 4 || w.value().dim(3) != x.value().dim(2) ||
      w.value().dim(1) != w.value().dim(2)) {
    throw ContractError("conv2d: input " + shape_string(x.shape()) + " vs weight " + shape_string(w.shape()));
  }
  kernels::ConvGeometry g{x.value().dim(0), x.value().dim(1), x.value().dim(2), w.value().dim(1), stride, pad};
  const int cout = w.value().dim(0);
  const int oh = g.out_h(), ow = g.out_w();
  const int rows = oh * ow;
  const int patch = g.patch();
  const bool pointwise = g.kernel == 1 && stride == 1 && pad == 0;

  Tensor<T> cols;
  const T* col_ptr = x.value().data();
  if (!pointwise) {
    cols = Tensor<T>({rows, patch});
    kernels::im2col<T>(g, x.value().data(), cols.data());
    col_ptr = cols.data();
  }
  Tensor<T> out({oh, ow, cout});
  kernels::gemm<T>(false, true, rows, cout, patch, T(1), col_ptr, patch, w.value().data(), patch, T(0), out.data(), cout);
  if (b.defined()) {
    const T* bias = b.value().data();
    T* o = out.data();
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cout; ++c) o[static_cast<std::size_t>(r) * cout + c] += bias[c];
  }
  auto xn = x.node(), wn = w.node();
  auto bn = b.defined() ? b.node() : nullptr;
  Var<T> result = b.defined() ? make_result<T>(std::move(out), {x, w, b}, nullptr)
                              : make_result<T>(std::move(out), {x, w}, nullptr);
  if (result.requires_grad()) {
    result.node()->backward = [xn, wn, bn, g, cols, rows, cout, patch, pointwise](Node<T>& self) {
      const T* gy = self.grad.data();
      if (T* gw = grad_of(wn)) {
        const T* src = pointwise ? xn->value.data() : cols.data();
        kernels::gemm<T>(true, false, cout, patch, rows, T(1), gy, cout, src, patch, T(1), gw, patch);
      }
      if (bn) {
        if (T* gb = grad_of(bn)) {
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cout; ++c) gb[c] += gy[static_cast<std::size_t>(r) * cout + c];
        }
      }
      if (T* gx = grad_of(xn)) {
        if (pointwise) {
          kernels::gemm<T>(false, false, rows, patch, cout, T(1), gy, cout, wn->value.data(), patch, T(1), gx, patch);
        } else {
          Tensor<T> gcols({rows, patch});
          kernels::gemm<T>(false, false, rows, patch, cout, T(1), gy, cout, wn->value.data(), patch, T(0),
                           gcols.data(), patch);
          kernels::col2im<T>(g, gcols.data(), gx);
        }
      }
    };
  }
  return result;
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out(x.shape());
  const T* v = x.value().data();
  T* o = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] = v[i] > T(0) ? v[i] : T(0);
  auto xn = x.node();
  return make_result<T>(std::move(out), {x}, [xn](Node<T>& self) {
    T* gx = grad_of(xn);
    const T* v = xn->value.data();
    const T* g = self.grad.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += v[i] > T(0) ? g[i] : T(0);
  });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  Tensor<T> out(x.shape());
  Tensor<T> t(x.shape());
  kernels::gelu_forward<T>(x.value().data(), out.size(), out.data(), t.data());
  auto xn = x.node();
  return make_result<T>(std::move(out), {x}, [xn, t](Node<T>& self) {
    kernels::gelu_backward<T>(xn->value.data(), t.data(), self.grad.data(), self.grad.size(), grad_of(xn));
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out(x.shape());
  const T* v = x.value().data();
  T* o = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] = T(1) / (T(1) + std::exp(-v[i]));
  auto xn = x.node();
  Tensor<T> y = out;
  return make_result<T>(std::move(out), {x}, [xn, y](Node<T>& self) {
    T* gx = grad_of(xn);
    const T* g = self.grad.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const int cols = x.value().cols();
  const int rows = x.value().rows();
  if (gamma.value().size() != static_cast<std::size_t>(cols) || beta.value().size() != static_cast<std::size_t>(cols)) {
    throw ContractError("layer_norm: channel mismatch");
  }
  Tensor<T> out(x.shape());
  Tensor<T> mean({rows});
  Tensor<T> rstd({rows});
  kernels::layer_norm_forward<T>(x.value().data(), rows, cols, gamma.value().data(), beta.value().data(), eps,
                                 out.data(), mean.data(), rstd.data());
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return make_result<T>(std::move(out), {x, gamma, beta}, [xn, gn, bn, mean, rstd, rows, cols](Node<T>& self) {
    Tensor<T> scratch_x, scratch_g, scratch_b;
    T* gx = grad_of(xn);
    T* gg = grad_of(gn);
    T* gb = grad_of(bn);
    if (!gx) {
      scratch_x = Tensor<T>(xn->value.shape());
      gx = scratch_x.data();
    }
    if (!gg) {
      scratch_g = Tensor<T>({cols});
      gg = scratch_g.data();
    }
    if (!gb) {
      scratch_b = Tensor<T>({cols});
      gb = scratch_b.data();
    }
    kernels::layer_norm_backward<T>(xn->value.data(), rows, cols, gn->value.data(), mean.data(), rstd.data(),
                                    self.grad.data(), gx, gg, gb);
  });
}

template <typename T>
Var<T> resize_bilinear(const Var<T>& x, int out_h, int out_w) {
  if (x.value().rank() != 3) throw ContractError("resize_bilinear: expects [H, W, C]");
  const int h = x.value().dim(0), w = x.value().dim(1), c = x.value().dim(2);
  if (h == out_h && w == out_w) return x;
  Tensor<T> out({out_h, out_w, c});
  kernels::resize_bilinear<T>(x.value().data(), h, w, c, out.data(), out_h, out_w);
  auto xn = x.node();
  return make_result<T>(std::move(out), {x}, [xn, h, w, c, out_h, out_w](Node<T>& self) {
    kernels::resize_bilinear_backward<T>(self.grad.data(), out_h, out_w, c, grad_of(xn), h, w);
  });
}

template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads,
                 std::span<const std::uint8_t> key_allowed, Tensor<T>* probs_out) {
  const int channels = q.value().cols();
  kernels::AttentionShape s{q.value().rows(), k.value().rows(), channels, heads};
  if (k.value().cols() != channels || v.value().cols() != channels || v.value().rows() != s.keys) {
    throw ContractError("attention: q/k/v shapes " + shape_string(q.shape()) + " " + shape_string(k.shape()) + " " +
                        shape_string(v.shape()));
  }
  if (heads <= 0 || channels % heads != 0) throw ContractError("attention: heads must divide channels");
  if (!key_allowed.empty() && key_allowed.size() != static_cast<std::size_t>(s.keys)) {
    throw ContractError("attention: key mask length mismatch");
  }
  if (s.keys == 0) throw ContractError("attention: no keys");
  const T sc = T(1) / std::sqrt(static_cast<T>(s.head_dim()));
  Tensor<T> probs({heads, s.queries, s.keys});
  Tensor<T> out({s.queries, channels});
  const std::uint8_t* mask = key_allowed.empty() ? nullptr : key_allowed.data();
  kernels::attention_forward<T>(s, sc, q.value().data(), k.value().data(), v.value().data(), mask, probs.data(),
                                out.data());
  if (probs_out) *probs_out = probs;
  auto qn = q.node(), kn = k.node(), vn = v.node();
  return make_result<T>(std::move(out), {q, k, v}, [qn, kn, vn, probs, s, sc](Node<T>& self) {
    Tensor<T> sq, sk, sv;
    T* gq = grad_of(qn);
    T* gk = grad_of(kn);
    T* gv = grad_of(vn);
    if (!gq) { sq = Tensor<T>(qn->value.shape()); gq = sq.data(); }
    if (!gk) { sk = Tensor<T>(kn->value.shape()); gk = sk.data(); }
    if (!gv) { sv = Tensor<T>(vn->value.shape()); gv = sv.data(); }
    kernels::attention_backward<T>(s, sc, qn->value.data(), kn->value.data(), vn->value.data(), probs.data(),
                                   self.grad.data(), gq, gk, gv);
  });
}

template <typename T>
Var<T> window_pool(const Var<T>& f, std::span<const std::array<int, 2>> centres, int radius) {
  if (f.value().rank() != 3) throw ContractError("window_pool: expects [H, W, C]");
  const int h = f.value().dim(0), w = f.value().dim(1), c = f.value().dim(2);
  const int n = static_cast<int>(centres.size());
  const T inv = T(1) / static_cast<T>((2 * radius + 1) * (2 * radius + 1));
  std::vector<std::array<int, 2>> pts(centres.begin(), centres.end());
  Tensor<T> out({n, c});
  const T* src = f.value().data();
  for (int i = 0; i < n; ++i) {
    T* o = out.data() + static_cast<std::size_t>(i) * c;
    for (int dy = -radius; dy <= radius; ++dy) {
      const int yy = std::clamp(pts[i][1] + dy, 0, h - 1);
      for (int dx = -radius; dx <= radius; ++dx) {
        const int xx = std::clamp(pts[i][0] + dx, 0, w - 1);
        const T* p = src + (static_cast<std::size_t>(yy) * w + xx) * c;
        for (int ch = 0; ch < c; ++ch) o[ch] += p[ch];
      }
    }
    for (int ch = 0; ch < c; ++ch) o[ch] *= inv;
  }
  auto fn = f.node();
  return make_result<T>(std::move(out), {f}, [fn, pts, radius, h, w, c, inv](Node<T>& self) {
    T* gf = grad_of(fn);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const T* g = self.grad.data() + i * c;
      for (int dy = -radius; dy <= radius; ++dy) {
        const int yy = std::clamp(pts[i][1] + dy, 0, h - 1);
        for (int dx = -radius; dx <= radius; ++dx) {
          const int xx = std::clamp(pts[i][0] + dx, 0, w - 1);
          T* p = gf + (static_cast<std::size_t>(yy) * w + xx) * c;
          for (int ch = 0; ch < c; ++ch) p[ch] += g[ch] * inv;
        }
      }
    }
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: nothing to concatenate");
  const int cols = parts.front().value().cols();
  int rows = 0;
  for (const auto& p : parts) {
    if (p.value().cols() != cols) throw ContractError("concat_rows: column mismatch");
    rows += p.value().rows();
  }
  Tensor<T> out({rows, cols});
  std::vector<NodePtr<T>> nodes;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), out.data() + offset);
    offset += p.value().size();
    nodes.push_back(p.node());
  }
  return make_result<T>(std::move(out), parts, [nodes](Node<T>& self) {
    std::size_t offset = 0;
    for (const auto& n : nodes) {
      const std::size_t len = n->value.size();
      if (T* g = grad_of(n)) {
        for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[offset + i];
      }
      offset += len;
    }
  });
}

template <typename T>
Var<T> slice_rows(const Var<T>& x, int begin, int end) {
  const int cols = x.value().cols();
  if (begin < 0 || end > x.value().rows() || begin > end) throw ContractError("slice_rows: range out of bounds");
  Tensor<T> out({end - begin, cols});
  std::copy(x.value().data() + static_cast<std::size_t>(begin) * cols, x.value().data() + static_cast<std::size_t>(end) * cols,
            out.data());
  auto xn = x.node();
  return make_result<T>(std::move(out), {x}, [xn, begin, cols](Node<T>& self) {
    T* g = grad_of(xn) + static_cast<std::size_t>(begin) * cols;
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  auto xn = x.node();
  return make_result<T>(std::move(out), {x}, [xn](Node<T>& self) {
    T* g = grad_of(xn);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Var<T> mean_of(const std::vector<Var<T>>& scalars) {
  if (scalars.empty()) throw ContractError("mean_of: empty");
  T total = 0;
  std::vector<NodePtr<T>> nodes;
  for (const auto& s : scalars) {
    if (s.value().size() != 1) throw ContractError("mean_of: expects scalars");
    total += s.value()[0];
    nodes.push_back(s.node());
  }
  const T inv = T(1) / static_cast<T>(scalars.size());
  return make_result<T>(Tensor<T>({1}, std::vector<T>{total * inv}), scalars, [nodes, inv](Node<T>& self) {
    for (const auto& n : nodes) {
      if (T* g = grad_of(n)) g[0] += self.grad[0] * inv;
    }
  });
}

template <typename T>
Var<T> bce_dice_loss(const Var<T>& prob, const Tensor<T>& gt, T w_ce, T w_dice, T smooth) {
  if (prob.value().size() != gt.size()) throw ContractError("bce_dice_loss: shape mismatch");
  constexpr T clamp_eps = T(1e-7);
  const std::size_t n = gt.size();
  const T* p = prob.value().data();
  const T* g = gt.data();
  T bce = 0, inter = 0, sum_p = 0, sum_g = 0;
  for (std::size_t i = 0; i < n; ++i) {
    // Only the active term of each pixel is evaluated so hard 0/1 matches give exactly zero.
    if (g[i] > T(0)) bce -= g[i] * std::log(std::max(p[i], clamp_eps));
    if (g[i] < T(1)) bce -= (T(1) - g[i]) * std::log(std::max(T(1) - p[i], clamp_eps));
    inter += p[i] * g[i];
    sum_p += p[i];
    sum_g += g[i];
  }
  bce /= static_cast<T>(n);
  const T denom = sum_p + sum_g + smooth;
  const T dice = T(1) - (T(2) * inter + smooth) / denom;
  const T total = w_ce * bce + w_dice * dice;
  auto pn = prob.node();
  return make_result<T>(Tensor<T>({1}, std::vector<T>{total}), {prob},
                        [pn, gt, w_ce, w_dice, inter, denom, smooth, n](Node<T>& self) {
                          T* gp = grad_of(pn);
                          const T up = self.grad[0];
                          const T* p = pn->value.data();
                          const T* g = gt.data();
                          const T numer = T(2) * inter + smooth;
                          const T inv_denom_sq = T(1) / (denom * denom);
                          const T inv_n = T(1) / static_cast<T>(n);
                          for (std::size_t i = 0; i < n; ++i) {
                            T d_bce = 0;
                            if (g[i] > T(0) && p[i] > clamp_eps) d_bce -= g[i] / p[i];
                            if (g[i] < T(1) && T(1) - p[i] > clamp_eps) d_bce += (T(1) - g[i]) / (T(1) - p[i]);
                            const T d_dice = -(T(2) * g[i] * denom - numer) * inv_denom_sq;
                            gp[i] += up * (w_ce * d_bce * inv_n + w_dice * d_dice);
                          }
                        });
}

#define VERSE_INSTANTIATE(T)                                                                               \
  template void backward<T>(const Var<T>&);                                                                \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                                    \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                                    \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                                    \
  template Var<T> scale<T>(const Var<T>&, T);                                                              \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                                  \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, int, int);                        \
  template Var<T> relu<T>(const Var<T>&);                                                                  \
  template Var<T> gelu<T>(const Var<T>&);                                                                  \
  template Var<T> sigmoid<T>(const Var<T>&);                                                               \
  template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);                           \
  template Var<T> resize_bilinear<T>(const Var<T>&, int, int);                                             \
  template Var<T> attention<T>(const Var<T>&, const Var<T>&, const Var<T>&, int,                           \
                               std::span<const std::uint8_t>, Tensor<T>*);                                 \
  template Var<T> window_pool<T>(const Var<T>&, std::span<const std::array<int, 2>>, int);                 \
  template Var<T> concat_rows<T>(const std::vector<Var<T>>&);                                              \
  template Var<T> slice_rows<T>(const Var<T>&, int, int);                                                  \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                                        \
  template Var<T> mean_of<T>(const std::vector<Var<T>>&);                                                  \
  template Var<T> bce_dice_loss<T>(const Var<T>&, const Tensor<T>&, T, T, T);

VERSE_INSTANTIATE(float)
VERSE_INSTANTIATE(double)
#undef VERSE_INSTANTIATE

}  // namespace verse::ad
