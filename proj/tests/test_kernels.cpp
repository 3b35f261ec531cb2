#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "verse/autograd.hpp"
#include "verse/kernels.hpp"

using namespace verse;
namespace k = verse::kernels;

namespace {

template <typename T>
std::vector<T> random_vec(std::size_t n, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(d(rng));
  return v;
}

template <typename T>
double max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

}  // namespace

TEST(KernelParity, GemmAllTransposes) {
  std::mt19937_64 rng(1);
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      const int m = 37, n = 29, kk = 53;
      auto a = random_vec<float>(m * kk, rng);
      auto b = random_vec<float>(kk * n, rng);
      auto c0 = random_vec<float>(m * n, rng);
      auto c1 = c0;
      const int lda = ta ? m : kk, ldb = tb ? kk : n;
      k::reference::gemm<float>(ta, tb, m, n, kk, 0.7f, a.data(), lda, b.data(), ldb, 0.3f, c0.data(), n);
      k::parallel::gemm<float>(ta, tb, m, n, kk, 0.7f, a.data(), lda, b.data(), ldb, 0.3f, c1.data(), n);
      EXPECT_LT(max_abs_diff(c0, c1), 1e-4) << ta << tb;
    }
}

TEST(KernelParity, Im2colCol2im) {
  std::mt19937_64 rng(2);
  for (int stride : {1, 2}) {
    k::ConvGeometry g{9, 11, 5, 3, stride, 1};
    auto in = random_vec<double>(9 * 11 * 5, rng);
    std::vector<double> c0(static_cast<std::size_t>(g.out_h()) * g.out_w() * g.patch());
    auto c1 = c0;
    k::reference::im2col<double>(g, in.data(), c0.data());
    k::parallel::im2col<double>(g, in.data(), c1.data());
    EXPECT_EQ(c0, c1);
    std::vector<double> g0(in.size()), g1(in.size());
    k::reference::col2im<double>(g, c0.data(), g0.data());
    k::parallel::col2im<double>(g, c0.data(), g1.data());
    EXPECT_LT(max_abs_diff(g0, g1), 1e-12);
  }
}

TEST(KernelParity, ResizeForwardBackward) {
  std::mt19937_64 rng(3);
  const int h = 7, w = 5, c = 3, oh = 16, ow = 11;
  auto in = random_vec<double>(h * w * c, rng);
  std::vector<double> o0(oh * ow * c), o1(oh * ow * c);
  k::reference::resize_bilinear<double>(in.data(), h, w, c, o0.data(), oh, ow);
  k::parallel::resize_bilinear<double>(in.data(), h, w, c, o1.data(), oh, ow);
  EXPECT_LT(max_abs_diff(o0, o1), 1e-12);
  std::vector<double> g0(in.size()), g1(in.size());
  k::reference::resize_bilinear_backward<double>(o0.data(), oh, ow, c, g0.data(), h, w);
  k::parallel::resize_bilinear_backward<double>(o0.data(), oh, ow, c, g1.data(), h, w);
  EXPECT_LT(max_abs_diff(g0, g1), 1e-10);
}

TEST(KernelParity, AttentionForwardBackward) {
  std::mt19937_64 rng(4);
  k::AttentionShape s{6, 40, 16, 4};
  auto q = random_vec<double>(6 * 16, rng), kk = random_vec<double>(40 * 16, rng), v = random_vec<double>(40 * 16, rng);
  std::vector<std::uint8_t> allowed(40);
  for (auto& a : allowed) a = rng() % 3 != 0;
  const double scale = 1.0 / std::sqrt(4.0);
  std::vector<double> p0(4 * 6 * 40), p1(p0.size()), o0(6 * 16), o1(6 * 16);
  k::reference::attention_forward<double>(s, scale, q.data(), kk.data(), v.data(), allowed.data(), p0.data(), o0.data());
  k::parallel::attention_forward<double>(s, scale, q.data(), kk.data(), v.data(), allowed.data(), p1.data(), o1.data());
  EXPECT_LT(max_abs_diff(p0, p1), 1e-12);
  EXPECT_LT(max_abs_diff(o0, o1), 1e-12);
  auto go = random_vec<double>(o0.size(), rng);
  std::vector<double> gq0(q.size()), gk0(kk.size()), gv0(v.size()), gq1(q.size()), gk1(kk.size()), gv1(v.size());
  k::reference::attention_backward<double>(s, scale, q.data(), kk.data(), v.data(), p0.data(), go.data(), gq0.data(),
                                           gk0.data(), gv0.data());
  k::parallel::attention_backward<double>(s, scale, q.data(), kk.data(), v.data(), p0.data(), go.data(), gq1.data(),
                                          gk1.data(), gv1.data());
  EXPECT_LT(max_abs_diff(gq0, gq1), 1e-10);
  EXPECT_LT(max_abs_diff(gk0, gk1), 1e-10);
  EXPECT_LT(max_abs_diff(gv0, gv1), 1e-10);
}

TEST(KernelParity, LayerNorm) {
  std::mt19937_64 rng(5);
  const int rows = 13, cols = 24;
  auto x = random_vec<double>(rows * cols, rng), gamma = random_vec<double>(cols, rng),
       beta = random_vec<double>(cols, rng);
  std::vector<double> y0(x.size()), y1(x.size()), m0(rows), m1(rows), r0(rows), r1(rows);
  k::reference::layer_norm_forward<double>(x.data(), rows, cols, gamma.data(), beta.data(), 1e-5, y0.data(), m0.data(),
                                           r0.data());
  k::parallel::layer_norm_forward<double>(x.data(), rows, cols, gamma.data(), beta.data(), 1e-5, y1.data(), m1.data(),
                                          r1.data());
  EXPECT_LT(max_abs_diff(y0, y1), 1e-12);
  auto gy = random_vec<double>(x.size(), rng);
  std::vector<double> gx0(x.size()), gx1(x.size()), gg0(cols), gg1(cols), gb0(cols), gb1(cols);
  k::reference::layer_norm_backward<double>(x.data(), rows, cols, gamma.data(), m0.data(), r0.data(), gy.data(),
                                            gx0.data(), gg0.data(), gb0.data());
  k::parallel::layer_norm_backward<double>(x.data(), rows, cols, gamma.data(), m0.data(), r0.data(), gy.data(),
                                           gx1.data(), gg1.data(), gb1.data());
  EXPECT_LT(max_abs_diff(gx0, gx1), 1e-10);
  EXPECT_LT(max_abs_diff(gg0, gg1), 1e-10);
  EXPECT_LT(max_abs_diff(gb0, gb1), 1e-10);
}

TEST(KernelParity, Gelu) {
  std::mt19937_64 rng(6);
  for (const std::size_t n : {std::size_t{37}, std::size_t{50000}}) {
    auto x = random_vec<float>(n, rng);
    for (auto& v : x) v *= 6.0f;
    std::vector<float> y0(n), y1(n), t0(n), t1(n);
    k::reference::gelu_forward<float>(x.data(), n, y0.data(), t0.data());
    k::parallel::gelu_forward<float>(x.data(), n, y1.data(), t1.data());
    EXPECT_LT(max_abs_diff(y0, y1), 1e-5);
    EXPECT_LT(max_abs_diff(t0, t1), 1e-6);
    auto gy = random_vec<float>(n, rng);
    std::vector<float> g0(n, 0.5f), g1(n, 0.5f);
    k::reference::gelu_backward<float>(x.data(), t0.data(), gy.data(), n, g0.data());
    k::parallel::gelu_backward<float>(x.data(), t0.data(), gy.data(), n, g1.data());
    EXPECT_LT(max_abs_diff(g0, g1), 1e-5);
  }
}

TEST(KernelParity, BackendGuardRestores) {
  const k::Backend before = k::backend();
  {
    k::BackendGuard g(k::Backend::reference);
    EXPECT_EQ(k::backend(), k::Backend::reference);
  }
  EXPECT_EQ(k::backend(), before);
}

TEST(Attention, MaskedProbabilitiesAreExactlyZero) {
  std::mt19937_64 rng(6);
  k::AttentionShape s{3, 10, 8, 2};
  auto q = random_vec<float>(24, rng), kk = random_vec<float>(80, rng), v = random_vec<float>(80, rng);
  std::vector<std::uint8_t> allowed = {1, 0, 0, 1, 0, 1, 1, 0, 0, 0};
  std::vector<float> p(2 * 3 * 10), o(24);
  k::attention_forward<float>(s, 0.5f, q.data(), kk.data(), v.data(), allowed.data(), p.data(), o.data());
  for (int hq = 0; hq < 6; ++hq) {
    double sum = 0;
    for (int j = 0; j < 10; ++j) {
      if (!allowed[j]) {
        EXPECT_EQ(p[hq * 10 + j], 0.0f);
      }
      sum += p[hq * 10 + j];
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(Attention, FullyMaskedRowFallsBackToUnmasked) {
  std::mt19937_64 rng(7);
  k::AttentionShape s{2, 6, 4, 1};
  auto q = random_vec<double>(8, rng), kk = random_vec<double>(24, rng), v = random_vec<double>(24, rng);
  std::vector<std::uint8_t> none(6, 0);
  std::vector<double> p0(12), o0(8), p1(12), o1(8);
  k::attention_forward<double>(s, 0.5, q.data(), kk.data(), v.data(), none.data(), p0.data(), o0.data());
  k::attention_forward<double>(s, 0.5, q.data(), kk.data(), v.data(), nullptr, p1.data(), o1.data());
  EXPECT_TRUE(k::fully_masked(none.data(), 6));
  EXPECT_EQ(p0, p1);
  EXPECT_EQ(o0, o1);
}

// ---- autograd against central finite differences ----

namespace {

using VarD = ad::Var<double>;

Tensor<double> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(s));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.values()) v = d(rng);
  return t;
}

/// Weighted sum of f's output with fixed random weights, as a scalar.
double probe(const std::function<VarD(const std::vector<VarD>&)>& f, const std::vector<VarD>& inputs,
             const Tensor<double>& weights) {
  ad::NoGradGuard ng;
  const VarD out = f(inputs);
  double s = 0;
  for (std::size_t i = 0; i < out.value().size(); ++i) s += out.value()[i] * weights[i];
  return s;
}

void check_gradients(const std::function<VarD(const std::vector<VarD>&)>& f, std::vector<Tensor<double>> values,
                     double tol = 1e-6) {
  std::mt19937_64 rng(99);
  std::vector<VarD> inputs;
  for (auto& v : values) inputs.push_back(ad::parameter(v));
  const VarD out = f(inputs);
  const Tensor<double> weights = random_tensor(out.value().shape(), rng);
  VarD w = ad::constant(weights);
  // sum(out * w) as a [1, 1] linear reduction.
  const VarD prod = ad::reshape(ad::mul(out, w), {1, static_cast<int>(weights.size())});
  const VarD ones = ad::constant(Tensor<double>({1, static_cast<int>(weights.size())}, 1.0));
  const VarD loss = ad::linear(prod, ones, VarD());
  ad::backward(loss);
  const double eps = 1e-6;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    for (std::size_t i = 0; i < values[a].size(); ++i) {
      std::vector<VarD> plus, minus;
      for (std::size_t b = 0; b < values.size(); ++b) {
        Tensor<double> vp = values[b].clone(), vm = values[b].clone();
        if (b == a) {
          vp[i] += eps;
          vm[i] -= eps;
        }
        plus.push_back(ad::constant(vp));
        minus.push_back(ad::constant(vm));
      }
      const double num = (probe(f, plus, weights) - probe(f, minus, weights)) / (2 * eps);
      const double ana = inputs[a].grad().defined() ? inputs[a].grad()[i] : 0.0;
      EXPECT_NEAR(ana, num, tol * std::max(1.0, std::abs(num))) << "input " << a << " index " << i;
    }
  }
}

}  // namespace

TEST(AutogradFD, ElementwiseOps) {
  std::mt19937_64 rng(10);
  check_gradients([](const std::vector<VarD>& x) { return ad::mul(ad::add(x[0], x[1]), ad::sub(x[0], x[1])); },
                  {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)});
  check_gradients([](const std::vector<VarD>& x) { return ad::gelu(ad::scale(x[0], 1.7)); },
                  {random_tensor({2, 5}, rng)});
  check_gradients([](const std::vector<VarD>& x) { return ad::sigmoid(x[0]); }, {random_tensor({7}, rng, -3, 3)});
  check_gradients([](const std::vector<VarD>& x) { return ad::relu(x[0]); }, {random_tensor({9}, rng, 0.1, 1)});
}

TEST(AutogradFD, LinearAndLayerNorm) {
  std::mt19937_64 rng(11);
  check_gradients([](const std::vector<VarD>& x) { return ad::linear(x[0], x[1], x[2]); },
                  {random_tensor({4, 6}, rng), random_tensor({3, 6}, rng), random_tensor({3}, rng)});
  check_gradients([](const std::vector<VarD>& x) { return ad::layer_norm(x[0], x[1], x[2]); },
                  {random_tensor({3, 8}, rng), random_tensor({8}, rng), random_tensor({8}, rng)});
}

TEST(AutogradFD, Conv2d) {
  std::mt19937_64 rng(12);
  for (int stride : {1, 2})
    check_gradients([stride](const std::vector<VarD>& x) { return ad::conv2d(x[0], x[1], x[2], stride, 1); },
                    {random_tensor({6, 6, 2}, rng), random_tensor({3, 3, 3, 2}, rng), random_tensor({3}, rng)});
}

TEST(AutogradFD, ResizeBilinear) {
  std::mt19937_64 rng(13);
  check_gradients([](const std::vector<VarD>& x) { return ad::resize_bilinear(x[0], 7, 9); },
                  {random_tensor({3, 4, 2}, rng)});
  check_gradients([](const std::vector<VarD>& x) { return ad::resize_bilinear(x[0], 2, 3); },
                  {random_tensor({6, 7, 1}, rng)});
}

TEST(AutogradFD, MaskedAttention) {
  std::mt19937_64 rng(14);
  const std::vector<std::uint8_t> allowed = {1, 0, 1, 1, 0};
  check_gradients(
      [&](const std::vector<VarD>& x) { return ad::attention(x[0], x[1], x[2], 2, std::span(allowed)); },
      {random_tensor({3, 4}, rng), random_tensor({5, 4}, rng), random_tensor({5, 4}, rng)});
}

TEST(AutogradFD, RowOpsAndPooling) {
  std::mt19937_64 rng(15);
  check_gradients(
      [](const std::vector<VarD>& x) { return ad::slice_rows(ad::concat_rows<double>({x[0], x[1]}), 1, 4); },
      {random_tensor({2, 3}, rng), random_tensor({3, 3}, rng)});
  const std::vector<std::array<int, 2>> centres = {{0, 0}, {3, 2}, {4, 4}};
  check_gradients(
      [&](const std::vector<VarD>& x) { return ad::window_pool(x[0], std::span(centres), 1); },
      {random_tensor({5, 5, 2}, rng)});
}

TEST(AutogradFD, BceDiceLoss) {
  std::mt19937_64 rng(16);
  Tensor<double> gt({4, 4});
  for (std::size_t i = 0; i < gt.size(); ++i) gt[i] = (i % 3) == 0;
  check_gradients([&](const std::vector<VarD>& x) { return ad::bce_dice_loss(x[0], gt, 5.0, 5.0, 1.0); },
                  {random_tensor({4, 4}, rng, 0.05, 0.95)});
}

TEST(Autograd, NoGradBuildsNoGraph) {
  VarD a = ad::parameter(Tensor<double>({2}, 1.0));
  ad::NoGradGuard ng;
  VarD b = ad::mul(a, a);
  EXPECT_FALSE(b.requires_grad());
  EXPECT_TRUE(b.node()->parents.empty());
}

TEST(WindowPool, MatchesBruteForceWithClamping) {
  std::mt19937_64 rng(17);
  const int h = 6, w = 7, c = 3, r = 1;
  Tensor<float> f({h, w, c});
  for (auto& v : f.values()) v = std::uniform_real_distribution<float>(-1, 1)(rng);
  std::vector<std::array<int, 2>> centres;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) centres.push_back({x, y});
  const auto out = ad::window_pool(ad::constant(f), std::span(centres), r).value();
  for (std::size_t i = 0; i < centres.size(); ++i)
    for (int ch = 0; ch < c; ++ch) {
      double s = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const int yy = std::clamp(centres[i][1] + dy, 0, h - 1), xx = std::clamp(centres[i][0] + dx, 0, w - 1);
          s += f[(static_cast<std::size_t>(yy) * w + xx) * c + ch];
        }
      EXPECT_NEAR(out[i * c + ch], s / 9.0, 1e-6);
    }
}
