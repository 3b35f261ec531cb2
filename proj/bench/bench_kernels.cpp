#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "verse/kernels.hpp"

namespace k = verse::kernels;

namespace {

std::vector<float> noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

void set(benchmark::State& st) { k::set_backend(st.range(0) ? k::Backend::parallel : k::Backend::reference); }

void label(benchmark::State& st) { st.SetLabel(st.range(0) ? "parallel" : "reference"); }

void BM_Gemm(benchmark::State& st) {
  set(st);
  const int m = static_cast<int>(st.range(1)), n = 64, kk = 576;
  const auto a = noise(static_cast<std::size_t>(m) * kk, 1), b = noise(static_cast<std::size_t>(kk) * n, 2);
  std::vector<float> c(static_cast<std::size_t>(m) * n);
  for (auto _ : st) {
    k::gemm<float>(false, false, m, n, kk, 1.0f, a.data(), kk, b.data(), n, 0.0f, c.data(), n);
    benchmark::DoNotOptimize(c.data());
  }
  st.counters["GFLOPS"] = benchmark::Counter(2.0 * m * n * kk, benchmark::Counter::kIsIterationInvariantRate,
                                             benchmark::Counter::kIs1000);
  label(st);
}

void BM_Im2col(benchmark::State& st) {
  set(st);
  k::ConvGeometry g;
  g.in_h = g.in_w = static_cast<int>(st.range(1));
  g.in_c = 32;
  const auto in = noise(static_cast<std::size_t>(g.in_h) * g.in_w * g.in_c, 3);
  std::vector<float> cols(static_cast<std::size_t>(g.out_h()) * g.out_w() * g.patch());
  for (auto _ : st) {
    k::im2col<float>(g, in.data(), cols.data());
    benchmark::DoNotOptimize(cols.data());
  }
  label(st);
}

void BM_Attention(benchmark::State& st) {
  set(st);
  k::AttentionShape s;
  s.queries = static_cast<int>(st.range(1));
  s.keys = 1024;
  s.channels = 64;
  s.heads = 4;
  const auto q = noise(static_cast<std::size_t>(s.queries) * s.channels, 4);
  const auto kv = noise(static_cast<std::size_t>(s.keys) * s.channels, 5);
  std::vector<std::uint8_t> allowed(static_cast<std::size_t>(s.keys));
  for (std::size_t i = 0; i < allowed.size(); ++i) allowed[i] = i % 3 != 0;
  std::vector<float> probs(static_cast<std::size_t>(s.heads) * s.queries * s.keys);
  std::vector<float> out(q.size());
  for (auto _ : st) {
    k::attention_forward<float>(s, 0.25f, q.data(), kv.data(), kv.data(), allowed.data(), probs.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
  label(st);
}

void BM_LayerNorm(benchmark::State& st) {
  set(st);
  const int rows = static_cast<int>(st.range(1)), cols = 64;
  const auto x = noise(static_cast<std::size_t>(rows) * cols, 6);
  std::vector<float> gamma(cols, 1.0f), beta(cols, 0.0f), y(x.size()), mean(rows), rstd(rows);
  for (auto _ : st) {
    k::layer_norm_forward<float>(x.data(), rows, cols, gamma.data(), beta.data(), 1e-5f, y.data(), mean.data(),
                                 rstd.data());
    benchmark::DoNotOptimize(y.data());
  }
  label(st);
}

void BM_Resize(benchmark::State& st) {
  set(st);
  const int h = static_cast<int>(st.range(1)), c = 64;
  const auto in = noise(static_cast<std::size_t>(h) * h * c, 7);
  std::vector<float> out(static_cast<std::size_t>(4) * h * h * c);
  for (auto _ : st) {
    k::resize_bilinear<float>(in.data(), h, h, c, out.data(), 2 * h, 2 * h);
    benchmark::DoNotOptimize(out.data());
  }
  label(st);
}

void BM_Gelu(benchmark::State& st) {
  set(st);
  const std::size_t n = static_cast<std::size_t>(st.range(1));
  const auto x = noise(n, 8);
  std::vector<float> y(n), t(n);
  for (auto _ : st) {
    k::gelu_forward<float>(x.data(), n, y.data(), t.data());
    benchmark::DoNotOptimize(y.data());
  }
  st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * n));
  label(st);
}

}  // namespace

BENCHMARK(BM_Gemm)->ArgsProduct({{0, 1}, {256, 4096}})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Im2col)->ArgsProduct({{0, 1}, {32, 64}})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Attention)->ArgsProduct({{0, 1}, {24, 96}})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_LayerNorm)->ArgsProduct({{0, 1}, {1024, 16384}})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Resize)->ArgsProduct({{0, 1}, {16, 32}})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Gelu)->ArgsProduct({{0, 1}, {8192, 262144}})->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
