#pragma once

// Parameter registry and the small layer building blocks shared by the model.

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "verse/autograd.hpp"

namespace verse::nn {

using Rng = std::mt19937_64;

/// Ordered, named collection of trainable leaves. Names are unique and stable
/// across scalar types, which is what checkpoints key on.
template <typename T>
class ParamStore {
 public:
  ad::Var<T> add(const std::string& name, Tensor<T> init) {
    if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
    index_[name] = entries_.size();
    entries_.emplace_back(name, ad::parameter(std::move(init)));
    return entries_.back().second;
  }

  const std::vector<std::pair<std::string, ad::Var<T>>>& entries() const { return entries_; }

  ad::Var<T> get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw NotFoundError("unknown parameter: " + name);
    return entries_[it->second].second;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  void zero_grad() {
    for (auto& [name, v] : entries_) v.zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : entries_) n += v.value().size();
    return n;
  }

 private:
  std::vector<std::pair<std::string, ad::Var<T>>> entries_;
  std::map<std::string, std::size_t> index_;
};

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

enum class Init { standard, he, zero };

template <typename T>
struct Linear {
  ad::Var<T> weight;  // [out, in]
  ad::Var<T> bias;    // [out], may be undefined

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, int in, int out, Rng& rng, bool with_bias = true,
         Init init = Init::standard) {
    Tensor<T> w({out, in});
    if (init == Init::standard) w = uniform_tensor<T>({out, in}, 1.0 / std::sqrt(in), rng);
    else if (init == Init::he) w = normal_tensor<T>({out, in}, std::sqrt(2.0 / in), rng);
    weight = store.add(name + ".weight", std::move(w));
    if (with_bias) bias = store.add(name + ".bias", Tensor<T>({out}));
  }

  ad::Var<T> operator()(const ad::Var<T>& x) const { return ad::linear(x, weight, bias); }
};

template <typename T>
struct Conv2d {
  ad::Var<T> weight;  // [out, k, k, in]
  ad::Var<T> bias;
  int stride = 1;
  int pad = 1;

  Conv2d() = default;
  Conv2d(ParamStore<T>& store, const std::string& name, int in, int out, int kernel, int stride_, Rng& rng,
         bool with_bias = true, Init init = Init::he)
      : stride(stride_), pad(kernel / 2) {
    const int fan_in = kernel * kernel * in;
    Tensor<T> w({out, kernel, kernel, in});
    if (init == Init::he) w = normal_tensor<T>({out, kernel, kernel, in}, std::sqrt(2.0 / fan_in), rng);
    else if (init == Init::standard) w = uniform_tensor<T>({out, kernel, kernel, in}, 1.0 / std::sqrt(fan_in), rng);
    weight = store.add(name + ".weight", std::move(w));
    if (with_bias) bias = store.add(name + ".bias", Tensor<T>({out}));
  }

  ad::Var<T> operator()(const ad::Var<T>& x) const { return ad::conv2d(x, weight, bias, stride, pad); }
};

template <typename T>
struct LayerNorm {
  ad::Var<T> gamma;
  ad::Var<T> beta;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& name, int channels) {
    gamma = store.add(name + ".gamma", Tensor<T>({channels}, T(1)));
    beta = store.add(name + ".beta", Tensor<T>({channels}));
  }

  ad::Var<T> operator()(const ad::Var<T>& x) const { return ad::layer_norm(x, gamma, beta); }
};

/// Two linear layers with a GELU in between.
template <typename T>
struct Mlp {
  Linear<T> fc1;
  Linear<T> fc2;

  Mlp() = default;
  Mlp(ParamStore<T>& store, const std::string& name, int in, int hidden, int out, Rng& rng,
      Init last = Init::standard)
      : fc1(store, name + ".fc1", in, hidden, rng), fc2(store, name + ".fc2", hidden, out, rng, true, last) {}

  ad::Var<T> operator()(const ad::Var<T>& x) const { return fc2(ad::gelu(fc1(x))); }
};

}  // namespace verse::nn
