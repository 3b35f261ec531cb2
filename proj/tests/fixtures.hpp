#pragma once

#include <random>

#include "verse/model.hpp"

namespace verse::fixture {

/// Small but complete model: every block present, cheap to run.
inline ModelConfig tiny_config(int image_size = 16, int channels = 8, int layers = 1) {
  ModelConfig c;
  c.image_size = image_size;
  c.set_channels(channels);
  c.queries_per_target = 2;
  c.encoder.base_width = 4;
  c.encoder.prompt_widths = {4, 4, 8};
  c.decoder.heads = 2;
  c.decoder.ffn_dim = 2 * channels;
  c.decoder.mask_hidden = channels;
  c.decoder.num_layers = layers;
  return c;
}

/// Replaces every all-zero parameter tensor with small random values, so that
/// zero-initialized paths carry signal.
template <typename T>
void randomize_zero_params(VerseModel<T>& model, std::uint64_t seed, double stddev = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, stddev);
  for (const auto& [name, var] : model.params().entries()) {
    ad::Var<T> handle = var;
    Tensor<T>& t = handle.mutable_value();
    if (std::all_of(t.values().begin(), t.values().end(), [](T v) { return v == T(0); }))
      for (auto& v : t.values()) v = static_cast<T>(d(rng));
  }
}

inline Image random_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(0.0f, 1.0f);
  Image img({h, w});
  for (auto& v : img.values()) v = d(rng);
  return img;
}

}  // namespace verse::fixture
