#pragma once

#include <array>

#include <json.hpp>

#include "verse/nn.hpp"

namespace verse {

inline constexpr std::array<int, 3> kPyramidScales = {8, 4, 2};

/// Feature maps [H/s, W/s, C] for s = 8, 4, 2, in that order.
template <typename T>
struct FeaturePyramid {
  std::array<ad::Var<T>, 3> levels;

  int channels() const { return levels[0].value().dim(2); }
};

struct EncoderConfig {
  int channels = 128;
  int base_width = 16;
  int depth = 1;
  bool top_down = true;
  std::array<int, 3> prompt_widths = {16, 32, 64};

  void validate() const;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

/// Strided convolutional pyramid: a full-resolution stem and three stride-2
/// stages, each mapped to C channels by a 1x1 lateral projection, with an
/// optional coarse-to-fine top-down merge.
template <typename T>
class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(nn::ParamStore<T>& store, const EncoderConfig& cfg, nn::Rng& rng);

  /// image is [H, W] or [H, W, 1] with H, W divisible by 8.
  FeaturePyramid<T> encode(const ad::Var<T>& image) const;

 private:
  EncoderConfig cfg_;
  nn::Conv2d<T> stem_;
  std::array<nn::Conv2d<T>, 3> down_;
  std::array<std::vector<nn::Conv2d<T>>, 3> blocks_;
  std::array<nn::Conv2d<T>, 3> lateral_;
};

/// Three stride-2 bias-free conv stages over the [H, W, 3] dense prompt with
/// zero-initialized bias-free 1x1 projections to C per level, so an all-zero
/// prompt always maps to the zero pyramid.
template <typename T>
class PromptEncoder {
 public:
  PromptEncoder() = default;
  PromptEncoder(nn::ParamStore<T>& store, const EncoderConfig& cfg, nn::Rng& rng);

  FeaturePyramid<T> encode(const ad::Var<T>& prompt) const;

 private:
  std::array<nn::Conv2d<T>, 3> stages_;
  std::array<nn::Conv2d<T>, 3> project_;
};

template <typename T>
FeaturePyramid<T> fuse(const FeaturePyramid<T>& image, const FeaturePyramid<T>& prompt);

/// Throws ContractError unless levels have the [H/s, W/s, C] layout.
template <typename T>
void check_pyramid(const FeaturePyramid<T>& p, int height, int width, int channels);

}  // namespace verse
