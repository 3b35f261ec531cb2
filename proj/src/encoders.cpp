#include "verse/encoders.hpp"

#include "verse/errors.hpp"

namespace verse {

void EncoderConfig::validate() const {
  if (channels <= 0 || base_width <= 0 || depth < 0) throw ConfigError("encoder widths must be positive");
  for (int w : prompt_widths)
    if (w <= 0) throw ConfigError("prompt encoder widths must be positive");
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"channels", c.channels},
       {"base_width", c.base_width},
       {"depth", c.depth},
       {"top_down", c.top_down},
       {"prompt_widths", c.prompt_widths}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  c.channels = j.value("channels", c.channels);
  c.base_width = j.value("base_width", c.base_width);
  c.depth = j.value("depth", c.depth);
  c.top_down = j.value("top_down", c.top_down);
  c.prompt_widths = j.value("prompt_widths", c.prompt_widths);
}

template <typename T>
ImageEncoder<T>::ImageEncoder(nn::ParamStore<T>& store, const EncoderConfig& cfg, nn::Rng& rng) : cfg_(cfg) {
  cfg.validate();
  const int b = cfg.base_width;
  stem_ = nn::Conv2d<T>(store, "image_encoder.stem", 1, b, 3, 1, rng);
  int in = b;
  for (int s = 0; s < 3; ++s) {
    const int out = b << (s + 1);
    const std::string name = "image_encoder.stage" + std::to_string(s + 1);
    down_[s] = nn::Conv2d<T>(store, name + ".down", in, out, 3, 2, rng);
    for (int d = 0; d < cfg.depth; ++d)
      blocks_[s].emplace_back(store, name + ".conv" + std::to_string(d), out, out, 3, 1, rng);
    lateral_[s] = nn::Conv2d<T>(store, name + ".lateral", out, cfg.channels, 1, 1, rng, true, nn::Init::standard);
    in = out;
  }
}

template <typename T>
FeaturePyramid<T> ImageEncoder<T>::encode(const ad::Var<T>& image) const {
  const Shape& s = image.shape();
  if (!(s.size() == 2 || (s.size() == 3 && s[2] == 1))) throw ContractError("image must be [H, W] or [H, W, 1]");
  if (s[0] % 8 != 0 || s[1] % 8 != 0 || s[0] == 0 || s[1] == 0)
    throw ContractError("image height and width must be positive multiples of 8, got " + shape_string(s));
  ad::Var<T> x = s.size() == 2 ? ad::reshape(image, {s[0], s[1], 1}) : image;
  x = ad::relu(stem_(x));
  std::array<ad::Var<T>, 3> stage;
  for (int i = 0; i < 3; ++i) {
    x = ad::relu(down_[i](x));
    for (const auto& conv : blocks_[i]) x = ad::relu(conv(x));
    stage[i] = x;
  }
  // stage[0] is 1/2, stage[2] is 1/8.
  FeaturePyramid<T> out;
  out.levels[0] = lateral_[2](stage[2]);
  out.levels[1] = lateral_[1](stage[1]);
  out.levels[2] = lateral_[0](stage[0]);
  if (cfg_.top_down) {
    for (int i = 1; i < 3; ++i) {
      const auto& target = out.levels[i].shape();
      out.levels[i] = ad::add(out.levels[i], ad::resize_bilinear(out.levels[i - 1], target[0], target[1]));
    }
  }
  return out;
}

template <typename T>
PromptEncoder<T>::PromptEncoder(nn::ParamStore<T>& store, const EncoderConfig& cfg, nn::Rng& rng) {
  cfg.validate();
  int in = 3;
  for (int s = 0; s < 3; ++s) {
    const std::string name = "prompt_encoder.stage" + std::to_string(s + 1);
    stages_[s] = nn::Conv2d<T>(store, name, in, cfg.prompt_widths[s], 3, 2, rng, false);
    project_[s] = nn::Conv2d<T>(store, name + ".project", cfg.prompt_widths[s], cfg.channels, 1, 1, rng, false,
                                nn::Init::zero);
    in = cfg.prompt_widths[s];
  }
}

template <typename T>
FeaturePyramid<T> PromptEncoder<T>::encode(const ad::Var<T>& prompt) const {
  const Shape& s = prompt.shape();
  if (s.size() != 3 || s[2] != 3) throw ContractError("dense prompt must be [H, W, 3], got " + shape_string(s));
  if (s[0] % 8 != 0 || s[1] % 8 != 0) throw ContractError("prompt height and width must be multiples of 8");
  FeaturePyramid<T> out;
  ad::Var<T> x = prompt;
  for (int i = 0; i < 3; ++i) {
    x = ad::relu(stages_[i](x));
    out.levels[2 - i] = project_[i](x);
  }
  return out;
}

template <typename T>
FeaturePyramid<T> fuse(const FeaturePyramid<T>& image, const FeaturePyramid<T>& prompt) {
  FeaturePyramid<T> out;
  for (int i = 0; i < 3; ++i) {
    if (image.levels[i].shape() != prompt.levels[i].shape())
      throw ContractError("fuse: level " + std::to_string(i) + " shape mismatch " +
                          shape_string(image.levels[i].shape()) + " vs " + shape_string(prompt.levels[i].shape()));
    out.levels[i] = ad::add(image.levels[i], prompt.levels[i]);
  }
  return out;
}

template <typename T>
void check_pyramid(const FeaturePyramid<T>& p, int height, int width, int channels) {
  for (int i = 0; i < 3; ++i) {
    const Shape want = {height / kPyramidScales[i], width / kPyramidScales[i], channels};
    if (!p.levels[i].defined() || p.levels[i].shape() != want)
      throw ContractError("pyramid level " + std::to_string(i) + " must be " + shape_string(want));
  }
}

#define VERSE_INSTANTIATE(T)                                                                \
  template class ImageEncoder<T>;                                                           \
  template class PromptEncoder<T>;                                                          \
  template FeaturePyramid<T> fuse<T>(const FeaturePyramid<T>&, const FeaturePyramid<T>&); \
  template void check_pyramid<T>(const FeaturePyramid<T>&, int, int, int);

VERSE_INSTANTIATE(float)
VERSE_INSTANTIATE(double)
#undef VERSE_INSTANTIATE

}  // namespace verse
