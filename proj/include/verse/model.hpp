#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include <json.hpp>

#include "verse/archive.hpp"
#include "verse/decoder.hpp"
#include "verse/interactive.hpp"

namespace verse {

inline constexpr int kCheckpointVersion = 1;

struct ModelConfig {
  int image_size = 256;
  std::map<int, std::string> target_names = {{0, "LV"}, {1, "Myo"}, {2, "RV"}};
  int queries_per_target = 4;
  int n1 = kMaxClicksPerPolarity;
  int window_radius = 1;
  EncoderConfig encoder;
  DecoderConfig decoder;

  int num_targets() const { return static_cast<int>(target_names.size()); }
  int channels() const { return encoder.channels; }
  void set_channels(int c) {
    encoder.channels = c;
    decoder.channels = c;
  }
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

template <typename T>
struct Prediction {
  ad::Var<T> mask;  // [H, W]
  std::vector<ad::Var<T>> layer_masks;
};

template <typename T>
class VerseModel {
 public:
  VerseModel(const ModelConfig& cfg, std::uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore<T>& params() { return store_; }
  const nn::ParamStore<T>& params() const { return store_; }

  FeaturePyramid<T> encode_image(const Image& image) const;
  FeaturePyramid<T> encode_image(const ad::Var<T>& image) const;
  Prediction<T> predict(const FeaturePyramid<T>& image_features, const PromptRequest& request,
                        DecoderTrace<T>* trace = nullptr, bool layer_outputs = false) const;

  const ObjectQueryBank<T>& object_queries() const { return bank_; }
  const PointEncoder<T>& point_encoder() const { return points_; }
  const SemanticQueryExtractor<T>& semantic_extractor() const { return semantic_; }
  const PromptEncoder<T>& prompt_encoder() const { return prompt_encoder_; }
  const Decoder<T>& decoder() const { return decoder_; }

  Archive to_archive(const nlohmann::json& extra = nlohmann::json::object()) const;
  /// Copies parameters; throws VersionError when the archive's config or
  /// parameter set does not match this model.
  void load_archive(const Archive& archive);
  void save(const std::filesystem::path& path, const nlohmann::json& extra = nlohmann::json::object()) const;
  static std::unique_ptr<VerseModel> load(const std::filesystem::path& path);

 private:
  ModelConfig cfg_;
  nn::ParamStore<T> store_;
  ImageEncoder<T> image_encoder_;
  PromptEncoder<T> prompt_encoder_;
  ObjectQueryBank<T> bank_;
  PointEncoder<T> points_;
  SemanticQueryExtractor<T> semantic_;
  Decoder<T> decoder_;
};

/// Checkpoint config header without loading parameters.
ModelConfig read_checkpoint_config(const std::filesystem::path& path);

/// InteractiveModel over a float VerseModel, caching the image pyramid per image.
class VersePredictor : public InteractiveModel {
 public:
  explicit VersePredictor(std::shared_ptr<const VerseModel<float>> model);

  int num_targets() const override;
  std::shared_ptr<const ImageContext> prepare(const Image& image) const override;
  Tensor<float> predict(const ImageContext& context, const PromptRequest& request) const override;

  const VerseModel<float>& model() const { return *model_; }

 private:
  std::shared_ptr<const VerseModel<float>> model_;
};

}  // namespace verse
