#pragma once

// Multi-scale query decoder with foreground/background masked cross-attention.

#include <vector>

#include <json.hpp>

#include "verse/prompts.hpp"

namespace verse {

struct DecoderConfig {
  int channels = 128;
  int heads = 4;
  int ffn_dim = 256;
  /// Round-robin repetitions over the three scales.
  int rounds = 2;
  /// Overrides 3 * rounds when positive.
  int num_layers = 0;
  bool use_semantic_queries = true;
  bool split_fb_branches = true;
  bool use_residual_connections = true;
  /// Hidden width of the mask head MLP; 0 selects a single linear projection.
  int mask_hidden = 128;

  int layer_count() const { return num_layers > 0 ? num_layers : 3 * rounds; }
  /// Scale factor visited by each layer: 8, 4, 2, 8, 4, 2, ...
  std::vector<int> scale_schedule() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const DecoderConfig& c);
void from_json(const nlohmann::json& j, DecoderConfig& c);

/// Per-pixel key permissions derived from a level mask. A pixel is open to the
/// foreground branch iff M >= 0.5 and to the background branch otherwise.
struct AttentionMasks {
  std::vector<std::uint8_t> foreground;
  std::vector<std::uint8_t> background;
};

template <typename T>
AttentionMasks attention_masks(const Tensor<T>& level_mask);

/// The same masks in additive form (0 or -infinity), one value per pixel.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> additive_attention_masks(const Tensor<T>& level_mask);

template <typename T>
struct CrossAttentionProbs {
  Tensor<T> object;    // [heads, M, P]
  Tensor<T> positive;  // [heads, k_pos, P]; holds all click rows when branches are merged
  Tensor<T> negative;
};

/// Object, positive and negative query branches attending to pixel tokens.
/// Keys and values are shared; only the query projections are per branch.
template <typename T>
class FbCrossAttention {
 public:
  struct Branches {
    ad::Var<T> object;
    ad::Var<T> positive;
    ad::Var<T> negative;
  };

  FbCrossAttention() = default;
  FbCrossAttention(nn::ParamStore<T>& store, const std::string& name, int channels, int heads, nn::Rng& rng);

  /// tokens [P, C], pe [P, C]; undefined branch inputs yield undefined outputs.
  Branches forward(const ad::Var<T>& tokens, const Tensor<T>& pe, const Branches& in, const AttentionMasks& masks,
                   bool split_branches, CrossAttentionProbs<T>* probs = nullptr) const;

  nn::LayerNorm<T> norm;
  nn::Linear<T> key;
  nn::Linear<T> value;
  nn::Linear<T> query_object;
  nn::Linear<T> query_positive;
  nn::Linear<T> query_negative;
  int heads = 1;
};

/// Pre-norm self-attention plus FFN over one branch's valid queries.
template <typename T>
class QuerySelfBlock {
 public:
  QuerySelfBlock() = default;
  QuerySelfBlock(nn::ParamStore<T>& store, const std::string& name, int channels, int heads, int ffn_dim,
                 nn::Rng& rng);

  ad::Var<T> forward(const ad::Var<T>& x) const;
  /// Runs on the valid rows of a padded block; invalid rows pass through.
  ad::Var<T> forward_padded(const ad::Var<T>& x, const std::vector<std::uint8_t>& valid) const;

 private:
  nn::LayerNorm<T> norm1_;
  nn::Linear<T> q_, k_, v_, out_;
  nn::LayerNorm<T> norm2_;
  nn::Mlp<T> ffn_;
  int heads_ = 1;
};

/// Pixels attend to the concatenated query set, then a pixel FFN.
template <typename T>
class PixelUpdate {
 public:
  PixelUpdate() = default;
  PixelUpdate(nn::ParamStore<T>& store, const std::string& name, int channels, int heads, int ffn_dim, nn::Rng& rng);

  /// queries may be undefined (no queries): only the FFN residual applies.
  ad::Var<T> forward(const ad::Var<T>& tokens, const Tensor<T>& pe, const ad::Var<T>& queries) const;

  nn::LayerNorm<T> norm_q;
  nn::Linear<T> q, k, v, out;
  nn::LayerNorm<T> norm_ffn;
  nn::Mlp<T> ffn;
  int heads = 1;
};

/// Per-pixel logit (a 1x1 projection, or a two-layer MLP when hidden > 0),
/// bilinearly resampled in logit space, then a sigmoid.
template <typename T>
class MaskHead {
 public:
  MaskHead() = default;
  MaskHead(nn::ParamStore<T>& store, const std::string& name, int channels, int hidden, nn::Rng& rng);

  /// features [h, w, C] -> probabilities [out_h, out_w].
  ad::Var<T> decode(const ad::Var<T>& features, int out_h, int out_w) const;

 private:
  nn::Linear<T> proj_;
  nn::Mlp<T> mlp_;
  bool use_mlp_ = false;
};

/// Bilinear resample to the next level's size followed by a zero-initialized 3x3 convolution.
template <typename T>
class ResidualRescale {
 public:
  ResidualRescale() = default;
  ResidualRescale(nn::ParamStore<T>& store, const std::string& name, int channels, nn::Rng& rng);

  ad::Var<T> forward(const ad::Var<T>& previous, int out_h, int out_w) const;

 private:
  nn::Conv2d<T> conv_;
};

template <typename T>
struct DecoderInputs {
  const FeaturePyramid<T>* pyramid = nullptr;
  const QuerySet<T>* queries = nullptr;
  const PaddedClicks* clicks = nullptr;
  /// Coarsest-scale semantic queries already folded into the click queries;
  /// null when semantic queries are disabled.
  const SemanticFeatureQueries<T>* semantic = nullptr;
  const SemanticQueryExtractor<T>* extractor = nullptr;
  int height = 0;
  int width = 0;
  /// Also produce every layer's full-resolution mask with gradients.
  bool layer_outputs = false;
};

template <typename T>
struct DecoderTrace {
  std::vector<int> scales;
  /// Mask driving each layer's attention, at that layer's level resolution.
  std::vector<Tensor<T>> level_masks;
  std::vector<AttentionMasks> attention;
  std::vector<CrossAttentionProbs<T>> cross_probs;
};

template <typename T>
struct DecoderOutput {
  ad::Var<T> mask;  // [H, W] probabilities
  std::vector<ad::Var<T>> layer_masks;
};

template <typename T>
class Decoder {
 public:
  Decoder() = default;
  Decoder(nn::ParamStore<T>& store, const DecoderConfig& cfg, nn::Rng& rng);

  DecoderOutput<T> forward(const DecoderInputs<T>& in, DecoderTrace<T>* trace = nullptr) const;

  const DecoderConfig& config() const { return cfg_; }
  const MaskHead<T>& mask_head() const { return mask_head_; }

 private:
  struct Layer {
    FbCrossAttention<T> cross;
    QuerySelfBlock<T> self_object;
    QuerySelfBlock<T> self_positive;
    QuerySelfBlock<T> self_negative;
    PixelUpdate<T> pixel;
    ResidualRescale<T> rescale;
    nn::Linear<T> semantic_carry;
  };

  DecoderConfig cfg_;
  std::vector<Layer> layers_;
  MaskHead<T> mask_head_;
};

}  // namespace verse
