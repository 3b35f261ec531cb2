#pragma once

#include <optional>
#include <vector>

#include "verse/clicks.hpp"
#include "verse/encoders.hpp"

namespace verse {

/// Sinusoidal encoding of a normalized location (u = x / W, v = y / H), both in
/// [0, 1]. The first C/2 channels encode u and the rest v, as interleaved
/// (sin, cos) pairs over geometrically spaced frequencies. C must be a multiple of 4.
template <typename T>
void sinusoidal_encoding(double u, double v, int channels, T* out);

/// Encodings of the pixel centres of an [h, w] level of an H x W image, as [h * w, C].
template <typename T>
Tensor<T> level_positional_encoding(int h, int w, int image_h, int image_w, int channels);

template <typename T>
class ObjectQueryBank {
 public:
  ObjectQueryBank() = default;
  ObjectQueryBank(nn::ParamStore<T>& store, int num_targets, int per_target, int channels, nn::Rng& rng);

  /// [M, C] block for one target; throws NotFoundError for unknown ids.
  ad::Var<T> group(int target_id) const;
  int num_targets() const { return num_targets_; }
  int per_target() const { return per_target_; }

 private:
  ad::Var<T> queries_;  // [N * M, C]
  int num_targets_ = 0;
  int per_target_ = 0;
};

/// Per polarity [N1, C] blocks; invalid rows are exactly zero.
template <typename T>
struct ClickQueries {
  ad::Var<T> positive;
  ad::Var<T> negative;
  std::vector<std::uint8_t> positive_valid;
  std::vector<std::uint8_t> negative_valid;
};

template <typename T>
using SparsePositionalQueries = ClickQueries<T>;
template <typename T>
using SemanticFeatureQueries = ClickQueries<T>;

template <typename T>
class PointEncoder {
 public:
  PointEncoder() = default;
  PointEncoder(nn::ParamStore<T>& store, int channels, nn::Rng& rng);

  SparsePositionalQueries<T> encode(const PaddedClicks& padded, int height, int width) const;

  const ad::Var<T>& positive_embedding() const { return pos_embed_; }
  const ad::Var<T>& negative_embedding() const { return neg_embed_; }

 private:
  int channels_ = 0;
  ad::Var<T> pos_embed_;  // [1, C]
  ad::Var<T> neg_embed_;
};

/// Window-pooled level features at click locations, projected by a per-scale
/// two-layer MLP.
template <typename T>
class SemanticQueryExtractor {
 public:
  SemanticQueryExtractor() = default;
  SemanticQueryExtractor(nn::ParamStore<T>& store, int channels, int radius, nn::Rng& rng);

  /// Level index 0, 1, 2 for scales 8, 4, 2. points are original-image (x, y).
  ad::Var<T> project(const ad::Var<T>& level_map, int level, std::span<const std::array<int, 2>> points) const;

  /// One click's C-vector as [1, C].
  ad::Var<T> query(const ad::Var<T>& level_map, int level, const Click& click) const;

  /// Valid rows computed from the map, invalid rows zero.
  SemanticFeatureQueries<T> encode(const ad::Var<T>& level_map, int level, const PaddedClicks& padded) const;

  int radius() const { return radius_; }

 private:
  int radius_ = 1;
  std::array<nn::Mlp<T>, 3> mlp_;
};

/// (floor(x / s), floor(y / s)) for each point.
std::vector<std::array<int, 2>> downscale_points(std::span<const std::array<int, 2>> points, int scale);

template <typename T>
struct QuerySet {
  int mode = 1;
  std::optional<int> target_id;
  ad::Var<T> object;  // [M, C]; undefined in Mode-3
  ad::Var<T> positive;
  ad::Var<T> negative;
  std::vector<std::uint8_t> positive_valid;
  std::vector<std::uint8_t> negative_valid;

  bool has_object() const { return object.defined(); }
};

/// semantic may be null (semantic queries disabled), in which case the click
/// queries are exactly the sparse positional queries.
template <typename T>
QuerySet<T> assemble(int mode, std::optional<int> target_id, const ObjectQueryBank<T>& bank,
                     const SparsePositionalQueries<T>& sparse, const SemanticFeatureQueries<T>* semantic);

/// Rows of x whose flag is set, in order. Returns an undefined Var when none are.
template <typename T>
ad::Var<T> compact_rows(const ad::Var<T>& x, const std::vector<std::uint8_t>& valid);

/// Inverse of compact_rows: rows of base with the valid ones replaced by updated.
template <typename T>
ad::Var<T> scatter_rows(const ad::Var<T>& base, const ad::Var<T>& updated, const std::vector<std::uint8_t>& valid);

}  // namespace verse
