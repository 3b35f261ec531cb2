#include "verse/prompts.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <mutex>
#include <cmath>
#include <numbers>

#include "verse/errors.hpp"

namespace verse {

template <typename T>
void sinusoidal_encoding(double u, double v, int channels, T* out) {
  if (channels % 4 != 0) throw ContractError("positional encoding needs channels divisible by 4");
  const int k = channels / 4;
  for (int i = 0; i < k; ++i) {
    const double omega = std::numbers::pi * std::pow(2.0, k > 1 ? 6.0 * i / (k - 1) : 0.0);
    out[2 * i] = static_cast<T>(std::sin(omega * u));
    out[2 * i + 1] = static_cast<T>(std::cos(omega * u));
    out[channels / 2 + 2 * i] = static_cast<T>(std::sin(omega * v));
    out[channels / 2 + 2 * i + 1] = static_cast<T>(std::cos(omega * v));
  }
}

template <typename T>
Tensor<T> level_positional_encoding(int h, int w, int image_h, int image_w, int channels) {
  // Shared read-only tables; callers never write into the result.
  static std::mutex mu;
  static std::map<std::array<int, 5>, Tensor<T>> cache;
  const std::array<int, 5> key = {h, w, image_h, image_w, channels};
  std::lock_guard lock(mu);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  Tensor<T> pe({h * w, channels});
  const double sy = static_cast<double>(image_h) / h, sx = static_cast<double>(image_w) / w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      sinusoidal_encoding<T>((x + 0.5) * sx / image_w, (y + 0.5) * sy / image_h, channels,
                             pe.data() + static_cast<std::size_t>(y * w + x) * channels);
  cache.emplace(key, pe);
  return pe;
}

template <typename T>
ObjectQueryBank<T>::ObjectQueryBank(nn::ParamStore<T>& store, int num_targets, int per_target, int channels,
                                    nn::Rng& rng)
    : num_targets_(num_targets), per_target_(per_target) {
  if (num_targets < 1 || per_target < 1) throw ConfigError("object query bank needs at least one query per target");
  queries_ = store.add("prompts.object_queries", nn::normal_tensor<T>({num_targets * per_target, channels}, 1.0, rng));
}

template <typename T>
ad::Var<T> ObjectQueryBank<T>::group(int target_id) const {
  if (target_id < 0 || target_id >= num_targets_)
    throw NotFoundError("unknown target id " + std::to_string(target_id));
  return ad::slice_rows(queries_, target_id * per_target_, (target_id + 1) * per_target_);
}

template <typename T>
PointEncoder<T>::PointEncoder(nn::ParamStore<T>& store, int channels, nn::Rng& rng) : channels_(channels) {
  pos_embed_ = store.add("prompts.positive_embedding", nn::normal_tensor<T>({1, channels}, 1.0, rng));
  neg_embed_ = store.add("prompts.negative_embedding", nn::normal_tensor<T>({1, channels}, 1.0, rng));
}

namespace {

template <typename T>
ad::Var<T> encode_polarity(const std::vector<std::array<int, 2>>& points, const std::vector<std::uint8_t>& valid,
                           const ad::Var<T>& embed, int channels, int height, int width) {
  const int n1 = static_cast<int>(points.size());
  Tensor<T> pe({n1, channels});
  std::vector<ad::Var<T>> rows;
  for (int i = 0; i < n1; ++i) {
    if (!valid[i]) continue;
    const auto [x, y] = points[i];
    if (x < 0 || x >= width || y < 0 || y >= height) throw ContractError("click outside image bounds");
    sinusoidal_encoding<T>((x + 0.5) / width, (y + 0.5) / height, channels, pe.data() + static_cast<std::size_t>(i) * channels);
  }
  for (int i = 0; i < n1; ++i) rows.push_back(valid[i] ? embed : ad::constant(Tensor<T>({1, channels})));
  if (rows.empty()) return ad::constant(pe);
  return ad::add(ad::constant(pe), ad::concat_rows(rows));
}

}  // namespace

template <typename T>
SparsePositionalQueries<T> PointEncoder<T>::encode(const PaddedClicks& padded, int height, int width) const {
  SparsePositionalQueries<T> out;
  out.positive = encode_polarity(padded.positive_points, padded.positive_valid, pos_embed_, channels_, height, width);
  out.negative = encode_polarity(padded.negative_points, padded.negative_valid, neg_embed_, channels_, height, width);
  out.positive_valid = padded.positive_valid;
  out.negative_valid = padded.negative_valid;
  return out;
}

std::vector<std::array<int, 2>> downscale_points(std::span<const std::array<int, 2>> points, int scale) {
  std::vector<std::array<int, 2>> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back({p[0] / scale, p[1] / scale});
  return out;
}

template <typename T>
SemanticQueryExtractor<T>::SemanticQueryExtractor(nn::ParamStore<T>& store, int channels, int radius, nn::Rng& rng)
    : radius_(radius) {
  if (radius < 0) throw ConfigError("window radius must be non-negative");
  for (int i = 0; i < 3; ++i)
    mlp_[i] = nn::Mlp<T>(store, "prompts.semantic.s" + std::to_string(kPyramidScales[i]), channels, channels, channels,
                         rng);
}

template <typename T>
ad::Var<T> SemanticQueryExtractor<T>::project(const ad::Var<T>& level_map, int level,
                                              std::span<const std::array<int, 2>> points) const {
  const auto centres = downscale_points(points, kPyramidScales.at(level));
  return mlp_[level](ad::window_pool(level_map, std::span<const std::array<int, 2>>(centres), radius_));
}

template <typename T>
ad::Var<T> SemanticQueryExtractor<T>::query(const ad::Var<T>& level_map, int level, const Click& click) const {
  const std::array<int, 2> p{click.x, click.y};
  return project(level_map, level, std::span<const std::array<int, 2>>(&p, 1));
}

namespace {

template <typename T>
ad::Var<T> pad_rows(const ad::Var<T>& compact, const std::vector<std::uint8_t>& valid, int channels) {
  const int n1 = static_cast<int>(valid.size());
  if (!compact.defined()) return ad::constant(Tensor<T>({n1, channels}));
  return scatter_rows(ad::constant(Tensor<T>({n1, channels})), compact, valid);
}

template <typename T>
ad::Var<T> semantic_block(const SemanticQueryExtractor<T>& ex, const ad::Var<T>& map, int level,
                          const std::vector<std::array<int, 2>>& points, const std::vector<std::uint8_t>& valid) {
  std::vector<std::array<int, 2>> active;
  for (std::size_t i = 0; i < points.size(); ++i)
    if (valid[i]) active.push_back(points[i]);
  const int c = map.value().dim(2);
  if (active.empty()) return pad_rows<T>(ad::Var<T>(), valid, c);
  return pad_rows(ex.project(map, level, std::span<const std::array<int, 2>>(active)), valid, c);
}

}  // namespace

template <typename T>
SemanticFeatureQueries<T> SemanticQueryExtractor<T>::encode(const ad::Var<T>& level_map, int level,
                                                            const PaddedClicks& padded) const {
  SemanticFeatureQueries<T> out;
  out.positive = semantic_block(*this, level_map, level, padded.positive_points, padded.positive_valid);
  out.negative = semantic_block(*this, level_map, level, padded.negative_points, padded.negative_valid);
  out.positive_valid = padded.positive_valid;
  out.negative_valid = padded.negative_valid;
  return out;
}

template <typename T>
QuerySet<T> assemble(int mode, std::optional<int> target_id, const ObjectQueryBank<T>& bank,
                     const SparsePositionalQueries<T>& sparse, const SemanticFeatureQueries<T>* semantic) {
  if (mode < 1 || mode > 3) throw ContractError("mode must be 1, 2 or 3");
  if (mode != 3 && !target_id) throw ContractError("modes 1 and 2 require a target id");
  QuerySet<T> q;
  q.mode = mode;
  if (mode != 3) {
    q.target_id = target_id;
    q.object = bank.group(*target_id);
  }
  const int c = sparse.positive.value().dim(1);
  if (mode == 1) {
    q.positive_valid.assign(sparse.positive_valid.size(), 0);
    q.negative_valid.assign(sparse.negative_valid.size(), 0);
    q.positive = ad::constant(Tensor<T>({static_cast<int>(q.positive_valid.size()), c}));
    q.negative = ad::constant(Tensor<T>({static_cast<int>(q.negative_valid.size()), c}));
    return q;
  }
  q.positive_valid = sparse.positive_valid;
  q.negative_valid = sparse.negative_valid;
  q.positive = sparse.positive;
  q.negative = sparse.negative;
  if (semantic) {
    q.positive = ad::add(q.positive, semantic->positive);
    q.negative = ad::add(q.negative, semantic->negative);
  }
  return q;
}

template <typename T>
ad::Var<T> compact_rows(const ad::Var<T>& x, const std::vector<std::uint8_t>& valid) {
  if (static_cast<int>(valid.size()) != x.value().rows()) throw ContractError("compact_rows: flag count mismatch");
  std::vector<ad::Var<T>> parts;
  const int n = static_cast<int>(valid.size());
  int all = 0;
  for (int i = 0; i < n;) {
    if (!valid[i]) {
      ++i;
      continue;
    }
    int j = i;
    while (j < n && valid[j]) ++j;
    parts.push_back(ad::slice_rows(x, i, j));
    all += j - i;
    i = j;
  }
  if (parts.empty()) return {};
  if (all == n) return x;
  return parts.size() == 1 ? parts.front() : ad::concat_rows(parts);
}

template <typename T>
ad::Var<T> scatter_rows(const ad::Var<T>& base, const ad::Var<T>& updated, const std::vector<std::uint8_t>& valid) {
  const int n = static_cast<int>(valid.size());
  if (n != base.value().rows()) throw ContractError("scatter_rows: flag count mismatch");
  const int count = static_cast<int>(std::count(valid.begin(), valid.end(), 1));
  if (count != (updated.defined() ? updated.value().rows() : 0))
    throw ContractError("scatter_rows: updated row count mismatch");
  std::vector<ad::Var<T>> parts;
  int taken = 0;
  for (int i = 0; i < n;) {
    int j = i;
    while (j < n && static_cast<bool>(valid[j]) == static_cast<bool>(valid[i])) ++j;
    if (valid[i]) {
      parts.push_back(ad::slice_rows(updated, taken, taken + (j - i)));
      taken += j - i;
    } else {
      parts.push_back(ad::slice_rows(base, i, j));
    }
    i = j;
  }
  if (parts.size() == 1) return parts.front();
  return ad::concat_rows(parts);
}

#define VERSE_INSTANTIATE(T)                                                                                      \
  template void sinusoidal_encoding<T>(double, double, int, T*);                                                 \
  template Tensor<T> level_positional_encoding<T>(int, int, int, int, int);                                      \
  template class ObjectQueryBank<T>;                                                                             \
  template class PointEncoder<T>;                                                                                \
  template class SemanticQueryExtractor<T>;                                                                      \
  template QuerySet<T> assemble<T>(int, std::optional<int>, const ObjectQueryBank<T>&,                           \
                                   const SparsePositionalQueries<T>&, const SemanticFeatureQueries<T>*);         \
  template ad::Var<T> compact_rows<T>(const ad::Var<T>&, const std::vector<std::uint8_t>&);                      \
  template ad::Var<T> scatter_rows<T>(const ad::Var<T>&, const ad::Var<T>&, const std::vector<std::uint8_t>&);

VERSE_INSTANTIATE(float)
VERSE_INSTANTIATE(double)
#undef VERSE_INSTANTIATE

}  // namespace verse
