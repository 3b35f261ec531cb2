#include "verse/decoder.hpp"

#include <limits>

#include "verse/errors.hpp"

namespace verse {

std::vector<int> DecoderConfig::scale_schedule() const {
  std::vector<int> s;
  for (int l = 0; l < layer_count(); ++l) s.push_back(kPyramidScales[l % 3]);
  return s;
}

void DecoderConfig::validate() const {
  if (channels <= 0 || heads <= 0 || channels % heads != 0) throw ConfigError("heads must divide channels");
  if (channels % 4 != 0) throw ConfigError("channels must be divisible by 4");
  if (ffn_dim <= 0) throw ConfigError("ffn_dim must be positive");
  if (mask_hidden < 0) throw ConfigError("mask_hidden must be non-negative");
  if (layer_count() < 1) throw ConfigError("decoder needs at least one layer");
}

void to_json(nlohmann::json& j, const DecoderConfig& c) {
  j = {{"channels", c.channels},
       {"heads", c.heads},
       {"ffn_dim", c.ffn_dim},
       {"rounds", c.rounds},
       {"num_layers", c.num_layers},
       {"use_semantic_queries", c.use_semantic_queries},
       {"split_fb_branches", c.split_fb_branches},
       {"use_residual_connections", c.use_residual_connections},
       {"mask_hidden", c.mask_hidden}};
}

void from_json(const nlohmann::json& j, DecoderConfig& c) {
  c.channels = j.value("channels", c.channels);
  c.heads = j.value("heads", c.heads);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.rounds = j.value("rounds", c.rounds);
  c.num_layers = j.value("num_layers", c.num_layers);
  c.use_semantic_queries = j.value("use_semantic_queries", c.use_semantic_queries);
  c.split_fb_branches = j.value("split_fb_branches", c.split_fb_branches);
  c.use_residual_connections = j.value("use_residual_connections", c.use_residual_connections);
  c.mask_hidden = j.value("mask_hidden", c.mask_hidden);
}

template <typename T>
AttentionMasks attention_masks(const Tensor<T>& level_mask) {
  AttentionMasks m;
  m.foreground.resize(level_mask.size());
  m.background.resize(level_mask.size());
  for (std::size_t i = 0; i < level_mask.size(); ++i) {
    const bool fg = level_mask[i] >= T(0.5);
    m.foreground[i] = fg;
    m.background[i] = !fg;
  }
  return m;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> additive_attention_masks(const Tensor<T>& level_mask) {
  const AttentionMasks m = attention_masks(level_mask);
  constexpr T ninf = -std::numeric_limits<T>::infinity();
  Tensor<T> fg(level_mask.shape()), bg(level_mask.shape());
  for (std::size_t i = 0; i < level_mask.size(); ++i) {
    fg[i] = m.foreground[i] ? T(0) : ninf;
    bg[i] = m.background[i] ? T(0) : ninf;
  }
  return {fg, bg};
}

template <typename T>
FbCrossAttention<T>::FbCrossAttention(nn::ParamStore<T>& store, const std::string& name, int channels, int heads_,
                                      nn::Rng& rng)
    : norm(store, name + ".norm", channels),
      key(store, name + ".key", channels, channels, rng),
      value(store, name + ".value", channels, channels, rng),
      query_object(store, name + ".query_object", channels, channels, rng),
      query_positive(store, name + ".query_positive", channels, channels, rng),
      query_negative(store, name + ".query_negative", channels, channels, rng),
      heads(heads_) {}

template <typename T>
typename FbCrossAttention<T>::Branches FbCrossAttention<T>::forward(const ad::Var<T>& tokens, const Tensor<T>& pe,
                                                                    const Branches& in, const AttentionMasks& masks,
                                                                    bool split_branches,
                                                                    CrossAttentionProbs<T>* probs) const {
  const ad::Var<T> normed = norm(tokens);
  const ad::Var<T> k = key(ad::add(normed, ad::constant(pe)));
  const ad::Var<T> v = value(normed);
  auto branch = [&](const ad::Var<T>& x, const nn::Linear<T>& q, const std::vector<std::uint8_t>& allowed,
                    Tensor<T>* p) {
    return ad::add(x, ad::attention(q(x), k, v, heads, std::span<const std::uint8_t>(allowed), p));
  };
  Branches out;
  if (in.object.defined())
    out.object = branch(in.object, query_object, masks.foreground, probs ? &probs->object : nullptr);
  if (split_branches) {
    if (in.positive.defined())
      out.positive = branch(in.positive, query_positive, masks.foreground, probs ? &probs->positive : nullptr);
    if (in.negative.defined())
      out.negative = branch(in.negative, query_negative, masks.background, probs ? &probs->negative : nullptr);
    return out;
  }
  std::vector<ad::Var<T>> clicks;
  if (in.positive.defined()) clicks.push_back(in.positive);
  if (in.negative.defined()) clicks.push_back(in.negative);
  if (clicks.empty()) return out;
  const ad::Var<T> merged = branch(clicks.size() == 1 ? clicks[0] : ad::concat_rows(clicks), query_positive,
                                   masks.foreground, probs ? &probs->positive : nullptr);
  const int kp = in.positive.defined() ? in.positive.value().rows() : 0;
  if (in.positive.defined()) out.positive = ad::slice_rows(merged, 0, kp);
  if (in.negative.defined()) out.negative = ad::slice_rows(merged, kp, merged.value().rows());
  return out;
}

template <typename T>
QuerySelfBlock<T>::QuerySelfBlock(nn::ParamStore<T>& store, const std::string& name, int channels, int heads,
                                  int ffn_dim, nn::Rng& rng)
    : norm1_(store, name + ".norm1", channels),
      q_(store, name + ".q", channels, channels, rng),
      k_(store, name + ".k", channels, channels, rng),
      v_(store, name + ".v", channels, channels, rng),
      out_(store, name + ".out", channels, channels, rng),
      norm2_(store, name + ".norm2", channels),
      ffn_(store, name + ".ffn", channels, ffn_dim, channels, rng),
      heads_(heads) {}

template <typename T>
ad::Var<T> QuerySelfBlock<T>::forward(const ad::Var<T>& x) const {
  const ad::Var<T> n = norm1_(x);
  ad::Var<T> y = ad::add(x, out_(ad::attention(q_(n), k_(n), v_(n), heads_)));
  return ad::add(y, ffn_(norm2_(y)));
}

template <typename T>
ad::Var<T> QuerySelfBlock<T>::forward_padded(const ad::Var<T>& x, const std::vector<std::uint8_t>& valid) const {
  const ad::Var<T> compact = compact_rows(x, valid);
  if (!compact.defined()) return x;
  return scatter_rows(x, forward(compact), valid);
}

template <typename T>
PixelUpdate<T>::PixelUpdate(nn::ParamStore<T>& store, const std::string& name, int channels, int heads_,
                            int ffn_dim, nn::Rng& rng)
    : norm_q(store, name + ".norm_q", channels),
      q(store, name + ".q", channels, channels, rng),
      k(store, name + ".k", channels, channels, rng),
      v(store, name + ".v", channels, channels, rng),
      out(store, name + ".out", channels, channels, rng, true, nn::Init::zero),
      norm_ffn(store, name + ".norm_ffn", channels),
      ffn(store, name + ".ffn", channels, ffn_dim, channels, rng),
      heads(heads_) {}

template <typename T>
ad::Var<T> PixelUpdate<T>::forward(const ad::Var<T>& tokens, const Tensor<T>& pe, const ad::Var<T>& queries) const {
  ad::Var<T> x = tokens;
  if (queries.defined()) {
    const ad::Var<T> qry = q(ad::add(norm_q(tokens), ad::constant(pe)));
    x = ad::add(x, out(ad::attention(qry, k(queries), v(queries), heads)));
  }
  return ad::add(x, ffn(norm_ffn(x)));
}

template <typename T>
MaskHead<T>::MaskHead(nn::ParamStore<T>& store, const std::string& name, int channels, int hidden, nn::Rng& rng)
    : use_mlp_(hidden > 0) {
  if (use_mlp_)
    mlp_ = nn::Mlp<T>(store, name, channels, hidden, 1, rng);
  else
    proj_ = nn::Linear<T>(store, name, channels, 1, rng);
}

template <typename T>
ad::Var<T> MaskHead<T>::decode(const ad::Var<T>& features, int out_h, int out_w) const {
  const int h = features.value().dim(0), w = features.value().dim(1), c = features.value().dim(2);
  const ad::Var<T> rows = ad::reshape(features, {h * w, c});
  ad::Var<T> logit = ad::reshape(use_mlp_ ? mlp_(rows) : proj_(rows), {h, w, 1});
  if (h != out_h || w != out_w) logit = ad::resize_bilinear(logit, out_h, out_w);
  return ad::sigmoid(ad::reshape(logit, {out_h, out_w}));
}

template <typename T>
ResidualRescale<T>::ResidualRescale(nn::ParamStore<T>& store, const std::string& name, int channels, nn::Rng& rng)
    : conv_(store, name, channels, channels, 3, 1, rng, true, nn::Init::zero) {}

template <typename T>
ad::Var<T> ResidualRescale<T>::forward(const ad::Var<T>& previous, int out_h, int out_w) const {
  const ad::Var<T> r = previous.value().dim(0) == out_h && previous.value().dim(1) == out_w
                           ? previous
                           : ad::resize_bilinear(previous, out_h, out_w);
  return conv_(r);
}

template <typename T>
Decoder<T>::Decoder(nn::ParamStore<T>& store, const DecoderConfig& cfg, nn::Rng& rng) : cfg_(cfg) {
  cfg.validate();
  const int c = cfg.channels;
  for (int l = 0; l < cfg.layer_count(); ++l) {
    const std::string name = "decoder.layer" + std::to_string(l);
    Layer layer;
    layer.cross = FbCrossAttention<T>(store, name + ".cross", c, cfg.heads, rng);
    layer.self_object = QuerySelfBlock<T>(store, name + ".self_object", c, cfg.heads, cfg.ffn_dim, rng);
    layer.self_positive = QuerySelfBlock<T>(store, name + ".self_positive", c, cfg.heads, cfg.ffn_dim, rng);
    if (cfg.split_fb_branches)
      layer.self_negative = QuerySelfBlock<T>(store, name + ".self_negative", c, cfg.heads, cfg.ffn_dim, rng);
    layer.pixel = PixelUpdate<T>(store, name + ".pixel", c, cfg.heads, cfg.ffn_dim, rng);
    if (l > 0 && cfg.use_residual_connections) layer.rescale = ResidualRescale<T>(store, name + ".rescale", c, rng);
    if (l > 0 && cfg.use_semantic_queries)
      layer.semantic_carry = nn::Linear<T>(store, name + ".semantic_carry", c, c, rng, false, nn::Init::zero);
    layers_.push_back(std::move(layer));
  }
  mask_head_ = MaskHead<T>(store, "decoder.mask_head", c, cfg.mask_hidden, rng);
}

namespace {

std::vector<std::array<int, 2>> valid_points(const std::vector<std::array<int, 2>>& pts,
                                             const std::vector<std::uint8_t>& valid) {
  std::vector<std::array<int, 2>> out;
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (valid[i]) out.push_back(pts[i]);
  return out;
}

}  // namespace

template <typename T>
DecoderOutput<T> Decoder<T>::forward(const DecoderInputs<T>& in, DecoderTrace<T>* trace) const {
  if (!in.pyramid || !in.queries) throw ContractError("decoder needs a pyramid and a query set");
  const int H = in.height, W = in.width, C = cfg_.channels;
  check_pyramid(*in.pyramid, H, W, C);
  const QuerySet<T>& q = *in.queries;
  const bool semantic_on = cfg_.use_semantic_queries && in.semantic && in.extractor && in.clicks;

  ad::Var<T> xo = q.object;
  ad::Var<T> xp = compact_rows(q.positive, q.positive_valid);
  ad::Var<T> xn = compact_rows(q.negative, q.negative_valid);
  std::vector<std::array<int, 2>> pos_pts, neg_pts;
  ad::Var<T> fp, fn;
  if (semantic_on) {
    pos_pts = valid_points(in.clicks->positive_points, q.positive_valid);
    neg_pts = valid_points(in.clicks->negative_points, q.negative_valid);
    fp = compact_rows(in.semantic->positive, q.positive_valid);
    fn = compact_rows(in.semantic->negative, q.negative_valid);
  }

  std::array<ad::Var<T>, 3> current = in.pyramid->levels;
  ad::Var<T> prev;
  DecoderOutput<T> result;
  const std::vector<int> schedule = cfg_.scale_schedule();
  for (int l = 0; l < static_cast<int>(layers_.size()); ++l) {
    const Layer& layer = layers_[l];
    const int li = l % 3;
    const int h = H / schedule[l], w = W / schedule[l];
    ad::Var<T> f = current[li];
    if (l > 0 && cfg_.use_residual_connections) f = ad::add(f, layer.rescale.forward(prev, h, w));

    Tensor<T> level_mask;
    {
      ad::NoGradGuard ng;
      level_mask = mask_head_.decode(l == 0 ? f : prev, h, w).value();
    }
    const AttentionMasks masks = attention_masks(level_mask);

    if (semantic_on && l > 0) {
      auto refresh = [&](ad::Var<T>& x, ad::Var<T>& carried, const std::vector<std::array<int, 2>>& pts) {
        if (pts.empty()) return;
        ad::Var<T> fresh = in.extractor->project(f, li, std::span<const std::array<int, 2>>(pts));
        fresh = ad::add(fresh, layer.semantic_carry(carried));
        x = ad::add(x, fresh);
        carried = fresh;
      };
      refresh(xp, fp, pos_pts);
      refresh(xn, fn, neg_pts);
    }

    const ad::Var<T> tokens = ad::reshape(f, {h * w, C});
    const Tensor<T> pe = level_positional_encoding<T>(h, w, H, W, C);
    CrossAttentionProbs<T> probs;
    typename FbCrossAttention<T>::Branches br =
        layer.cross.forward(tokens, pe, {xo, xp, xn}, masks, cfg_.split_fb_branches, trace ? &probs : nullptr);
    xo = br.object;
    if (xo.defined()) xo = layer.self_object.forward(xo);
    if (cfg_.split_fb_branches) {
      if (br.positive.defined()) xp = layer.self_positive.forward(br.positive);
      if (br.negative.defined()) xn = layer.self_negative.forward(br.negative);
    } else if (br.positive.defined() || br.negative.defined()) {
      std::vector<ad::Var<T>> parts;
      if (br.positive.defined()) parts.push_back(br.positive);
      if (br.negative.defined()) parts.push_back(br.negative);
      const ad::Var<T> merged = layer.self_positive.forward(parts.size() == 1 ? parts[0] : ad::concat_rows(parts));
      const int kp = br.positive.defined() ? br.positive.value().rows() : 0;
      if (br.positive.defined()) xp = ad::slice_rows(merged, 0, kp);
      if (br.negative.defined()) xn = ad::slice_rows(merged, kp, merged.value().rows());
    }

    std::vector<ad::Var<T>> all;
    for (const auto* part : {&xo, &xp, &xn})
      if (part->defined()) all.push_back(*part);
    const ad::Var<T> queries = all.empty() ? ad::Var<T>() : all.size() == 1 ? all[0] : ad::concat_rows(all);
    const ad::Var<T> updated = layer.pixel.forward(tokens, pe, queries);
    prev = ad::reshape(updated, {h, w, C});
    current[li] = prev;

    if (in.layer_outputs) result.layer_masks.push_back(mask_head_.decode(prev, H, W));
    if (trace) {
      trace->scales.push_back(schedule[l]);
      trace->level_masks.push_back(level_mask);
      trace->attention.push_back(masks);
      trace->cross_probs.push_back(std::move(probs));
    }
  }
  result.mask = in.layer_outputs ? result.layer_masks.back() : mask_head_.decode(prev, H, W);
  return result;
}

#define VERSE_INSTANTIATE(T)                                                              \
  template AttentionMasks attention_masks<T>(const Tensor<T>&);                           \
  template std::pair<Tensor<T>, Tensor<T>> additive_attention_masks<T>(const Tensor<T>&); \
  template class FbCrossAttention<T>;                                                     \
  template class QuerySelfBlock<T>;                                                       \
  template class PixelUpdate<T>;                                                          \
  template class MaskHead<T>;                                                             \
  template class ResidualRescale<T>;                                                      \
  template class Decoder<T>;

VERSE_INSTANTIATE(float)
VERSE_INSTANTIATE(double)
#undef VERSE_INSTANTIATE

}  // namespace verse
