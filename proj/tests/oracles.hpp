#pragma once

// Brute-force reference implementations used as test oracles.

#include <algorithm>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "verse/clicks.hpp"
#include "verse/interactive.hpp"

namespace verse::oracle {

/// Label = smallest row-major index in the 4-connected component, -1 outside.
inline std::vector<int> min_index_labels(const std::vector<std::uint8_t>& on, int h, int w) {
  std::vector<int> label(on.size(), -1);
  for (std::size_t i = 0; i < on.size(); ++i)
    if (on[i]) label[i] = static_cast<int>(i);
  bool changed = true;
  while (changed) {
    changed = false;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int i = y * w + x;
        if (label[i] < 0) continue;
        const int nb[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
        for (const auto& p : nb) {
          if (p[0] < 0 || p[0] >= w || p[1] < 0 || p[1] >= h) continue;
          const int j = p[1] * w + p[0];
          if (label[j] >= 0 && label[j] < label[i]) {
            label[i] = label[j];
            changed = true;
          }
        }
      }
  }
  return label;
}

/// Squared distance from (x, y) to the nearest pixel not in region, where every
/// pixel outside the grid counts as not in region.
inline long long brute_sq_distance(const std::vector<std::uint8_t>& region, int h, int w, int x, int y) {
  long long best = std::numeric_limits<long long>::max();
  for (int yy = -1; yy <= h; ++yy)
    for (int xx = -1; xx <= w; ++xx) {
      const bool outside = xx < 0 || yy < 0 || xx >= w || yy >= h;
      if (!outside && region[static_cast<std::size_t>(yy) * w + xx]) continue;
      const long long dx = xx - x, dy = yy - y;
      best = std::min(best, dx * dx + dy * dy);
    }
  return best;
}

inline std::optional<Click> next_click(const Mask& pred, const Mask& gt) {
  const int h = gt.dim(0), w = gt.dim(1);
  std::vector<std::uint8_t> err(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) err[i] = (pred[i] != 0) != (gt[i] != 0);
  const std::vector<int> label = min_index_labels(err, h, w);
  std::vector<int> count(gt.size(), 0);
  for (int l : label)
    if (l >= 0) ++count[l];
  int best = -1;
  for (std::size_t l = 0; l < count.size(); ++l)
    if (count[l] > 0 && (best < 0 || count[l] > count[best])) best = static_cast<int>(l);
  if (best < 0) return std::nullopt;
  std::vector<std::uint8_t> region(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) region[i] = label[i] == best;
  long long top = -1;
  int arg = -1;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int i = y * w + x;
      if (!region[i]) continue;
      const long long d = brute_sq_distance(region, h, w, x, y);
      if (d > top) {
        top = d;
        arg = i;
      }
    }
  Click c;
  c.x = arg % w;
  c.y = arg / w;
  c.polarity = gt[arg] ? Polarity::positive : Polarity::negative;
  return c;
}

inline double dice(const Mask& a, const Mask& b) {
  double inter = 0, sa = 0, sb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]) ? 1 : 0;
    sa += a[i] ? 1 : 0;
    sb += b[i] ? 1 : 0;
  }
  return sa + sb == 0 ? 1.0 : 2 * inter / (sa + sb);
}

/// Random blob-like mask: union of a few random axis-aligned rectangles and discs.
inline Mask random_mask(int h, int w, std::mt19937_64& rng, double density = 0.5) {
  Mask m({h, w});
  std::uniform_int_distribution<int> shapes(0, 4);
  const int n = shapes(rng);
  for (int s = 0; s < n; ++s) {
    const int cx = std::uniform_int_distribution<int>(0, w - 1)(rng);
    const int cy = std::uniform_int_distribution<int>(0, h - 1)(rng);
    const int r = std::uniform_int_distribution<int>(1, std::max(1, static_cast<int>(density * std::min(h, w) / 2)))(rng);
    const bool disc = rng() & 1;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int dx = x - cx, dy = y - cy;
        const bool in = disc ? dx * dx + dy * dy <= r * r : std::abs(dx) <= r && std::abs(dy) <= r / 2 + 1;
        if (in) m[static_cast<std::size_t>(y) * w + x] = 1;
      }
  }
  // Sprinkle isolated pixels so small components and ties appear.
  const int specks = std::uniform_int_distribution<int>(0, 6)(rng);
  for (int i = 0; i < specks; ++i) m[std::uniform_int_distribution<std::size_t>(0, m.size() - 1)(rng)] ^= 1;
  return m;
}

class StubContext : public ImageContext {
 public:
  StubContext(int h, int w) : h_(h), w_(w) {}
  int height() const override { return h_; }
  int width() const override { return w_; }

 private:
  int h_, w_;
};

/// Returns the ground truth once a fixed number of distinct clicks has been
/// placed. Before that only the clicked pixels are painted, so successive
/// simulated clicks land on different pixels. Mode-1 yields the empty mask.
class ThresholdStub : public InteractiveModel {
 public:
  ThresholdStub(Mask gt, int clicks_needed) : gt_(std::move(gt)), needed_(clicks_needed) {}
  int num_targets() const override { return 3; }
  std::shared_ptr<const ImageContext> prepare(const Image& image) const override {
    return std::make_shared<StubContext>(image.dim(0), image.dim(1));
  }
  Tensor<float> predict(const ImageContext& ctx, const PromptRequest& req) const override {
    Tensor<float> out({ctx.height(), ctx.width()});
    if (req.mode == 1) return out;
    if (static_cast<int>(req.clicks.size()) >= needed_) {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = gt_[i] ? 1.0f : 0.0f;
      return out;
    }
    for (const Click& c : req.clicks.ordered())
      out[static_cast<std::size_t>(c.y) * ctx.width() + c.x] = c.polarity == Polarity::positive ? 1.0f : 0.0f;
    return out;
  }

 private:
  Mask gt_;
  int needed_;
};

/// Mode-1 returns the ground truth of the requested target; clicks change nothing.
class PerfectAutoStub : public InteractiveModel {
 public:
  explicit PerfectAutoStub(std::map<int, Mask> gts) : gts_(std::move(gts)) {}
  int num_targets() const override { return 3; }
  std::shared_ptr<const ImageContext> prepare(const Image& image) const override {
    return std::make_shared<StubContext>(image.dim(0), image.dim(1));
  }
  Tensor<float> predict(const ImageContext& ctx, const PromptRequest& req) const override {
    if (!req.target_id) return req.prev_mask.defined() ? req.prev_mask.clone() : Tensor<float>({ctx.height(), ctx.width()});
    return gts_.at(*req.target_id).cast<float>();
  }

 private:
  std::map<int, Mask> gts_;
};

/// Positive clicks paint discs, negative clicks erase discs, on top of the previous mask.
class PaintStub : public InteractiveModel {
 public:
  explicit PaintStub(int radius = 3, int targets = 3) : radius_(radius), targets_(targets) {}
  int num_targets() const override { return targets_; }
  std::shared_ptr<const ImageContext> prepare(const Image& image) const override {
    return std::make_shared<StubContext>(image.dim(0), image.dim(1));
  }
  Tensor<float> predict(const ImageContext& ctx, const PromptRequest& req) const override {
    const int h = ctx.height(), w = ctx.width();
    Tensor<float> out = req.mode != 1 && req.prev_mask.defined() ? req.prev_mask.clone() : Tensor<float>({h, w});
    if (req.mode == 1) {
      const int t = req.target_id.value_or(0);
      for (int y = h / 4; y < 3 * h / 4 - t; ++y)
        for (int x = w / 4; x < 3 * w / 4; ++x) out[static_cast<std::size_t>(y) * w + x] = 0.9f;
      return out;
    }
    for (const Click& c : req.clicks.ordered())
      for (int y = std::max(0, c.y - radius_); y <= std::min(h - 1, c.y + radius_); ++y)
        for (int x = std::max(0, c.x - radius_); x <= std::min(w - 1, c.x + radius_); ++x)
          if ((x - c.x) * (x - c.x) + (y - c.y) * (y - c.y) <= radius_ * radius_)
            out[static_cast<std::size_t>(y) * w + x] = c.polarity == Polarity::positive ? 0.95f : 0.05f;
    return out;
  }

 private:
  int radius_;
  int targets_;
};

}  // namespace verse::oracle
