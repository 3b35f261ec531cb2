#include "verse/clicks.hpp"

#include <algorithm>
#include <limits>

#include "verse/components.hpp"
#include "verse/errors.hpp"

namespace verse {

const char* to_string(Polarity p) { return p == Polarity::positive ? "pos" : "neg"; }

void ClickSet::add(const Click& c, int capacity) {
  auto& list = c.polarity == Polarity::positive ? positives_ : negatives_;
  if (static_cast<int>(list.size()) >= capacity)
    throw LimitError(std::string("at most ") + std::to_string(capacity) + " " + to_string(c.polarity) +
                     " clicks are supported (N1 = " + std::to_string(capacity) + ")");
  for (const Click& o : list)
    if (o.x == c.x && o.y == c.y) throw ContractError("duplicate click coordinate within one polarity");
  list.push_back(c);
}

bool ClickSet::pop_last() {
  if (empty()) return false;
  const bool pos_last = negatives_.empty() || (!positives_.empty() && positives_.back().order > negatives_.back().order);
  (pos_last ? positives_ : negatives_).pop_back();
  return true;
}

std::vector<Click> ClickSet::ordered() const {
  std::vector<Click> all(positives_);
  all.insert(all.end(), negatives_.begin(), negatives_.end());
  std::stable_sort(all.begin(), all.end(), [](const Click& a, const Click& b) { return a.order < b.order; });
  return all;
}

int ClickSet::next_order() const {
  int o = 0;
  for (const Click& c : positives_) o = std::max(o, c.order + 1);
  for (const Click& c : negatives_) o = std::max(o, c.order + 1);
  return o;
}

int PaddedClicks::positive_count() const {
  return static_cast<int>(std::count(positive_valid.begin(), positive_valid.end(), 1));
}

int PaddedClicks::negative_count() const {
  return static_cast<int>(std::count(negative_valid.begin(), negative_valid.end(), 1));
}

namespace {

void stamp_disks(const std::vector<Click>& clicks, int h, int w, float* out, int channel) {
  static const int offsets[5][2] = {{0, 0}, {-1, 0}, {1, 0}, {0, -1}, {0, 1}};
  for (const Click& c : clicks) {
    if (c.x < 0 || c.x >= w || c.y < 0 || c.y >= h) throw ContractError("click outside image bounds");
    for (const auto& o : offsets) {
      const int y = c.y + o[0], x = c.x + o[1];
      if (y >= 0 && y < h && x >= 0 && x < w) out[(static_cast<std::size_t>(y) * w + x) * 3 + channel] = 1.0f;
    }
  }
}

}  // namespace

DensePrompt rasterize(const ClickSet& clicks, const Tensor<float>& prev_mask) {
  if (prev_mask.rank() != 2) throw ContractError("previous mask must be [H, W]");
  const int h = prev_mask.dim(0), w = prev_mask.dim(1);
  DensePrompt out({h, w, 3});
  float* o = out.data();
  for (std::size_t i = 0; i < prev_mask.size(); ++i) o[i * 3] = prev_mask[i];
  stamp_disks(clicks.positives(), h, w, o, 1);
  stamp_disks(clicks.negatives(), h, w, o, 2);
  return out;
}

DensePrompt rasterize(const ClickSet& clicks, int height, int width) {
  return rasterize(clicks, Tensor<float>({height, width}));
}

std::vector<long long> squared_distance_to_complement(const std::uint8_t* inside, int h, int w) {
  const int ph = h + 2, pw = w + 2;
  constexpr long long inf = std::numeric_limits<long long>::max() / 4;
  std::vector<long long> grid(static_cast<std::size_t>(ph) * pw, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (inside[static_cast<std::size_t>(y) * w + x]) grid[static_cast<std::size_t>(y + 1) * pw + x + 1] = inf;

  const int n_max = std::max(ph, pw);
  std::vector<long long> f(n_max), d(n_max);
  std::vector<int> v(n_max);
  std::vector<double> z(n_max + 1);
  // Lower envelope of parabolas rooted at the finite samples of f.
  auto transform = [&](int n) {
    int k = -1;
    for (int q = 0; q < n; ++q) {
      if (f[q] >= inf) continue;
      const double fq = static_cast<double>(f[q]) + static_cast<double>(q) * q;
      double s = -std::numeric_limits<double>::infinity();
      while (k >= 0) {
        const int p = v[k];
        s = (fq - (static_cast<double>(f[p]) + static_cast<double>(p) * p)) / (2.0 * (q - p));
        if (s > z[k]) break;
        --k;
      }
      ++k;
      v[k] = q;
      z[k] = k == 0 ? -std::numeric_limits<double>::infinity() : s;
      z[k + 1] = std::numeric_limits<double>::infinity();
    }
    if (k < 0) {
      std::fill(d.begin(), d.begin() + n, inf);
      return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
      while (z[j + 1] < q) ++j;
      const long long dq = q - v[j];
      d[q] = dq * dq + f[v[j]];
    }
  };

  for (int y = 0; y < ph; ++y) {
    for (int x = 0; x < pw; ++x) f[x] = grid[static_cast<std::size_t>(y) * pw + x];
    transform(pw);
    for (int x = 0; x < pw; ++x) grid[static_cast<std::size_t>(y) * pw + x] = d[x];
  }
  for (int x = 0; x < pw; ++x) {
    for (int y = 0; y < ph; ++y) f[y] = grid[static_cast<std::size_t>(y) * pw + x];
    transform(ph);
    for (int y = 0; y < ph; ++y) grid[static_cast<std::size_t>(y) * pw + x] = d[y];
  }

  std::vector<long long> out(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out[static_cast<std::size_t>(y) * w + x] = grid[static_cast<std::size_t>(y + 1) * pw + x + 1];
  return out;
}

std::optional<Click> next_click(const Mask& pred, const Mask& gt, int order) {
  require_same_shape(pred, gt, "next_click");
  if (pred.rank() != 2) throw ContractError("next_click expects [H, W] masks");
  const int h = gt.dim(0), w = gt.dim(1);
  const std::size_t n = gt.size();
  std::vector<std::uint8_t> err(n);
  for (std::size_t i = 0; i < n; ++i) err[i] = (pred[i] != 0) != (gt[i] != 0);

  const Components comps = label_components(err.data(), h, w);
  if (comps.sizes.empty()) return std::nullopt;
  int best = 0;
  for (int i = 1; i < static_cast<int>(comps.sizes.size()); ++i)
    if (comps.sizes[i] > comps.sizes[best]) best = i;

  std::vector<std::uint8_t> region(n);
  for (std::size_t i = 0; i < n; ++i) region[i] = comps.labels[i] == best;
  const std::vector<long long> dist = squared_distance_to_complement(region.data(), h, w);
  std::size_t arg = n;
  for (std::size_t i = 0; i < n; ++i)
    if (region[i] && (arg == n || dist[i] > dist[arg])) arg = i;

  Click c;
  c.x = static_cast<int>(arg % w);
  c.y = static_cast<int>(arg / w);
  c.polarity = gt[arg] ? Polarity::positive : Polarity::negative;
  c.order = order;
  return c;
}

PaddedClicks pad(const ClickSet& clicks, int n1) {
  if (static_cast<int>(clicks.positives().size()) > n1 || static_cast<int>(clicks.negatives().size()) > n1)
    throw ContractError("click count exceeds padding capacity " + std::to_string(n1));
  PaddedClicks p;
  p.n1 = n1;
  auto fill = [n1](const std::vector<Click>& src, std::vector<std::array<int, 2>>& pts, std::vector<std::uint8_t>& valid) {
    pts.assign(n1, {PaddedClicks::kSentinel, PaddedClicks::kSentinel});
    valid.assign(n1, 0);
    for (std::size_t i = 0; i < src.size(); ++i) {
      pts[i] = {src[i].x, src[i].y};
      valid[i] = 1;
    }
  };
  fill(clicks.positives(), p.positive_points, p.positive_valid);
  fill(clicks.negatives(), p.negative_points, p.negative_valid);
  return p;
}

Mask binarize(const Tensor<float>& prob, float threshold) {
  Mask m(prob.shape());
  for (std::size_t i = 0; i < prob.size(); ++i) m[i] = prob[i] >= threshold;
  return m;
}

}  // namespace verse
