#pragma once

#include <array>
#include <optional>
#include <vector>

#include "verse/dataio.hpp"

namespace verse {

/// Per-polarity click capacity of the prompt encoder.
inline constexpr int kMaxClicksPerPolarity = 24;

enum class Polarity { positive, negative };

const char* to_string(Polarity p);

struct Click {
  int x = 0;  // column
  int y = 0;  // row
  Polarity polarity = Polarity::positive;
  int order = 0;

  bool operator==(const Click&) const = default;
};

class ClickSet {
 public:
  /// Appends a click; throws ContractError on a duplicate coordinate within the
  /// same polarity and LimitError past capacity.
  void add(const Click& c, int capacity = kMaxClicksPerPolarity);
  /// Removes the most recent click (highest order). Returns false when empty.
  bool pop_last();

  const std::vector<Click>& positives() const { return positives_; }
  const std::vector<Click>& negatives() const { return negatives_; }
  /// All clicks sorted by order.
  std::vector<Click> ordered() const;
  std::size_t size() const { return positives_.size() + negatives_.size(); }
  bool empty() const { return size() == 0; }
  int next_order() const;

 private:
  std::vector<Click> positives_;
  std::vector<Click> negatives_;
};

struct PaddedClicks {
  static constexpr int kSentinel = -1;

  int n1 = kMaxClicksPerPolarity;
  std::vector<std::array<int, 2>> positive_points;  // (x, y)
  std::vector<std::array<int, 2>> negative_points;
  std::vector<std::uint8_t> positive_valid;
  std::vector<std::uint8_t> negative_valid;

  int positive_count() const;
  int negative_count() const;
};

/// [H, W, 3] channels-last: previous mask probability, positive disks, negative disks.
using DensePrompt = Tensor<float>;

DensePrompt rasterize(const ClickSet& clicks, const Tensor<float>& prev_mask);
/// Same with an all-zero previous mask.
DensePrompt rasterize(const ClickSet& clicks, int height, int width);

/// The simulated user's next correction, or nullopt when pred == gt.
std::optional<Click> next_click(const Mask& pred, const Mask& gt, int order = 0);

PaddedClicks pad(const ClickSet& clicks, int n1 = kMaxClicksPerPolarity);

/// Exact squared Euclidean distance from every pixel of a binary [h, w] grid to
/// the nearest zero pixel, treating everything outside the grid as zero.
std::vector<long long> squared_distance_to_complement(const std::uint8_t* inside, int h, int w);

Mask binarize(const Tensor<float>& prob, float threshold = 0.5f);

}  // namespace verse
