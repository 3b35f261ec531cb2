#pragma once

#include <cstdint>
#include <vector>

namespace verse {

/// 4-connected component labelling of a binary [h, w] grid.
/// Labels are assigned in row-major order of each component's first pixel,
/// starting at 0; background pixels get -1.
struct Components {
  std::vector<int> labels;
  std::vector<int> sizes;
  std::vector<int> first_pixel;
};

Components label_components(const std::uint8_t* mask, int h, int w);

/// Keeps only the largest component (earliest first pixel on ties).
void keep_largest_component(std::uint8_t* mask, int h, int w);

}  // namespace verse
