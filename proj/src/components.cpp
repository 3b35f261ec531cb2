#include "verse/components.hpp"

namespace verse {

Components label_components(const std::uint8_t* mask, int h, int w) {
  Components c;
  const std::size_t n = static_cast<std::size_t>(h) * w;
  c.labels.assign(n, -1);
  std::vector<int> stack;
  for (std::size_t start = 0; start < n; ++start) {
    if (!mask[start] || c.labels[start] >= 0) continue;
    const int id = static_cast<int>(c.sizes.size());
    c.sizes.push_back(0);
    c.first_pixel.push_back(static_cast<int>(start));
    c.labels[start] = id;
    stack.assign(1, static_cast<int>(start));
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      ++c.sizes[id];
      const int y = p / w, x = p % w;
      const int nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& q : nb) {
        if (q[0] < 0 || q[0] >= h || q[1] < 0 || q[1] >= w) continue;
        const int qi = q[0] * w + q[1];
        if (mask[qi] && c.labels[qi] < 0) {
          c.labels[qi] = id;
          stack.push_back(qi);
        }
      }
    }
  }
  return c;
}

void keep_largest_component(std::uint8_t* mask, int h, int w) {
  const Components c = label_components(mask, h, w);
  if (c.sizes.size() <= 1) return;
  int best = 0;
  for (int i = 1; i < static_cast<int>(c.sizes.size()); ++i)
    if (c.sizes[i] > c.sizes[best]) best = i;
  for (std::size_t i = 0; i < c.labels.size(); ++i)
    if (c.labels[i] != best) mask[i] = 0;
}

}  // namespace verse
