#pragma once

#include <cstddef>
#include <vector>

namespace ostk {

// Row-major H x W single-channel mask with values in [0,1].
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<float> values;

  Mask() = default;
  Mask(int h, int w, float fill = 0.0f)
      : height(h), width(w), values(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}

  float& at(int y, int x) noexcept { return values[static_cast<std::size_t>(y) * width + x]; }
  float at(int y, int x) const noexcept { return values[static_cast<std::size_t>(y) * width + x]; }

  friend bool operator==(const Mask&, const Mask&) = default;
};

}  // namespace ostk
