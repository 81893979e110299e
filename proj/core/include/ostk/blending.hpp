#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ostk/imaging.hpp"
#include "ostk/mask.hpp"

namespace ostk {

struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;  // 0 or 1

  BinaryMask() = default;
  BinaryMask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), values(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}

  std::uint8_t& at(int y, int x) noexcept { return values[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const noexcept { return values[static_cast<std::size_t>(y) * width + x]; }

  double coverage() const noexcept;
  Mask to_mask() const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

// value >= threshold -> 1. Throws RangeError for values outside [0,1] or a
// threshold outside (0,1).
BinaryMask binarize(const Mask& soft, float threshold = 0.5f);

// Elementwise OR. Throws ShapeMismatch.
BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b);

// Separable Gaussian blur truncated at `radius` (sigma = radius / 2) with
// replicated borders. Radius 0 returns the mask as is.
Mask feather(const BinaryMask& mask, int radius);

// stylized * mask, per channel. Throws ShapeMismatch.
Image isolate(const Image& stylized, const Mask& mask);

// stylized * mask + original * (1 - mask). Throws ShapeMismatch.
Image composite(const Image& original, const Image& stylized, const Mask& mask);

// 8-bit grayscale PNG with 0 / 255.
void save_mask(const BinaryMask& mask, const std::filesystem::path& path);
BinaryMask load_mask(const std::filesystem::path& path);

}  // namespace ostk
