#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace ostk {

enum class ColorSpace { sRGB };

// Row-major, interleaved RGB image with float samples in [0,1].
//
// The backbone needs both sides to be at least 32 pixels and multiples of its
// stride; that constraint is checked where images enter the network, not
// here, so small images (icons, masks, test patterns) remain representable.
class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;
  Image(int height, int width, float fill = 0.0f);
  Image(int height, int width, std::vector<float> pixels);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  bool empty() const noexcept { return pixels_.empty(); }
  std::size_t size() const noexcept { return pixels_.size(); }
  ColorSpace colorspace() const noexcept { return colorspace_; }

  float& at(int y, int x, int c) noexcept { return pixels_[index(y, x, c)]; }
  float at(int y, int x, int c) const noexcept { return pixels_[index(y, x, c)]; }

  std::span<float> pixels() noexcept { return pixels_; }
  std::span<const float> pixels() const noexcept { return pixels_; }

  bool same_shape(const Image& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * kChannels + c;
  }

  int height_ = 0;
  int width_ = 0;
  ColorSpace colorspace_ = ColorSpace::sRGB;
  std::vector<float> pixels_;
};

enum class ResizeMode { bilinear, nearest };

struct Extent {
  int height = 0;
  int width = 0;
  friend bool operator==(const Extent&, const Extent&) = default;
};

// Smallest side length the backbone accepts.
inline constexpr int kMinImageSide = 32;

// Decodes a PNG or JPEG into [0,1] RGB. Grayscale is replicated to three
// channels and alpha is dropped.
Image load_image(const std::filesystem::path& path);

// Writes an 8-bit RGB PNG. Samples are rounded to the nearest 1/255 step.
void save_image(const Image& img, const std::filesystem::path& path);

// Throws InvalidTarget for non-positive target sides. Same-shape resizes
// return a bit-identical copy.
Image resize(const Image& img, int target_height, int target_width,
             ResizeMode mode = ResizeMode::bilinear);

// Elementwise min(1, max(0, x)). Throws NonFiniteInput on NaN/Inf.
Image clamp(const Image& img);

// Scales the long side to `long_side`, then rounds both sides down to a
// multiple of `stride` (never below one stride).
Extent working_extent(int height, int width, int long_side = 640, int stride = 32);

}  // namespace ostk
