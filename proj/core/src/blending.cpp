#include "ostk/blending.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "ostk/error.hpp"

namespace ostk {

double BinaryMask::coverage() const noexcept {
  if (values.empty()) return 0.0;
  const auto ones = std::count(values.begin(), values.end(), std::uint8_t{1});
  return static_cast<double>(ones) / static_cast<double>(values.size());
}

Mask BinaryMask::to_mask() const {
  Mask m(height, width);
  std::transform(values.begin(), values.end(), m.values.begin(), [](std::uint8_t v) { return v ? 1.0f : 0.0f; });
  return m;
}

BinaryMask binarize(const Mask& soft, float threshold) {
  if (!(threshold > 0.0f && threshold < 1.0f)) {
    throw Error(ErrorKind::RangeError, "threshold must lie in (0,1)");
  }
  BinaryMask out(soft.height, soft.width);
  for (std::size_t i = 0; i < soft.values.size(); ++i) {
    const float v = soft.values[i];
    if (!(v >= 0.0f && v <= 1.0f)) throw Error(ErrorKind::RangeError, "soft mask value outside [0,1]");
    out.values[i] = v >= threshold ? 1 : 0;
  }
  return out;
}

BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b) {
  if (a.height != b.height || a.width != b.width) throw Error(ErrorKind::ShapeMismatch, "mask shapes differ");
  BinaryMask out(a.height, a.width);
  for (std::size_t i = 0; i < a.values.size(); ++i) out.values[i] = a.values[i] | b.values[i];
  return out;
}

Mask feather(const BinaryMask& mask, int radius) {
  if (radius < 0) throw Error(ErrorKind::RangeError, "feather radius must be non-negative");
  if (radius == 0) return mask.to_mask();

  const double sigma = radius / 2.0;
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-(i * i) / (2.0 * sigma * sigma));
  }
  double norm = 0.0;
  for (double k : kernel) norm += k;

  const int h = mask.height;
  const int w = mask.width;
  std::vector<double> tmp(static_cast<std::size_t>(h) * w);
  // Dividing by the kernel sum computed in the same order keeps flat regions
  // exactly 0 or 1.
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int xx = std::clamp(x + i, 0, w - 1);
        acc += kernel[static_cast<std::size_t>(i + radius)] * mask.at(y, xx);
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc / norm;
    }
  }
  Mask out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int yy = std::clamp(y + i, 0, h - 1);
        acc += kernel[static_cast<std::size_t>(i + radius)] * tmp[static_cast<std::size_t>(yy) * w + x];
      }
      out.at(y, x) = static_cast<float>(std::clamp(acc / norm, 0.0, 1.0));
    }
  }
  return out;
}

namespace {

void check_shape(const Image& img, const Mask& mask) {
  if (img.height() != mask.height || img.width() != mask.width) {
    throw Error(ErrorKind::ShapeMismatch, "image " + std::to_string(img.height()) + "x" +
                                              std::to_string(img.width()) + " vs mask " +
                                              std::to_string(mask.height) + "x" + std::to_string(mask.width));
  }
}

}  // namespace

Image isolate(const Image& stylized, const Mask& mask) {
  check_shape(stylized, mask);
  Image out(stylized.height(), stylized.width());
  auto src = stylized.pixels();
  auto dst = out.pixels();
  for (std::size_t p = 0; p < mask.values.size(); ++p) {
    for (std::size_t c = 0; c < 3; ++c) dst[p * 3 + c] = src[p * 3 + c] * mask.values[p];
  }
  return out;
}

Image composite(const Image& original, const Image& stylized, const Mask& mask) {
  check_shape(original, mask);
  check_shape(stylized, mask);
  Image out(original.height(), original.width());
  auto o = original.pixels();
  auto s = stylized.pixels();
  auto dst = out.pixels();
  for (std::size_t p = 0; p < mask.values.size(); ++p) {
    const double m = mask.values[p];
    for (std::size_t c = 0; c < 3; ++c) {
      const std::size_t i = p * 3 + c;
      dst[i] = static_cast<float>(static_cast<double>(s[i]) * m + static_cast<double>(o[i]) * (1.0 - m));
    }
  }
  return out;
}

void save_mask(const BinaryMask& mask, const std::filesystem::path& path) {
  cv::Mat mat(mask.height, mask.width, CV_8UC1);
  for (int y = 0; y < mask.height; ++y) {
    auto* row = mat.ptr<std::uint8_t>(y);
    for (int x = 0; x < mask.width; ++x) row[x] = mask.at(y, x) ? 255 : 0;
  }
  std::vector<unsigned char> bytes;
  if (!cv::imencode(".png", mat, bytes)) throw Error(ErrorKind::IoError, "PNG encoding failed");
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(ErrorKind::IoError, "cannot write " + path.string());
}

BinaryMask load_mask(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::FileNotFound, path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const cv::Mat mat = cv::imdecode(bytes, cv::IMREAD_GRAYSCALE);
  if (mat.empty()) throw Error(ErrorKind::CorruptImage, path.string());
  BinaryMask out(mat.rows, mat.cols);
  for (int y = 0; y < mat.rows; ++y) {
    const auto* row = mat.ptr<std::uint8_t>(y);
    for (int x = 0; x < mat.cols; ++x) out.at(y, x) = row[x] >= 128 ? 1 : 0;
  }
  return out;
}

}  // namespace ostk
