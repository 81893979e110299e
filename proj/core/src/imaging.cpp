#include "ostk/imaging.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "ostk/error.hpp"

namespace ostk {

Image::Image(int height, int width, float fill)
    : height_(height),
      width_(width),
      pixels_(static_cast<std::size_t>(std::max(height, 0)) * std::max(width, 0) * kChannels, fill) {}

Image::Image(int height, int width, std::vector<float> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
  if (height < 0 || width < 0 ||
      pixels_.size() != static_cast<std::size_t>(height) * width * kChannels) {
    throw Error(ErrorKind::ShapeMismatch, "pixel buffer does not match " +
                                              std::to_string(height) + "x" +
                                              std::to_string(width) + "x3");
  }
}

namespace {

enum class Codec { png, jpeg, unknown };

Codec sniff(const std::vector<unsigned char>& bytes) {
  static constexpr std::array<unsigned char, 8> kPng = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= kPng.size() && std::equal(kPng.begin(), kPng.end(), bytes.begin())) {
    return Codec::png;
  }
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) {
    return Codec::jpeg;
  }
  return Codec::unknown;
}

template <typename T>
Image from_bgr(const cv::Mat& mat, double scale) {
  Image img(mat.rows, mat.cols);
  for (int y = 0; y < mat.rows; ++y) {
    const T* row = mat.ptr<T>(y);
    for (int x = 0; x < mat.cols; ++x) {
      for (int c = 0; c < 3; ++c) {
        img.at(y, x, c) = static_cast<float>(row[x * 3 + (2 - c)] / scale);
      }
    }
  }
  return img;
}

}  // namespace

Image load_image(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw Error(ErrorKind::FileNotFound, path.string());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorKind::FileNotFound, path.string());
  }
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (sniff(bytes) == Codec::unknown) {
    throw Error(ErrorKind::UnsupportedFormat, path.string() + " is neither PNG nor JPEG");
  }

  cv::Mat decoded;
  try {
    decoded = cv::imdecode(bytes, cv::IMREAD_COLOR | cv::IMREAD_ANYDEPTH | cv::IMREAD_IGNORE_ORIENTATION);
  } catch (const cv::Exception& e) {
    throw Error(ErrorKind::CorruptImage, path.string() + ": " + e.what());
  }
  if (decoded.empty() || decoded.channels() != 3) {
    throw Error(ErrorKind::CorruptImage, path.string());
  }
  switch (decoded.depth()) {
    case CV_8U:
      return from_bgr<std::uint8_t>(decoded, 255.0);
    case CV_16U:
      return from_bgr<std::uint16_t>(decoded, 65535.0);
    default:
      throw Error(ErrorKind::UnsupportedFormat, path.string() + ": unsupported sample depth");
  }
}

void save_image(const Image& img, const std::filesystem::path& path) {
  if (img.empty()) {
    throw Error(ErrorKind::IoError, "refusing to write an empty image to " + path.string());
  }
  cv::Mat bgr(img.height(), img.width(), CV_8UC3);
  for (int y = 0; y < img.height(); ++y) {
    auto* row = bgr.ptr<std::uint8_t>(y);
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = img.at(y, x, c);
        if (!std::isfinite(v)) {
          throw Error(ErrorKind::NonFiniteInput, "non-finite sample while writing " + path.string());
        }
        row[x * 3 + (2 - c)] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
      }
    }
  }
  std::vector<unsigned char> encoded;
  if (!cv::imencode(".png", bgr, encoded)) {
    throw Error(ErrorKind::IoError, "PNG encoding failed for " + path.string());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
  }
  out.write(reinterpret_cast<const char*>(encoded.data()), static_cast<std::streamsize>(encoded.size()));
  if (!out) {
    throw Error(ErrorKind::IoError, "short write to " + path.string());
  }
}

Image resize(const Image& img, int target_height, int target_width, ResizeMode mode) {
  if (target_height < 1 || target_width < 1) {
    throw Error(ErrorKind::InvalidTarget, "resize target " + std::to_string(target_height) + "x" +
                                              std::to_string(target_width));
  }
  if (img.empty()) {
    throw Error(ErrorKind::InvalidTarget, "cannot resize an empty image");
  }
  if (target_height == img.height() && target_width == img.width()) {
    return img;
  }

  Image out(target_height, target_width);
  const double sy = static_cast<double>(img.height()) / target_height;
  const double sx = static_cast<double>(img.width()) / target_width;

  if (mode == ResizeMode::nearest) {
    for (int y = 0; y < target_height; ++y) {
      const int src_y = std::min(static_cast<int>(std::floor((y + 0.5) * sy)), img.height() - 1);
      for (int x = 0; x < target_width; ++x) {
        const int src_x = std::min(static_cast<int>(std::floor((x + 0.5) * sx)), img.width() - 1);
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(src_y, src_x, c);
      }
    }
    return out;
  }

  // Half-pixel centres with edge replication. Accumulating in double keeps a
  // constant input exactly constant after rounding back to float.
  for (int y = 0; y < target_height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height() - 1);
    const double wy = fy - y0;
    for (int x = 0; x < target_width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width() - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = img.at(y0, x0, c) * (1.0 - wx) + img.at(y0, x1, c) * wx;
        const double bottom = img.at(y1, x0, c) * (1.0 - wx) + img.at(y1, x1, c) * wx;
        out.at(y, x, c) = static_cast<float>(std::clamp(top * (1.0 - wy) + bottom * wy, 0.0, 1.0));
      }
    }
  }
  return out;
}

Image clamp(const Image& img) {
  Image out = img;
  for (float& v : out.pixels()) {
    if (!std::isfinite(v)) {
      throw Error(ErrorKind::NonFiniteInput, "clamp encountered a non-finite sample");
    }
    v = std::min(1.0f, std::max(0.0f, v));
  }
  return out;
}

Extent working_extent(int height, int width, int long_side, int stride) {
  if (height < 1 || width < 1 || long_side < stride || stride < 1) {
    throw Error(ErrorKind::InvalidTarget, "cannot derive a working size from " + std::to_string(height) +
                                              "x" + std::to_string(width));
  }
  const double scale = static_cast<double>(long_side) / std::max(height, width);
  auto snap = [&](int side) {
    const int scaled = static_cast<int>(std::floor(side * scale + 1e-9));
    return std::max(stride, scaled / stride * stride);
  };
  return {snap(height), snap(width)};
}

}  // namespace ostk
