#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <ATen/ATen.h>
#include <gtest/gtest.h>

#include "ostk/blending.hpp"
#include "ostk/error.hpp"
#include "ostk/imaging.hpp"
#include "ostk/mask.hpp"
#include "ostk/network.hpp"

namespace ostk::testing {

std::filesystem::path data_dir();

// Small segmentation network trained on procedural scenes (see tools/fixture_trainer).
std::filesystem::path fixture_weights();

// Published checkpoint named by $OSTK_WEIGHTS, when present.
std::optional<std::filesystem::path> published_weights();

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "ostk");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Two stacked 3x3 convolutions with tanh, fixed seeded weights, evaluated in
// double precision. Layer 0 keeps the input size, layer 1 halves it.
class TinyBackbone final : public FeatureExtractor {
 public:
  explicit TinyBackbone(std::uint64_t seed = 7, int channels0 = 4, int channels1 = 6);

  const TapSpec& taps() const override { return taps_; }
  FeatureSet extract(const at::Tensor& pixels) const override;
  int input_stride() const override { return 2; }

 private:
  TapSpec taps_;
  at::Tensor w0_, b0_, w1_, b1_;
};

Image random_image(int height, int width, std::uint64_t seed, float lo = 0.0f, float hi = 1.0f);
BinaryMask random_binary_mask(int height, int width, std::uint64_t seed, double p = 0.5);
Mask random_soft_mask(int height, int width, std::uint64_t seed);

FeatureMap make_feature(const std::vector<float>& values, int channels, int height, int width, int layer = 0);

// Decoded 8-bit PNG values of `img` (what save_image followed by load_image yields).
Image quantized(const Image& img);

// Distance in representable floats.
std::int64_t ulp_distance(float a, float b);

// Kind of the ostk::Error thrown by `f`; records a failure when none is thrown.
template <class F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no ostk::Error thrown";
  return ErrorKind::UsageError;
}

namespace oracle {

// Row-major C x C.
std::vector<double> gram(const std::vector<float>& f, int channels, int spatial);
double content_loss(const std::vector<float>& a, const std::vector<float>& b);
double gram_mse(const std::vector<double>& g, const std::vector<double>& h);

}  // namespace oracle

}  // namespace ostk::testing
