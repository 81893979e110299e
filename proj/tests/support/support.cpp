#include "support.hpp"

#include <atomic>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <random>

#include <ATen/CPUGeneratorImpl.h>

namespace ostk::testing {

namespace fs = std::filesystem;

fs::path data_dir() { return OSTK_TEST_DATA_DIR; }

fs::path fixture_weights() { return data_dir() / "fixture_seg.pt"; }

std::optional<fs::path> published_weights() {
  const char* env = std::getenv("OSTK_WEIGHTS");
  if (env == nullptr || *env == '\0' || !fs::exists(env)) return std::nullopt;
  return fs::path(env);
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  std::random_device rd;
  path_ = fs::temp_directory_path() /
          (tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter.fetch_add(1)));
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

TinyBackbone::TinyBackbone(std::uint64_t seed, int channels0, int channels1) {
  taps_.content_layer = 1;
  taps_.style_layers = {0, 1};
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  const auto opts = at::TensorOptions().dtype(at::kDouble);
  w0_ = at::randn({channels0, 3, 3, 3}, gen, opts) * 0.4;
  b0_ = at::randn({channels0}, gen, opts) * 0.1;
  w1_ = at::randn({channels1, channels0, 3, 3}, gen, opts) * 0.3;
  b1_ = at::randn({channels1}, gen, opts) * 0.1;
}

FeatureSet TinyBackbone::extract(const at::Tensor& pixels) const {
  const auto x = pixels.to(at::kDouble);
  const auto a0 = at::tanh(at::conv2d(x, w0_, b0_, 1, 1));
  const auto a1 = at::tanh(at::conv2d(a0, w1_, b1_, 2, 1));
  FeatureSet out;
  out.emplace(0, FeatureMap{0, a0.squeeze(0), a0.requires_grad()});
  out.emplace(1, FeatureMap{1, a1.squeeze(0), a1.requires_grad()});
  return out;
}

Image random_image(int height, int width, std::uint64_t seed, float lo, float hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(lo, hi);
  Image img(height, width);
  for (auto& v : img.pixels()) v = dist(rng);
  return img;
}

BinaryMask random_binary_mask(int height, int width, std::uint64_t seed, double p) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution dist(p);
  BinaryMask m(height, width);
  for (auto& v : m.values) v = dist(rng) ? 1 : 0;
  return m;
}

Mask random_soft_mask(int height, int width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(0.0f, 1.0f);
  Mask m(height, width);
  for (auto& v : m.values) v = dist(rng);
  return m;
}

FeatureMap make_feature(const std::vector<float>& values, int channels, int height, int width, int layer) {
  auto t = at::from_blob(const_cast<float*>(values.data()), {channels, height, width}, at::kFloat).clone();
  return FeatureMap{layer, t, false};
}

Image quantized(const Image& img) {
  Image out = img;
  for (auto& v : out.pixels()) v = static_cast<float>(static_cast<double>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0);
  return out;
}

std::int64_t ulp_distance(float a, float b) {
  auto key = [](float f) {
    const auto bits = std::bit_cast<std::int32_t>(f);
    return bits < 0 ? static_cast<std::int64_t>(std::numeric_limits<std::int32_t>::min()) - bits
                    : static_cast<std::int64_t>(bits);
  };
  return std::abs(key(a) - key(b));
}

namespace oracle {

std::vector<double> gram(const std::vector<float>& f, int channels, int spatial) {
  std::vector<double> g(static_cast<std::size_t>(channels) * channels, 0.0);
  for (int i = 0; i < channels; ++i) {
    for (int j = 0; j < channels; ++j) {
      double acc = 0.0;
      for (int k = 0; k < spatial; ++k) {
        acc += static_cast<double>(f[static_cast<std::size_t>(i) * spatial + k]) *
               static_cast<double>(f[static_cast<std::size_t>(j) * spatial + k]);
      }
      g[static_cast<std::size_t>(i) * channels + j] = acc / (static_cast<double>(channels) * spatial);
    }
  }
  return g;
}

double content_loss(const std::vector<float>& a, const std::vector<float>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

double gram_mse(const std::vector<double>& g, const std::vector<double>& h) {
  double acc = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) acc += (g[i] - h[i]) * (g[i] - h[i]);
  return acc / static_cast<double>(g.size());
}

}  // namespace oracle

}  // namespace ostk::testing
