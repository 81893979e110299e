#include "ostk/scenes.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

namespace ostk::scenes {

namespace {

using Rgb = std::array<float, 3>;
using Rng = std::mt19937_64;

float uniform(Rng& rng, float lo, float hi) { return std::uniform_real_distribution<float>(lo, hi)(rng); }
int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

Rgb mix(const Rgb& a, const Rgb& b, float t) {
  return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

Rgb scale(const Rgb& a, float s) {
  return {std::clamp(a[0] * s, 0.0f, 1.0f), std::clamp(a[1] * s, 0.0f, 1.0f), std::clamp(a[2] * s, 0.0f, 1.0f)};
}

Rgb jitter(Rng& rng, const Rgb& c, float amount) {
  return {std::clamp(c[0] + uniform(rng, -amount, amount), 0.0f, 1.0f),
          std::clamp(c[1] + uniform(rng, -amount, amount), 0.0f, 1.0f),
          std::clamp(c[2] + uniform(rng, -amount, amount), 0.0f, 1.0f)};
}

constexpr std::array<Rgb, 6> kVasePalette = {{
    {0.72f, 0.36f, 0.22f},  // terracotta
    {0.20f, 0.33f, 0.62f},  // cobalt
    {0.28f, 0.52f, 0.40f},  // celadon
    {0.90f, 0.86f, 0.74f},  // cream
    {0.55f, 0.20f, 0.35f},  // plum
    {0.15f, 0.15f, 0.18f},  // black glaze
}};

constexpr std::array<Rgb, 5> kBirdPalette = {{
    {0.80f, 0.12f, 0.10f},  // red
    {0.45f, 0.30f, 0.18f},  // brown
    {0.20f, 0.45f, 0.80f},  // blue
    {0.95f, 0.80f, 0.15f},  // yellow
    {0.30f, 0.30f, 0.30f},  // grey
}};

float vase_radius(float v) {
  if (v < 0.06f) return 0.55f;
  if (v < 0.25f) return 0.38f;
  return std::max(0.5f, 0.38f + 0.62f * std::sin(std::numbers::pi_v<float> * (v - 0.25f) / 0.75f));
}

bool in_triangle(float px, float py, float ax, float ay, float bx, float by, float cx, float cy) {
  const auto side = [](float x1, float y1, float x2, float y2, float x3, float y3) {
    return (x1 - x3) * (y2 - y3) - (x2 - x3) * (y1 - y3);
  };
  const float d1 = side(px, py, ax, ay, bx, by);
  const float d2 = side(px, py, bx, by, cx, cy);
  const float d3 = side(px, py, cx, cy, ax, ay);
  const bool neg = d1 < 0 || d2 < 0 || d3 < 0;
  const bool pos = d1 > 0 || d2 > 0 || d3 > 0;
  return !(neg && pos);
}

struct Placement {
  int x0, y0, w, h;
};

bool overlaps(const Placement& a, const Placement& b, int pad) {
  return a.x0 < b.x0 + b.w + pad && b.x0 < a.x0 + a.w + pad && a.y0 < b.y0 + b.h + pad && b.y0 < a.y0 + a.h + pad;
}

void paint_vase(Image& img, Mask& mask, const Placement& p, Rng& rng) {
  const Rgb base = jitter(rng, kVasePalette[static_cast<std::size_t>(uniform_int(rng, 0, 5))], 0.06f);
  const Rgb band = scale(base, uniform(rng, 0.45f, 0.7f));
  const float band_lo = uniform(rng, 0.35f, 0.55f);
  const float band_hi = band_lo + uniform(rng, 0.06f, 0.14f);
  const bool second_band = uniform(rng, 0.0f, 1.0f) < 0.5f;
  for (int y = 0; y < p.h; ++y) {
    const float v = (y + 0.5f) / static_cast<float>(p.h);
    const float r = vase_radius(v);
    for (int x = 0; x < p.w; ++x) {
      const float u = 2.0f * (x + 0.5f) / static_cast<float>(p.w) - 1.0f;
      if (std::abs(u) > r) continue;
      const int iy = p.y0 + y;
      const int ix = p.x0 + x;
      if (iy < 0 || iy >= img.height() || ix < 0 || ix >= img.width()) continue;
      Rgb c = base;
      if ((v >= band_lo && v < band_hi) || (second_band && v >= band_hi + 0.12f && v < band_hi + 0.16f)) c = band;
      // Cylinder-like shading: bright on the left, darker on the right.
      const float shade = 1.05f - 0.35f * (u / r + 1.0f) * 0.5f + 0.25f * std::exp(-std::pow((u / r + 0.45f) * 4.0f, 2.0f));
      c = scale(c, shade);
      for (int ch = 0; ch < 3; ++ch) img.at(iy, ix, ch) = c[static_cast<std::size_t>(ch)];
      mask.at(iy, ix) = 1.0f;
    }
  }
}

void paint_bird(Image& img, Mask& mask, const Placement& p, Rng& rng) {
  const Rgb body = jitter(rng, kBirdPalette[static_cast<std::size_t>(uniform_int(rng, 0, 4))], 0.06f);
  const Rgb wing = scale(body, 0.6f);
  const Rgb belly = mix(body, Rgb{0.95f, 0.93f, 0.88f}, 0.5f);
  const Rgb beak = {0.95f, 0.55f, 0.10f};
  const Rgb dark = {0.05f, 0.05f, 0.05f};
  const bool flip = uniform(rng, 0.0f, 1.0f) < 0.5f;
  for (int y = 0; y < p.h; ++y) {
    const float ny = (y + 0.5f) / static_cast<float>(p.h);
    for (int x = 0; x < p.w; ++x) {
      float nx = (x + 0.5f) / static_cast<float>(p.w);
      if (flip) nx = 1.0f - nx;
      const float bx = (nx - 0.45f) / 0.30f;
      const float by = (ny - 0.58f) / 0.24f;
      const bool in_body = bx * bx + by * by <= 1.0f;
      const float hx = (nx - 0.74f) / 0.13f;
      const float hy = (ny - 0.34f) / 0.18f;
      const bool in_head = hx * hx + hy * hy <= 1.0f;
      const bool in_beak = in_triangle(nx, ny, 0.84f, 0.28f, 1.0f, 0.36f, 0.84f, 0.42f);
      const bool in_tail = in_triangle(nx, ny, 0.22f, 0.52f, 0.0f, 0.30f, 0.02f, 0.62f);
      const bool in_leg = ny > 0.80f && ((nx > 0.40f && nx < 0.43f) || (nx > 0.50f && nx < 0.53f));
      if (!(in_body || in_head || in_beak || in_tail || in_leg)) continue;
      const int iy = p.y0 + y;
      const int ix = p.x0 + x;
      if (iy < 0 || iy >= img.height() || ix < 0 || ix >= img.width()) continue;
      Rgb c = body;
      if (in_leg || in_beak) c = in_leg ? dark : beak;
      if (in_body && by > 0.35f) c = belly;
      const float wx = (nx - 0.40f) / 0.20f;
      const float wy = (ny - 0.52f) / 0.11f;
      if (in_body && wx * wx + wy * wy <= 1.0f) c = wing;
      const float ex = (nx - 0.78f) / 0.025f;
      const float ey = (ny - 0.30f) / 0.035f;
      if (in_head && ex * ex + ey * ey <= 1.0f) c = dark;
      for (int ch = 0; ch < 3; ++ch) img.at(iy, ix, ch) = c[static_cast<std::size_t>(ch)];
      mask.at(iy, ix) = 1.0f;
    }
  }
}

BoundingBox tight_box(const Mask& m) {
  int x1 = m.width, y1 = m.height, x2 = -1, y2 = -1;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (m.at(y, x) > 0.5f) {
        x1 = std::min(x1, x);
        y1 = std::min(y1, y);
        x2 = std::max(x2, x);
        y2 = std::max(y2, y);
      }
    }
  }
  if (x2 < 0) return {};
  return {static_cast<float>(x1), static_cast<float>(y1), static_cast<float>(x2 + 1), static_cast<float>(y2 + 1)};
}

void paint_background(Image& img, Rng& rng) {
  const Rgb top = {uniform(rng, 0.3f, 0.95f), uniform(rng, 0.3f, 0.95f), uniform(rng, 0.3f, 0.95f)};
  const Rgb bottom = jitter(rng, top, 0.25f);
  const bool table = uniform(rng, 0.0f, 1.0f) < 0.6f;
  const int table_y = static_cast<int>(img.height() * uniform(rng, 0.55f, 0.8f));
  const Rgb wood = jitter(rng, Rgb{0.55f, 0.40f, 0.28f}, 0.12f);
  std::normal_distribution<float> noise(0.0f, 0.015f);
  for (int y = 0; y < img.height(); ++y) {
    const Rgb row = mix(top, bottom, static_cast<float>(y) / static_cast<float>(img.height()));
    for (int x = 0; x < img.width(); ++x) {
      const Rgb& c = table && y >= table_y ? wood : row;
      for (int ch = 0; ch < 3; ++ch) {
        img.at(y, x, ch) = std::clamp(c[static_cast<std::size_t>(ch)] + noise(rng), 0.0f, 1.0f);
      }
    }
  }
}

}  // namespace

Scene render(const SceneSpec& spec) {
  Rng rng(spec.seed);
  Scene scene;
  scene.image = Image(spec.height, spec.width);
  paint_background(scene.image, rng);

  const int vases = spec.vases >= 0 ? spec.vases : uniform_int(rng, 0, 3);
  const int birds = spec.birds >= 0 ? spec.birds : uniform_int(rng, 0, 1);
  std::vector<int> kinds(static_cast<std::size_t>(vases), kVaseClass);
  kinds.insert(kinds.end(), static_cast<std::size_t>(birds), kBirdClass);

  std::vector<Placement> placed;
  for (int kind : kinds) {
    const int max_side = std::min({spec.max_object, spec.height - 2, spec.width - 2});
    const int min_side = std::min(spec.min_object, max_side);
    for (int attempt = 0; attempt < 200; ++attempt) {
      const int size = uniform_int(rng, min_side, max_side);
      Placement p{};
      if (kind == kVaseClass) {
        p.h = size;
        p.w = std::max(8, static_cast<int>(size * uniform(rng, 0.5f, 0.75f)));
      } else {
        p.w = size;
        p.h = std::max(8, static_cast<int>(size * uniform(rng, 0.6f, 0.75f)));
      }
      if (p.w >= spec.width || p.h >= spec.height) continue;
      p.x0 = uniform_int(rng, 0, spec.width - p.w);
      p.y0 = uniform_int(rng, 0, spec.height - p.h);
      if (std::any_of(placed.begin(), placed.end(), [&](const Placement& q) { return overlaps(p, q, 6); })) {
        continue;
      }
      placed.push_back(p);
      SceneObject obj;
      obj.class_id = kind;
      obj.mask = Mask(spec.height, spec.width);
      if (kind == kVaseClass) {
        paint_vase(scene.image, obj.mask, p, rng);
      } else {
        paint_bird(scene.image, obj.mask, p, rng);
      }
      obj.box = tight_box(obj.mask);
      scene.objects.push_back(std::move(obj));
      break;
    }
  }
  return scene;
}

Image blank(int height, int width, float level) { return Image(height, width, level); }

Image pattern(Pattern kind, int height, int width, std::uint64_t seed) {
  Rng rng(seed);
  std::array<Rgb, 3> palette;
  for (auto& c : palette) c = {uniform(rng, 0.0f, 1.0f), uniform(rng, 0.0f, 1.0f), uniform(rng, 0.0f, 1.0f)};
  const float period = uniform(rng, 6.0f, 18.0f);
  const float angle = uniform(rng, 0.0f, std::numbers::pi_v<float>);
  const float ca = std::cos(angle);
  const float sa = std::sin(angle);
  const float two_pi = 2.0f * std::numbers::pi_v<float>;
  Image img(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const float u = x * ca + y * sa;
      const float v = -x * sa + y * ca;
      Rgb c{};
      switch (kind) {
        case Pattern::stripes: {
          const int band = static_cast<int>(std::floor(u / period)) % 3;
          c = palette[static_cast<std::size_t>((band + 3) % 3)];
          break;
        }
        case Pattern::dots: {
          const float fu = u / period - std::floor(u / period) - 0.5f;
          const float fv = v / period - std::floor(v / period) - 0.5f;
          c = fu * fu + fv * fv < 0.09f ? palette[0] : mix(palette[1], palette[2], 0.5f + 0.5f * std::sin(v / 40.0f));
          break;
        }
        case Pattern::waves: {
          const float t = 0.5f + 0.5f * std::sin(two_pi * u / period + 2.0f * std::sin(two_pi * v / (3.0f * period)));
          c = t < 0.5f ? mix(palette[0], palette[1], 2.0f * t) : mix(palette[1], palette[2], 2.0f * t - 1.0f);
          break;
        }
        case Pattern::checks: {
          const int cu = static_cast<int>(std::floor(u / period));
          const int cv = static_cast<int>(std::floor(v / period));
          c = ((cu + cv) & 1) != 0 ? palette[0] : palette[1];
          if (((cu * 7 + cv * 3) % 5 + 5) % 5 == 0) c = palette[2];
          break;
        }
      }
      for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = c[static_cast<std::size_t>(ch)];
    }
  }
  return img;
}

}  // namespace ostk::scenes
