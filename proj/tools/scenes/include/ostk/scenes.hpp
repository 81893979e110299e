#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ostk/imaging.hpp"
#include "ostk/mask.hpp"
#include "ostk/network.hpp"

// Procedural still lifes (vases, birds) with exact instance masks. Used to
// train the test fixture network and as test inputs.
namespace ostk::scenes {

inline constexpr int kBirdClass = 14;
inline constexpr int kVaseClass = 75;

struct SceneObject {
  int class_id = -1;
  BoundingBox box;
  Mask mask;
};

struct Scene {
  Image image;
  std::vector<SceneObject> objects;
};

struct SceneSpec {
  int height = 320;
  int width = 320;
  int vases = -1;  // -1 picks 0..3 at random
  int birds = -1;  // -1 picks 0..1 at random
  int min_object = 48;
  int max_object = 150;
  std::uint64_t seed = 0;
};

Scene render(const SceneSpec& spec);

// A flat mid-grey image.
Image blank(int height, int width, float level = 0.5f);

enum class Pattern { stripes, dots, waves, checks };

// Texture used as a style image; distinct patterns and palettes per seed.
Image pattern(Pattern kind, int height, int width, std::uint64_t seed);

}  // namespace ostk::scenes
