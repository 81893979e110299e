// Acceptance suite: prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails. `ostk_acceptance 3 5` runs a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <ATen/Parallel.h>
#include <nlohmann/json.hpp>
#include <torch/csrc/autograd/autograd.h>

#include "ostk/blending.hpp"
#include "ostk/imaging.hpp"
#include "ostk/network.hpp"
#include "ostk/pipeline.hpp"
#include "ostk/scenes.hpp"
#include "ostk/styletransfer.hpp"
#include "support.hpp"

#ifndef OSTK_CLI_PATH
#error "OSTK_CLI_PATH must name the ostk executable"
#endif

namespace fs = std::filesystem;
using namespace ostk;

namespace {

// Pinned tolerances and fixture parameters.
constexpr int kOracleCases = 1000;
constexpr double kOracleRelTol = 1e-6;
constexpr double kFdStep = 1e-3;
constexpr int kFdPixels = 120;
constexpr double kFdRelTol = 1e-4;
constexpr int kDescentSide = 128;
constexpr int kDescentIterations = 200;
constexpr double kDescentTotalRatio = 0.5;
constexpr double kDescentStyleRatio = 0.5;
constexpr int kMultiLongSide = 512;
constexpr double kMultiMinMeanDiff = 0.02;
constexpr double kMultiMaxSeconds = 15 * 60;
constexpr int kBlendCases = 1000;
constexpr std::int64_t kSelfCompositeUlps = 1;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

const BackboneModel& fixture_model() {
  static const BackboneModel model = load_model(ostk::testing::fixture_weights());
  return model;
}

double rel_err(double got, double want) {
  if (want == 0.0) return got == 0.0 ? 0.0 : std::abs(got);
  return std::abs(got - want) / std::abs(want);
}

std::vector<double> to_vector(const at::Tensor& t) {
  const auto c = t.contiguous().to(at::kDouble);
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

// 1. Loss math against scalar-loop oracles.
Outcome loss_oracles() {
  std::mt19937_64 rng(20240601);
  std::uniform_int_distribution<int> cdist(1, 4), sdist(1, 6), ldist(1, 3);
  std::uniform_real_distribution<float> vdist(-3.0f, 3.0f);
  std::uniform_real_distribution<double> wdist(0.0, 2.0), adist(0.0, 10.0), bdist(0.0, 1e6);
  double worst = 0.0;
  std::string worst_what;
  auto track = [&](double err, const char* what) {
    if (err > worst) {
      worst = err;
      worst_what = what;
    }
  };
  auto random_values = [&](std::size_t n) {
    std::vector<float> v(n);
    for (auto& x : v) x = vdist(rng);
    return v;
  };

  for (int n = 0; n < kOracleCases; ++n) {
    const int c = cdist(rng), h = sdist(rng), w = sdist(rng);
    const auto size = static_cast<std::size_t>(c * h * w);
    const auto fa = random_values(size), fb = random_values(size);

    const auto g = to_vector(gram(ostk::testing::make_feature(fa, c, h, w)).values);
    const auto go = ostk::testing::oracle::gram(fa, c, h * w);
    double gmax = 0.0, gdiff = 0.0;
    for (std::size_t i = 0; i < go.size(); ++i) {
      gmax = std::max(gmax, std::abs(go[i]));
      gdiff = std::max(gdiff, std::abs(g[i] - go[i]));
    }
    track(gmax > 0 ? gdiff / gmax : gdiff, "gram");

    const double lc = content_loss(ostk::testing::make_feature(fa, c, h, w), ostk::testing::make_feature(fb, c, h, w))
                          .item<double>();
    const double lco = ostk::testing::oracle::content_loss(fa, fb);
    track(rel_err(lc, lco), "content_loss");

    FeatureSet pastiche;
    std::map<int, GramMatrix> targets;
    std::map<int, double> weights;
    double lso = 0.0;
    const int layers = ldist(rng);
    for (int l = 0; l < layers; ++l) {
      const int lc_ = cdist(rng), lh = sdist(rng), lw = sdist(rng);
      const auto ls = static_cast<std::size_t>(lc_ * lh * lw);
      const auto p = random_values(ls), s = random_values(ls);
      pastiche.emplace(l, ostk::testing::make_feature(p, lc_, lh, lw, l));
      targets[l] = gram(ostk::testing::make_feature(s, lc_, lh, lw, l));
      weights[l] = wdist(rng);
      lso += weights[l] * ostk::testing::oracle::gram_mse(ostk::testing::oracle::gram(p, lc_, lh * lw),
                                                    ostk::testing::oracle::gram(s, lc_, lh * lw));
    }
    const double lsv = style_loss(pastiche, targets, weights).item<double>();
    track(rel_err(lsv, lso), "style_loss");

    StyleTransferConfig cfg;
    cfg.alpha = adist(rng);
    cfg.beta = bdist(rng);
    const double lt = total_loss(lc, lsv, cfg);
    const double lto = cfg.alpha * lco + cfg.beta * lso;
    track(rel_err(lt, lto), "total_loss(double)");
    const double ltt = total_loss(at::scalar_tensor(lc, at::kDouble), at::scalar_tensor(lsv, at::kDouble), cfg)
                           .item<double>();
    track(rel_err(ltt, lto), "total_loss(tensor)");
  }
  return {worst < kOracleRelTol,
          fmt("%d cases, max relative error %.3g (%s), tolerance %.0e", kOracleCases, worst,
              worst_what.empty() ? "-" : worst_what.c_str(), kOracleRelTol)};
}

// 2. Analytic pixel gradients of the total loss against central differences.
Outcome gradient_check() {
  const ostk::testing::TinyBackbone net;
  const auto content = ostk::testing::random_image(32, 32, 101);
  const auto style = ostk::testing::random_image(32, 32, 102, 0.2f, 0.8f);
  StyleTransferConfig cfg;
  const auto targets = prepare_targets(net, content, style, cfg);

  const auto start = image_to_tensor(ostk::testing::random_image(32, 32, 103)).to(at::kDouble);
  const auto x = start.clone().requires_grad_(true);
  const auto grad = torch::autograd::grad({evaluate_losses(net, x, targets, cfg).total}, {x})[0];

  auto loss_at = [&](const at::Tensor& t) { return evaluate_losses(net, t, targets, cfg).total.item<double>(); };
  std::mt19937_64 rng(7);
  double worst = 0.0;
  for (int n = 0; n < kFdPixels; ++n) {
    const auto c = static_cast<std::int64_t>(rng() % 3);
    const auto y = static_cast<std::int64_t>(rng() % 32);
    const auto xx = static_cast<std::int64_t>(rng() % 32);
    auto plus = start.clone(), minus = start.clone();
    plus[0][c][y][xx] += kFdStep;
    minus[0][c][y][xx] -= kFdStep;
    const double fd = (loss_at(plus) - loss_at(minus)) / (2 * kFdStep);
    const double an = grad[0][c][y][xx].item<double>();
    worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-300}));
  }
  return {worst < kFdRelTol, fmt("%d pixels, h=%.0e, max relative error %.3g, tolerance %.0e", kFdPixels, kFdStep,
                                 worst, kFdRelTol)};
}

// 3. Default settings reduce the loss on a small content/style pair.
Outcome descent() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto scene = scenes::render({.height = kDescentSide, .width = kDescentSide, .vases = 1, .birds = 0,
                                     .min_object = 40, .max_object = 100, .seed = 3});
  const auto style = scenes::pattern(scenes::Pattern::stripes, kDescentSide, kDescentSide, 9);
  StyleTransferConfig cfg;
  cfg.iterations = kDescentIterations;
  const auto r = stylize(fixture_model(), scene.image, style, cfg);
  const auto& first = r.trace.records.front();
  const auto& last = r.trace.records.back();
  const double total_ratio = last.total_loss / first.total_loss;
  const double style_ratio = last.style_loss / first.style_loss;
  return {total_ratio < kDescentTotalRatio && style_ratio <= kDescentStyleRatio,
          fmt("total %.4g -> %.4g (x%.3f, need < %.2f), style %.4g -> %.4g (x%.3f, need <= %.2f), %.1fs",
              first.total_loss, last.total_loss, total_ratio, kDescentTotalRatio, first.style_loss,
              last.style_loss, style_ratio, kDescentStyleRatio, seconds_since(t0))};
}

struct MaskedDiff {
  std::size_t outside = 0;
  std::size_t mismatched = 0;
};

MaskedDiff background_check(const Image& expected, const Image& final_image, const BinaryMask& union_mask) {
  MaskedDiff d;
  for (int y = 0; y < expected.height(); ++y) {
    for (int x = 0; x < expected.width(); ++x) {
      if (union_mask.at(y, x)) continue;
      ++d.outside;
      for (int c = 0; c < 3; ++c) d.mismatched += final_image.at(y, x, c) != expected.at(y, x, c);
    }
  }
  return d;
}

BinaryMask union_of_job_masks(const fs::path& out, std::size_t jobs, int h, int w) {
  BinaryMask all(h, w);
  for (std::size_t k = 0; k < jobs; ++k) {
    const auto p = out / ("job_" + std::to_string(k) + "_mask.png");
    if (fs::exists(p)) all = mask_union(all, load_mask(p));
  }
  return all;
}

// 4. Pixels outside every target mask are untouched.
Outcome object_preservation() {
  ostk::testing::TempDir dir("accept4");
  const auto scene = scenes::render({.height = 360, .width = 540, .vases = 2, .birds = 1, .seed = 44});
  save_image(scene.image, dir / "content.png");
  save_image(scenes::pattern(scenes::Pattern::checks, 200, 200, 5), dir / "s1.png");
  save_image(scenes::pattern(scenes::Pattern::waves, 200, 200, 6), dir / "s2.png");
  RunOptions opts;
  opts.long_side = 384;
  opts.style.iterations = 30;
  const auto out = dir / "out";
  const auto manifest =
      run(fixture_model(), dir / "content.png", {{dir / "s1.png", "vase"}, {dir / "s2.png", "bird"}}, opts, out);

  const auto expected =
      ostk::testing::quantized(resize(load_image(dir / "content.png"), manifest.extent.height, manifest.extent.width));
  const auto all = union_of_job_masks(out, manifest.jobs.size(), manifest.extent.height, manifest.extent.width);
  const auto d = background_check(expected, load_image(out / "final.png"), all);
  return {d.mismatched == 0 && d.outside > 0 && all.coverage() > 0,
          fmt("%zu background pixels checked at %dx%d, %zu mismatched samples, target coverage %.3f", d.outside,
              manifest.extent.height, manifest.extent.width, d.mismatched, all.coverage())};
}

// 5. Three vases, three styles, ordinal selectors.
Outcome multi_object_multi_style() {
  const auto t0 = std::chrono::steady_clock::now();
  ostk::testing::TempDir dir("accept5");
  const auto scene = scenes::render({.height = 480, .width = 720, .vases = 3, .birds = 0, .min_object = 90,
                                     .max_object = 220, .seed = 2024});
  save_image(scene.image, dir / "content.png");
  const std::vector<scenes::Pattern> kinds{scenes::Pattern::stripes, scenes::Pattern::dots, scenes::Pattern::waves};
  std::vector<StyleJob> jobs;
  for (std::size_t k = 0; k < 3; ++k) {
    const auto p = dir / ("style" + std::to_string(k) + ".png");
    save_image(scenes::pattern(kinds[k], 256, 256, 10 + k), p);
    jobs.push_back({p, "vase:" + std::to_string(k)});
  }
  RunOptions opts;
  opts.long_side = kMultiLongSide;
  const auto out = dir / "out";
  const auto manifest = run(fixture_model(), dir / "content.png", jobs, opts, out);
  const double elapsed = seconds_since(t0);

  const int h = manifest.extent.height, w = manifest.extent.width;
  std::size_t vases = 0;
  for (const auto& d : manifest.detections) vases += d.class_label == "vase";

  std::vector<BinaryMask> masks;
  std::vector<Image> styled;
  for (std::size_t k = 0; k < 3; ++k) {
    masks.push_back(load_mask(out / ("job_" + std::to_string(k) + "_mask.png")));
    styled.push_back(load_image(out / ("job_" + std::to_string(k) + "_styled_full.png")));
  }
  double min_diff = 1e9;
  std::string diffs;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = i + 1; j < 3; ++j) {
      const auto region = mask_union(masks[i], masks[j]);
      double acc = 0;
      std::size_t n = 0;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          if (!region.at(y, x)) continue;
          for (int c = 0; c < 3; ++c) acc += std::abs(styled[i].at(y, x, c) - styled[j].at(y, x, c));
          n += 3;
        }
      }
      const double mean = n ? acc / static_cast<double>(n) : 0.0;
      min_diff = std::min(min_diff, mean);
      diffs += fmt("%s(%zu,%zu)=%.3f", diffs.empty() ? "" : " ", i, j, mean);
    }
  }
  const std::set<std::size_t> distinct_targets{manifest.jobs[0].detections.at(0), manifest.jobs[1].detections.at(0),
                                               manifest.jobs[2].detections.at(0)};

  const auto expected = ostk::testing::quantized(resize(load_image(dir / "content.png"), h, w));
  const auto d = background_check(expected, load_image(out / "final.png"), union_of_job_masks(out, 3, h, w));

  const bool pass = vases >= 3 && distinct_targets.size() == 3 && min_diff > kMultiMinMeanDiff && d.mismatched == 0 &&
                    elapsed < kMultiMaxSeconds;
  return {pass, fmt("%zu vase detections at %dx%d, pairwise mean |diff| %s (need > %.2f), %zu background "
                    "mismatches, %.0fs (limit %.0fs)",
                    vases, h, w, diffs.c_str(), kMultiMinMeanDiff, d.mismatched, elapsed, kMultiMaxSeconds)};
}

// 6. Segmentation and feature extraction read the same weight tensors.
Outcome single_network() {
  const auto& model = fixture_model();
  const auto net = model.network();
  std::set<const void*> seg;
  for (const auto& p : model.segmentation_parameters()) seg.insert(p.data_ptr());
  const auto feat = model.feature_parameters();
  std::size_t shared = 0;
  for (const auto& p : feat) shared += seg.count(p.data_ptr());

  std::size_t hooks_in_net = 0;
  for (const auto& hook : model.hooks()) hooks_in_net += hook.module.get() == net->layer(hook.layer_index).get();

  const BackboneModel copy = model;
  const bool same_net = copy.network().get() == net.get();

  // A weight edit through the segmentation network is visible to the feature path.
  const auto img = ostk::testing::random_image(64, 64, 6);
  const auto before = extract_features(model, img, false).maps.at(model.taps().content_layer).activations.clone();
  auto first = net->layer(0)->parameters().front();
  const auto saved = first.detach().clone();
  {
    at::NoGradGuard ng;
    first.mul_(2.0);
  }
  const auto after = extract_features(model, img, false).maps.at(model.taps().content_layer).activations.clone();
  {
    at::NoGradGuard ng;
    first.copy_(saved);
  }
  const bool observed = !at::equal(before, after);

  const bool pass = !feat.empty() && shared == feat.size() && hooks_in_net == model.hooks().size() && same_net &&
                    observed;
  return {pass, fmt("%zu/%zu feature tensors alias segmentation storage, %zu/%zu tap hooks inside the segmentation "
                    "network, copies share one network: %s, weight edit seen by feature path: %s",
                    shared, feat.size(), hooks_in_net, model.hooks().size(), same_net ? "yes" : "no",
                    observed ? "yes" : "no")};
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// 7. Two CLI runs with identical argv produce identical bytes.
Outcome determinism() {
  ostk::testing::TempDir dir("accept7");
  save_image(scenes::render({.height = 256, .width = 320, .vases = 2, .birds = 1, .seed = 12}).image,
             dir / "content.png");
  save_image(scenes::pattern(scenes::Pattern::dots, 160, 160, 3), dir / "s1.png");
  save_image(scenes::pattern(scenes::Pattern::stripes, 160, 160, 4), dir / "s2.png");
  const auto out = dir / "out";
  std::ostringstream cmd;
  cmd << '"' << OSTK_CLI_PATH << "\" stylize --content \"" << (dir / "content.png").string() << "\" --style \""
      << (dir / "s1.png").string() << "\" --target vase:0 --style \"" << (dir / "s2.png").string()
      << "\" --target bird --weights \"" << ostk::testing::fixture_weights().string() << "\" --out \"" << out.string()
      << "\" --size 320 --iters 60 --init noise --seed 0 --threads 1 > \"" << (dir / "log.txt").string()
      << "\" 2>&1";

  std::vector<std::map<std::string, std::string>> runs;
  for (int i = 0; i < 2; ++i) {
    fs::remove_all(out);
    const int rc = std::system(cmd.str().c_str());
    if (rc != 0) return {false, fmt("run %d exited with status %d: %s", i + 1, rc, read_bytes(dir / "log.txt").c_str())};
    std::map<std::string, std::string> files;
    for (const char* f : {"final.png", "job_0_loss.csv", "job_1_loss.csv"}) files[f] = read_bytes(out / f);
    runs.push_back(std::move(files));
  }
  std::string differing;
  for (const auto& [name, bytes] : runs[0]) {
    if (bytes.empty() || bytes != runs[1].at(name)) differing += " " + name;
  }
  return {differing.empty(), differing.empty() ? "final.png, job_0_loss.csv, job_1_loss.csv bit-identical across two runs"
                                               : "differs or missing:" + differing};
}

// 8. Composite/isolate algebra on random inputs.
Outcome blending_algebra() {
  std::mt19937_64 rng(88);
  std::uniform_int_distribution<int> side(1, 24);
  std::size_t failures = 0;
  std::string first_failure;
  auto fail = [&](const std::string& what, int n) {
    if (failures++ == 0) first_failure = what + " (case " + std::to_string(n) + ")";
  };
  for (int n = 0; n < kBlendCases; ++n) {
    const int h = side(rng), w = side(rng);
    const std::uint64_t s = rng();
    const auto o = ostk::testing::random_image(h, w, s);
    const auto st = ostk::testing::random_image(h, w, s + 1);
    const auto bin = ostk::testing::random_binary_mask(h, w, s + 2, 0.3 + 0.4 * (n % 3) / 2.0);
    const auto soft = ostk::testing::random_soft_mask(h, w, s + 3);
    const Mask m = bin.to_mask();

    if (composite(o, st, Mask(h, w, 0.0f)) != o) fail("zero mask is not the identity", n);
    if (composite(o, st, Mask(h, w, 1.0f)) != st) fail("full mask is not the replacement", n);
    if (isolate(st, Mask(h, w, 1.0f)) != st) fail("isolate with full mask changed the image", n);
    if (isolate(st, Mask(h, w, 0.0f)) != Image(h, w, 0.0f)) fail("isolate with zero mask is not black", n);

    const auto c = composite(o, st, m);
    const auto iso = isolate(st, m);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int ch = 0; ch < 3; ++ch) {
          if (bin.at(y, x) == 0 && c.at(y, x, ch) != o.at(y, x, ch)) fail("background changed", n);
          if (bin.at(y, x) == 1 && c.at(y, x, ch) != iso.at(y, x, ch)) fail("foreground differs from isolate", n);
        }
      }
    }

    // Disjoint masks: split a random mask into two.
    const auto splitter = ostk::testing::random_binary_mask(h, w, s + 4);
    Mask m1(h, w), m2(h, w);
    for (std::size_t i = 0; i < bin.values.size(); ++i) {
      if (bin.values[i]) (splitter.values[i] ? m1 : m2).values[i] = 1.0f;
    }
    const auto st2 = ostk::testing::random_image(h, w, s + 5);
    if (composite(composite(o, st, m1), st2, m2) != composite(composite(o, st2, m2), st, m1)) {
      fail("disjoint composites do not commute", n);
    }

    for (const Mask* mask : {&m, &soft}) {
      const auto self = composite(o, o, *mask);
      for (std::size_t i = 0; i < o.size(); ++i) {
        if (ostk::testing::ulp_distance(self.pixels()[i], o.pixels()[i]) > kSelfCompositeUlps) fail("self-composite", n);
      }
      const auto mixed = composite(o, st, *mask);
      for (float v : mixed.pixels()) {
        if (!(v >= 0.0f && v <= 1.0f)) fail("range", n);
      }
    }
  }
  return {failures == 0, failures == 0 ? fmt("%d randomized cases, identity/background/isolate exact, disjoint "
                                             "commutativity exact, self-composite within %lld ulp, range kept",
                                             kBlendCases, static_cast<long long>(kSelfCompositeUlps))
                                       : fmt("%zu violations, first: %s", failures, first_failure.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  at::set_num_threads(1);
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"loss-math oracle equivalence", loss_oracles},
      {"gradient correctness", gradient_check},
      {"descent fixture", descent},
      {"object preservation", object_preservation},
      {"multi-object multi-style", multi_object_multi_style},
      {"single-network invariant", single_network},
      {"determinism", determinism},
      {"blending algebra", blending_algebra},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s criterion %d (%s): %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first,
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
