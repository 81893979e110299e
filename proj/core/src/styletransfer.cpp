#include "ostk/styletransfer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include <ATen/CPUGeneratorImpl.h>
#include <torch/autograd.h>

namespace ostk {

std::string_view to_string(InitMode mode) noexcept {
  return mode == InitMode::noise ? "noise" : "content";
}

InitMode parse_init_mode(std::string_view text) {
  if (text == "content" || text == "content_clone") return InitMode::content_clone;
  if (text == "noise") return InitMode::noise;
  throw Error(ErrorKind::InvalidConfig, "unknown init mode '" + std::string(text) + "'");
}

void StyleTransferConfig::validate(const TapSpec& taps) const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::InvalidConfig, msg); };
  if (!std::isfinite(alpha) || alpha < 0) fail("alpha must be a finite non-negative number");
  if (!std::isfinite(beta) || beta < 0) fail("beta must be a finite non-negative number");
  if (alpha == 0 && beta == 0) fail("alpha and beta cannot both be zero");
  if (iterations < 0) fail("iterations must be non-negative");
  if (!std::isfinite(step_size) || step_size <= 0) fail("step size must be positive");
  if (log_every <= 0) fail("log_every must be positive");
  if (taps.style_layers.empty()) fail("no style layers");
  if (!layer_weights.empty()) {
    const std::set<int> want(taps.style_layers.begin(), taps.style_layers.end());
    std::set<int> have;
    for (const auto& [layer, w] : layer_weights) {
      if (!std::isfinite(w) || w < 0) fail("layer weight for " + std::to_string(layer) + " is negative");
      have.insert(layer);
    }
    if (have != want) fail("layer weights must cover exactly the style layers");
  }
}

std::map<int, double> StyleTransferConfig::resolved_weights(const TapSpec& taps) const {
  if (!layer_weights.empty()) return layer_weights;
  std::map<int, double> w;
  for (int layer : taps.style_layers) w[layer] = 1.0 / static_cast<double>(taps.style_layers.size());
  return w;
}

Image Pastiche::image() const { return tensor_to_image(pixels); }

std::string LossTrace::to_csv() const {
  std::string out = "iteration,content_loss,style_loss,total_loss\n";
  char line[128];
  for (const auto& r : records) {
    std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g\n", r.iteration, r.content_loss, r.style_loss,
                  r.total_loss);
    out += line;
  }
  return out;
}

void LossTrace::write_csv(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::binary);
  const auto csv = to_csv();
  f.write(csv.data(), static_cast<std::streamsize>(csv.size()));
  if (!f) throw Error(ErrorKind::IoError, "cannot write " + path.string());
}

at::Tensor gram_tensor(const at::Tensor& activations) {
  if (activations.dim() != 3) throw Error(ErrorKind::ShapeMismatch, "expected a [C,H,W] activation");
  const auto c = activations.size(0);
  const auto n = activations.size(1) * activations.size(2);
  const auto f = activations.to(at::kDouble).reshape({c, n});
  return f.mm(f.t()) / static_cast<double>(c * n);
}

GramMatrix gram(const FeatureMap& f) {
  if (!at::isfinite(f.activations).all().item<bool>()) {
    throw Error(ErrorKind::NonFiniteInput, "non-finite activations at layer " + std::to_string(f.layer_index));
  }
  return {gram_tensor(f.activations), static_cast<double>(f.channels() * f.spatial())};
}

at::Tensor content_loss(const FeatureMap& pastiche, const FeatureMap& content) {
  if (!pastiche.activations.sizes().equals(content.activations.sizes())) {
    throw Error(ErrorKind::ShapeMismatch, "content feature shapes differ");
  }
  return (pastiche.activations.to(at::kDouble) - content.activations.to(at::kDouble)).pow(2).mean();
}

at::Tensor style_loss(const FeatureSet& pastiche, const std::map<int, GramMatrix>& style_grams,
                      const std::map<int, double>& weights) {
  const bool same_keys = pastiche.size() == style_grams.size() && pastiche.size() == weights.size() &&
                         std::equal(pastiche.begin(), pastiche.end(), style_grams.begin(),
                                    [](const auto& a, const auto& b) { return a.first == b.first; }) &&
                         std::equal(pastiche.begin(), pastiche.end(), weights.begin(),
                                    [](const auto& a, const auto& b) { return a.first == b.first; });
  if (!same_keys) throw Error(ErrorKind::KeyMismatch, "style layers of features, Grams and weights differ");

  at::Tensor total = at::zeros({}, at::kDouble);
  for (const auto& [layer, fm] : pastiche) {
    const auto& target = style_grams.at(layer).values;
    if (fm.channels() != target.size(0)) {
      throw Error(ErrorKind::ShapeMismatch, "Gram channel counts differ at layer " + std::to_string(layer));
    }
    total = total + weights.at(layer) * (gram_tensor(fm.activations) - target).pow(2).mean();
  }
  return total;
}

double total_loss(double content, double style, const StyleTransferConfig& cfg) {
  return cfg.alpha * content + cfg.beta * style;
}

at::Tensor total_loss(const at::Tensor& content, const at::Tensor& style, const StyleTransferConfig& cfg) {
  return cfg.alpha * content + cfg.beta * style;
}

Pastiche init_pastiche(const Image& content, InitMode mode, std::uint64_t seed) {
  Pastiche p;
  if (mode == InitMode::content_clone) {
    p.pixels = image_to_tensor(content);
  } else {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    p.pixels = at::rand({1, 3, content.height(), content.width()}, gen, at::kFloat);
  }
  return p;
}

StyleTargets prepare_targets(const FeatureExtractor& model, const Image& content, const Image& style,
                             const StyleTransferConfig& cfg) {
  const auto& taps = model.taps();
  cfg.validate(taps);
  const Image& style_sized =
      style.same_shape(content) ? style : resize(style, content.height(), content.width(), ResizeMode::bilinear);

  at::NoGradGuard no_grad;
  StyleTargets t;
  t.weights = cfg.resolved_weights(taps);
  const auto content_feats = extract_features(model, content, false);
  t.content = content_feats.maps.at(taps.content_layer);
  const auto style_feats = extract_features(model, style_sized, false);
  for (int layer : taps.style_layers) t.style_grams[layer] = gram(style_feats.maps.at(layer));
  return t;
}

LossTerms evaluate_losses(const FeatureExtractor& model, const at::Tensor& pixels, const StyleTargets& targets,
                          const StyleTransferConfig& cfg) {
  const auto& taps = model.taps();
  FeatureSet feats = model.extract(pixels);
  FeatureSet style_feats;
  for (int layer : taps.style_layers) style_feats.emplace(layer, feats.at(layer));
  LossTerms terms;
  terms.content = content_loss(feats.at(taps.content_layer), targets.content);
  terms.style = style_loss(style_feats, targets.style_grams, targets.weights);
  terms.total = total_loss(terms.content, terms.style, cfg);
  return terms;
}

namespace {

class Adam {
 public:
  explicit Adam(const at::Tensor& param, double lr)
      : lr_(lr), m_(at::zeros_like(param)), v_(at::zeros_like(param)) {}

  void step(at::Tensor& param, const at::Tensor& grad) {
    ++t_;
    m_.mul_(kBeta1).add_(grad, 1.0 - kBeta1);
    v_.mul_(kBeta2).addcmul_(grad, grad, 1.0 - kBeta2);
    const double bias1 = 1.0 - std::pow(kBeta1, t_);
    const double bias2 = 1.0 - std::pow(kBeta2, t_);
    const auto denom = (v_ / bias2).sqrt_().add_(kEps);
    param.addcdiv_(m_, denom, -lr_ / bias1);
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  double lr_;
  int t_ = 0;
  at::Tensor m_;
  at::Tensor v_;
};

}  // namespace

StylizeResult stylize(const FeatureExtractor& model, const Image& content, const Image& style,
                      const StyleTransferConfig& cfg, const ProgressCallback& progress) {
  const StyleTargets targets = prepare_targets(model, content, style, cfg);
  Pastiche pastiche = init_pastiche(content, cfg.init_mode, cfg.seed);
  at::Tensor x = pastiche.pixels.set_requires_grad(true);
  Adam adam(x, cfg.step_size);
  LossTrace trace;

  for (int it = 0;; ++it) {
    pastiche.iteration = it;
    const auto terms = evaluate_losses(model, x, targets, cfg);
    const LossRecord rec{it, terms.content.item<double>(), terms.style.item<double>(), terms.total.item<double>()};
    trace.records.push_back(rec);
    if (!std::isfinite(rec.total_loss) || !std::isfinite(rec.content_loss) || !std::isfinite(rec.style_loss)) {
      throw NonFiniteLossError("loss became non-finite at iteration " + std::to_string(it), std::move(trace));
    }
    if (progress && (it % cfg.log_every == 0 || it == cfg.iterations)) progress(it, rec, pastiche.image());
    if (it == cfg.iterations) break;

    const auto grad = torch::autograd::grad({terms.total}, {x})[0];
    at::NoGradGuard no_grad;
    adam.step(x, grad);
    x.clamp_(0.0, 1.0);
  }
  return {pastiche.image(), std::move(trace)};
}

}  // namespace ostk
