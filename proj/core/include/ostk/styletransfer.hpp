#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <ATen/ATen.h>

#include "ostk/error.hpp"
#include "ostk/imaging.hpp"
#include "ostk/network.hpp"

namespace ostk {

enum class InitMode { content_clone, noise };

std::string_view to_string(InitMode mode) noexcept;
InitMode parse_init_mode(std::string_view text);  // "content" / "content_clone" / "noise"

struct StyleTransferConfig {
  double alpha = 1.0;  // content weight
  double beta = 1e6;   // style weight
  // Per style layer weight. Empty means uniform 1/|style_layers|.
  std::map<int, double> layer_weights;
  int iterations = 300;
  double step_size = 0.02;
  InitMode init_mode = InitMode::content_clone;
  std::uint64_t seed = 0;
  int log_every = 50;

  // Throws InvalidConfig.
  void validate(const TapSpec& taps) const;
  std::map<int, double> resolved_weights(const TapSpec& taps) const;

  friend bool operator==(const StyleTransferConfig&, const StyleTransferConfig&) = default;
};

// The image being optimized, as a [1,3,H,W] leaf tensor.
struct Pastiche {
  at::Tensor pixels;
  int iteration = 0;

  Image image() const;
};

struct GramMatrix {
  at::Tensor values;  // [C, C], double
  double normalizer = 1.0;  // C * H' * W'
};

struct LossRecord {
  int iteration = 0;
  double content_loss = 0.0;
  double style_loss = 0.0;
  double total_loss = 0.0;

  friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

struct LossTrace {
  std::vector<LossRecord> records;

  // Header "iteration,content_loss,style_loss,total_loss"; values round-trip.
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;

  friend bool operator==(const LossTrace&, const LossTrace&) = default;
};

// Thrown when a loss turns NaN/Inf; carries the records up to and including
// the failing iteration.
class NonFiniteLossError : public Error {
 public:
  NonFiniteLossError(const std::string& message, LossTrace trace)
      : Error(ErrorKind::NonFiniteLoss, message), trace_(std::move(trace)) {}
  const LossTrace& trace() const noexcept { return trace_; }

 private:
  LossTrace trace_;
};

// Differentiable G = F F^T / (C H' W') of a [C, H', W'] activation, in double.
at::Tensor gram_tensor(const at::Tensor& activations);
GramMatrix gram(const FeatureMap& f);

// Mean squared difference, as a differentiable double scalar.
at::Tensor content_loss(const FeatureMap& pastiche, const FeatureMap& content);

// sum_l W_l * mean((G(pastiche_l) - G_S,l)^2)
at::Tensor style_loss(const FeatureSet& pastiche, const std::map<int, GramMatrix>& style_grams,
                      const std::map<int, double>& weights);

double total_loss(double content, double style, const StyleTransferConfig& cfg);
at::Tensor total_loss(const at::Tensor& content, const at::Tensor& style, const StyleTransferConfig& cfg);

Pastiche init_pastiche(const Image& content, InitMode mode, std::uint64_t seed);

// Fixed targets of one run: content activations and style Grams.
struct StyleTargets {
  FeatureMap content;
  std::map<int, GramMatrix> style_grams;
  std::map<int, double> weights;
};

StyleTargets prepare_targets(const FeatureExtractor& model, const Image& content, const Image& style,
                             const StyleTransferConfig& cfg);

struct LossTerms {
  at::Tensor content;
  at::Tensor style;
  at::Tensor total;
};

// Losses of a [1,3,H,W] pixel tensor against fixed targets; differentiable
// with respect to `pixels`.
LossTerms evaluate_losses(const FeatureExtractor& model, const at::Tensor& pixels, const StyleTargets& targets,
                          const StyleTransferConfig& cfg);

struct StylizeResult {
  Image image;
  LossTrace trace;
};

using ProgressCallback = std::function<void(int iteration, const LossRecord& losses, const Image& snapshot)>;

// Adam over the pastiche pixels with a clamp after every step. The trace has
// iterations + 1 records; the last one scores the returned image. The style
// image is resized to the content size first.
StylizeResult stylize(const FeatureExtractor& model, const Image& content, const Image& style,
                      const StyleTransferConfig& cfg, const ProgressCallback& progress = {});

}  // namespace ostk
