#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <ATen/ATen.h>

#include "ostk/imaging.hpp"
#include "ostk/mask.hpp"
#include "ostk/yolo.hpp"

namespace ostk {

// Backbone layers whose activations feed the losses. Indices are 0-based over
// the top-level layer sequence of the backbone (0..9).
struct TapSpec {
  int content_layer = 7;
  std::vector<int> style_layers = {1, 3, 5, 7};

  // Sorted union of the content layer and the style layers.
  std::vector<int> layers() const;

  friend bool operator==(const TapSpec&, const TapSpec&) = default;
};

struct FeatureMap {
  int layer_index = -1;
  at::Tensor activations;  // [C, H', W']
  bool differentiable = false;

  std::int64_t channels() const { return activations.size(0); }
  std::int64_t spatial() const { return activations.size(1) * activations.size(2); }
};

using FeatureSet = std::map<int, FeatureMap>;

// Anything that maps an image tensor to tapped activations. Implemented by
// the segmentation network's backbone and by small stand-in networks in tests.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;

  virtual const TapSpec& taps() const = 0;

  // `pixels` is [1, 3, H, W] in [0,1]. Activations keep their autograd
  // history when `pixels` requires grad.
  virtual FeatureSet extract(const at::Tensor& pixels) const = 0;

  // Spatial sizes must be multiples of this.
  virtual int input_stride() const { return 1; }
};

struct Features {
  at::Tensor input;  // the [1,3,H,W] tensor the activations were computed from
  FeatureSet maps;
};

// Throws ShapeError for inputs that are not stride multiples and
// NonFiniteActivation when any activation is NaN/Inf.
Features extract_features(const FeatureExtractor& model, const Image& img, bool require_grad);

struct BoundingBox {
  float x1 = 0, y1 = 0, x2 = 0, y2 = 0;
};

struct Detection {
  Mask mask;  // soft, image resolution
  std::string class_label;
  int class_id = -1;
  float confidence = 0.0f;
  BoundingBox bbox;
};

enum class Device { cpu, accelerator };

// A forward hook on one backbone layer.
struct TapHook {
  int layer_index = -1;
  std::shared_ptr<torch::nn::Module> module;
};

// The pretrained segmentation network, loaded once and shared (immutably) by
// both segmentation and style-feature extraction. Copies share the weights.
class BackboneModel final : public FeatureExtractor {
 public:
  BackboneModel(yolo::YoloSegNet net, std::vector<std::string> class_names, TapSpec taps,
                std::string weights_source, Device device = Device::cpu);

  const TapSpec& taps() const override;
  FeatureSet extract(const at::Tensor& pixels) const override;
  int input_stride() const override { return yolo::kInputStride; }

  const std::vector<TapHook>& hooks() const;
  const std::vector<std::string>& class_names() const;
  const std::string& weights_source() const;
  Device device() const;
  yolo::YoloSegNet network() const;

  // Instance segmentation through the full network. Images whose sides are
  // not stride multiples are padded (grey) and the masks cropped back.
  std::vector<Detection> segment(const Image& img, float conf_threshold = 0.5f, float iou_threshold = 0.7f,
                                 int max_detections = 300) const;

  std::size_t segment_calls() const;

  // Parameter tensors each path reads; both views alias the same storage.
  std::vector<at::Tensor> segmentation_parameters() const;
  std::vector<at::Tensor> feature_parameters() const;

 private:
  struct State;
  std::shared_ptr<State> state_;
};

// Loads a native or Ultralytics checkpoint, validates the taps against the
// backbone and freezes every weight. Throws WeightsNotFound,
// ArchitectureMismatch or LoadFailure.
BackboneModel load_model(const std::filesystem::path& weights, const TapSpec& taps = {},
                         Device device = Device::cpu);

std::vector<Detection> segment(const BackboneModel& model, const Image& img, float conf_threshold = 0.5f);

// Selector grammar: "<class>", "<index>" or "<class>:<ordinal>". Indices and
// ordinals are 0-based positions in confidence order.
struct TargetSelector {
  std::optional<std::string> class_label;
  std::optional<int> index;

  static TargetSelector parse(std::string_view text);  // throws SelectorParseError
  std::string to_string() const;
};

// Positions (into `detections`) of the matching detections, order preserved.
std::vector<std::size_t> match_targets(const std::vector<Detection>& detections, const TargetSelector& selector);
std::vector<Detection> select_targets(const std::vector<Detection>& detections, const TargetSelector& selector);

// [1,3,H,W] float tensor <-> Image.
at::Tensor image_to_tensor(const Image& img);
Image tensor_to_image(const at::Tensor& pixels);

}  // namespace ostk
