#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <torch/nn/module.h>
#include <torch/nn/modules/batchnorm.h>
#include <torch/nn/modules/container/modulelist.h>
#include <torch/nn/modules/container/sequential.h>
#include <torch/nn/modules/conv.h>
#include <torch/nn/modules/pooling.h>

namespace ostk::yolo {

// Layers 0..9 form the backbone, 10..21 the feature-pyramid neck, 22 the
// segmentation head. Indices follow the published model definition.
inline constexpr int kBackboneLayers = 10;
inline constexpr int kLayerCount = 23;
inline constexpr int kHeadIndex = 22;
inline constexpr int kRegMax = 16;
inline constexpr int kInputStride = 32;
inline constexpr std::array<int, 3> kLevelStrides = {8, 16, 32};

// Channel widths and block repeats of one YOLOv8-seg variant.
struct ArchSpec {
  std::array<int, kLayerCount - 1> channels{};  // output channels, 0 for parameterless layers
  std::array<int, kLayerCount - 1> repeats{};   // bottleneck count for C2f layers, else 0
  int num_classes = 80;
  int num_masks = 32;
  int proto_channels = 256;

  // Standard compound scaling (depth multiple, width multiple, channel cap).
  static ArchSpec from_scale(double depth, double width, int max_channels, int num_classes = 80);
  // One of the published variants: 'n', 's', 'm', 'l', 'x'.
  static ArchSpec variant(char scale, int num_classes = 80);
  // Recovers the spec from checkpoint tensor shapes. Throws ArchitectureMismatch.
  static ArchSpec infer(const std::map<std::string, at::Tensor>& tensors);

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

// The 80 COCO category names in model output order.
const std::vector<std::string>& coco_class_names();

// Cumulative stride of the output of backbone layer `index`.
int backbone_stride(int index);

// Conv2d (no bias) -> BatchNorm2d -> SiLU.
class ConvBnActImpl : public torch::nn::Module {
 public:
  ConvBnActImpl(int in, int out, int kernel = 1, int stride = 1);
  at::Tensor forward(const at::Tensor& x);

  torch::nn::Conv2d conv{nullptr};
  torch::nn::BatchNorm2d bn{nullptr};
};
TORCH_MODULE(ConvBnAct);

class BottleneckImpl : public torch::nn::Module {
 public:
  BottleneckImpl(int in, int out, bool shortcut);
  at::Tensor forward(const at::Tensor& x);

  ConvBnAct cv1{nullptr};
  ConvBnAct cv2{nullptr};
  bool add = false;
};
TORCH_MODULE(Bottleneck);

// Cross-stage partial block with two convolutions ("C2f").
class C2fImpl : public torch::nn::Module {
 public:
  C2fImpl(int in, int out, int repeats, bool shortcut);
  at::Tensor forward(const at::Tensor& x);

  ConvBnAct cv1{nullptr};
  ConvBnAct cv2{nullptr};
  torch::nn::ModuleList m{nullptr};
  int hidden = 0;
};
TORCH_MODULE(C2f);

// Spatial pyramid pooling, fast variant (three chained 5x5 max pools).
class SppfImpl : public torch::nn::Module {
 public:
  SppfImpl(int in, int out);
  at::Tensor forward(const at::Tensor& x);

  ConvBnAct cv1{nullptr};
  ConvBnAct cv2{nullptr};
  torch::nn::MaxPool2d pool{nullptr};
};
TORCH_MODULE(Sppf);

// Mask prototype generator fed by the stride-8 pyramid level.
class ProtoImpl : public torch::nn::Module {
 public:
  ProtoImpl(int in, int hidden, int masks);
  at::Tensor forward(const at::Tensor& x);

  ConvBnAct cv1{nullptr};
  torch::nn::ConvTranspose2d upsample{nullptr};
  ConvBnAct cv2{nullptr};
  ConvBnAct cv3{nullptr};
};
TORCH_MODULE(Proto);

// Raw per-level head outputs (logits), before decoding.
struct HeadOutput {
  std::vector<at::Tensor> box;    // [B, 4*kRegMax, h, w] per level
  std::vector<at::Tensor> cls;    // [B, nc, h, w]
  std::vector<at::Tensor> coeff;  // [B, nm, h, w]
  at::Tensor proto;               // [B, nm, H/4, W/4]
};

// Decoded predictions over all anchors of all levels.
struct Predictions {
  at::Tensor boxes;    // [B, A, 4] xyxy in input pixels
  at::Tensor scores;   // [B, A, nc] sigmoid class scores
  at::Tensor coeffs;   // [B, A, nm]
  at::Tensor proto;    // [B, nm, H/4, W/4]
  at::Tensor anchors;  // [A, 2] anchor centres in grid units
  at::Tensor strides;  // [A]
};

// Distribution focal layer: expectation over kRegMax bins per box side.
class DflImpl : public torch::nn::Module {
 public:
  DflImpl();
  at::Tensor forward(const at::Tensor& x);  // [B, 4*kRegMax, A] -> [B, 4, A]

  torch::nn::Conv2d conv{nullptr};
};
TORCH_MODULE(Dfl);

class SegmentHeadImpl : public torch::nn::Module {
 public:
  SegmentHeadImpl(int num_classes, int num_masks, int proto_channels, const std::array<int, 3>& in_channels);
  HeadOutput forward(const std::array<at::Tensor, 3>& levels);
  Predictions decode(const HeadOutput& raw);

  torch::nn::ModuleList cv2{nullptr};  // box distribution branch
  torch::nn::ModuleList cv3{nullptr};  // class branch
  torch::nn::ModuleList cv4{nullptr};  // mask-coefficient branch
  Dfl dfl{nullptr};
  Proto proto{nullptr};
  int num_classes = 0;
  int num_masks = 0;
};
TORCH_MODULE(SegmentHead);

// The complete YOLOv8 segmentation network. Parameter names match the
// published checkpoints ("model.<layer>.<...>").
class YoloSegNetImpl : public torch::nn::Module {
 public:
  explicit YoloSegNetImpl(const ArchSpec& spec);

  const ArchSpec& spec() const noexcept { return spec_; }

  // Runs backbone layers 0..last and returns every intermediate output.
  std::vector<at::Tensor> backbone(const at::Tensor& x, int last = kBackboneLayers - 1);

  HeadOutput forward(const at::Tensor& x);

  SegmentHead& head() noexcept { return head_; }

  // Module at a top-level layer index (parameterless layers included).
  std::shared_ptr<torch::nn::Module> layer(int index) const;

  // Copies weights from a flat state dict. Every parameter and buffer must be
  // present with a matching shape; "num_batches_tracked" is optional.
  void load_tensors(const std::map<std::string, at::Tensor>& tensors);
  std::map<std::string, at::Tensor> export_tensors() const;

 private:
  at::Tensor run_layer(int index, const at::Tensor& x);

  ArchSpec spec_;
  torch::nn::ModuleList model_{nullptr};
  std::map<int, ConvBnAct> convs_;
  std::map<int, C2f> c2fs_;
  Sppf sppf_{nullptr};
  SegmentHead head_{nullptr};
};
TORCH_MODULE(YoloSegNet);

}  // namespace ostk::yolo
