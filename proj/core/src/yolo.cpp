#include "ostk/yolo.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <ATen/ATen.h>
#include <torch/nn/functional/activation.h>
#include <torch/nn/modules/upsampling.h>
#include <torch/nn/modules/linear.h>
#include <torch/utils.h>

#include "ostk/error.hpp"

namespace ostk::yolo {
namespace {

// Base widths/repeats of the published model definition, before scaling.
constexpr std::array<int, kLayerCount - 1> kBaseChannels = {64,  128, 128, 256, 256, 512, 512, 1024, 1024, 1024, 0,
                                                            0,   512, 0,   0,   256, 256, 0,   512,  512,  0,    1024};
constexpr std::array<int, kLayerCount - 1> kBaseRepeats = {0, 0, 3, 0, 6, 0, 6, 0, 3, 0, 0,
                                                           0, 3, 0, 0, 3, 0, 0, 3, 0, 0, 3};
constexpr std::array<int, 7> kConvLayers = {0, 1, 3, 5, 7, 16, 19};
constexpr std::array<int, 8> kC2fLayers = {2, 4, 6, 8, 12, 15, 18, 21};
constexpr int kSppfLayer = 9;

int make_divisible(double x, int divisor = 8) { return static_cast<int>(std::ceil(x / divisor)) * divisor; }

const at::Tensor& require(const std::map<std::string, at::Tensor>& tensors, const std::string& key) {
  const auto it = tensors.find(key);
  if (it == tensors.end()) {
    throw Error(ErrorKind::ArchitectureMismatch, "checkpoint lacks '" + key + "' (not a YOLOv8 segmentation model?)");
  }
  return it->second;
}

int count_children(const std::map<std::string, at::Tensor>& tensors, const std::string& prefix) {
  std::set<std::string> children;
  for (auto it = tensors.lower_bound(prefix); it != tensors.end() && it->first.compare(0, prefix.size(), prefix) == 0;
       ++it) {
    const auto rest = it->first.substr(prefix.size());
    children.insert(rest.substr(0, rest.find('.')));
  }
  return static_cast<int>(children.size());
}

torch::nn::Sequential head_branch(int in, int hidden, int out) {
  return torch::nn::Sequential(ConvBnAct(in, hidden, 3), ConvBnAct(hidden, hidden, 3),
                               torch::nn::Conv2d(torch::nn::Conv2dOptions(hidden, out, 1)));
}

}  // namespace

ArchSpec ArchSpec::from_scale(double depth, double width, int max_channels, int num_classes) {
  ArchSpec spec;
  for (std::size_t i = 0; i < spec.channels.size(); ++i) {
    if (kBaseChannels[i] > 0) spec.channels[i] = make_divisible(std::min(kBaseChannels[i], max_channels) * width);
    if (kBaseRepeats[i] > 0) spec.repeats[i] = std::max(static_cast<int>(std::lround(kBaseRepeats[i] * depth)), 1);
  }
  spec.num_classes = num_classes;
  spec.num_masks = 32;
  spec.proto_channels = make_divisible(std::min(256, max_channels) * width);
  return spec;
}

ArchSpec ArchSpec::variant(char scale, int num_classes) {
  switch (scale) {
    case 'n': return from_scale(0.33, 0.25, 1024, num_classes);
    case 's': return from_scale(0.33, 0.50, 1024, num_classes);
    case 'm': return from_scale(0.67, 0.75, 768, num_classes);
    case 'l': return from_scale(1.00, 1.00, 512, num_classes);
    case 'x': return from_scale(1.00, 1.25, 512, num_classes);
    default:
      throw Error(ErrorKind::ArchitectureMismatch, std::string("unknown model scale '") + scale + "'");
  }
}

ArchSpec ArchSpec::infer(const std::map<std::string, at::Tensor>& tensors) {
  ArchSpec spec;
  auto layer = [](int i) { return "model." + std::to_string(i) + "."; };
  for (int i : kConvLayers) spec.channels[i] = static_cast<int>(require(tensors, layer(i) + "conv.weight").size(0));
  for (int i : kC2fLayers) {
    spec.channels[i] = static_cast<int>(require(tensors, layer(i) + "cv2.conv.weight").size(0));
    spec.repeats[i] = count_children(tensors, layer(i) + "m.");
  }
  spec.channels[kSppfLayer] = static_cast<int>(require(tensors, layer(kSppfLayer) + "cv2.conv.weight").size(0));
  const std::string head = layer(kHeadIndex);
  spec.num_classes = static_cast<int>(require(tensors, head + "cv3.0.2.weight").size(0));
  spec.num_masks = static_cast<int>(require(tensors, head + "cv4.0.2.weight").size(0));
  spec.proto_channels = static_cast<int>(require(tensors, head + "proto.cv1.conv.weight").size(0));
  if (require(tensors, head + "cv2.0.2.weight").size(0) != 4 * kRegMax) {
    throw Error(ErrorKind::ArchitectureMismatch, "box branch does not predict " + std::to_string(kRegMax) + " bins");
  }
  return spec;
}

int backbone_stride(int index) {
  static constexpr std::array<int, kBackboneLayers> kStrides = {2, 4, 4, 8, 8, 16, 16, 32, 32, 32};
  if (index < 0 || index >= kBackboneLayers) {
    throw Error(ErrorKind::ArchitectureMismatch, "backbone has no layer " + std::to_string(index));
  }
  return kStrides[static_cast<std::size_t>(index)];
}

ConvBnActImpl::ConvBnActImpl(int in, int out, int kernel, int stride) {
  conv = register_module(
      "conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2).bias(false)));
  bn = register_module("bn", torch::nn::BatchNorm2d(torch::nn::BatchNorm2dOptions(out).eps(1e-3).momentum(0.03)));
}

at::Tensor ConvBnActImpl::forward(const at::Tensor& x) { return at::silu(bn(conv(x))); }

BottleneckImpl::BottleneckImpl(int in, int out, bool shortcut) : add(shortcut && in == out) {
  cv1 = register_module("cv1", ConvBnAct(in, out, 3));
  cv2 = register_module("cv2", ConvBnAct(out, out, 3));
}

at::Tensor BottleneckImpl::forward(const at::Tensor& x) {
  auto y = cv2(cv1(x));
  return add ? x + y : y;
}

C2fImpl::C2fImpl(int in, int out, int repeats, bool shortcut) : hidden(out / 2) {
  cv1 = register_module("cv1", ConvBnAct(in, 2 * hidden, 1));
  cv2 = register_module("cv2", ConvBnAct((2 + repeats) * hidden, out, 1));
  m = register_module("m", torch::nn::ModuleList());
  for (int i = 0; i < repeats; ++i) m->push_back(Bottleneck(hidden, hidden, shortcut));
}

at::Tensor C2fImpl::forward(const at::Tensor& x) {
  std::vector<at::Tensor> parts = cv1(x).chunk(2, 1);
  for (const auto& block : *m) parts.push_back(block->as<Bottleneck>()->forward(parts.back()));
  return cv2(at::cat(parts, 1));
}

SppfImpl::SppfImpl(int in, int out) {
  const int hidden = in / 2;
  cv1 = register_module("cv1", ConvBnAct(in, hidden, 1));
  cv2 = register_module("cv2", ConvBnAct(hidden * 4, out, 1));
  pool = register_module("m", torch::nn::MaxPool2d(torch::nn::MaxPool2dOptions(5).stride(1).padding(2)));
}

at::Tensor SppfImpl::forward(const at::Tensor& x) {
  std::vector<at::Tensor> parts{cv1(x)};
  for (int i = 0; i < 3; ++i) parts.push_back(pool(parts.back()));
  return cv2(at::cat(parts, 1));
}

ProtoImpl::ProtoImpl(int in, int hidden, int masks) {
  cv1 = register_module("cv1", ConvBnAct(in, hidden, 3));
  upsample = register_module(
      "upsample", torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(hidden, hidden, 2).stride(2).bias(true)));
  cv2 = register_module("cv2", ConvBnAct(hidden, hidden, 3));
  cv3 = register_module("cv3", ConvBnAct(hidden, masks, 1));
}

at::Tensor ProtoImpl::forward(const at::Tensor& x) { return cv3(cv2(upsample(cv1(x)))); }

DflImpl::DflImpl() {
  conv = register_module("conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(kRegMax, 1, 1).bias(false)));
  torch::NoGradGuard no_grad;
  conv->weight.copy_(at::arange(kRegMax, at::kFloat).view({1, kRegMax, 1, 1}));
  conv->weight.set_requires_grad(false);
}

at::Tensor DflImpl::forward(const at::Tensor& x) {
  const auto b = x.size(0);
  const auto a = x.size(2);
  return conv(x.view({b, 4, kRegMax, a}).transpose(2, 1).softmax(1)).view({b, 4, a});
}

SegmentHeadImpl::SegmentHeadImpl(int nc, int nm, int npr, const std::array<int, 3>& ch)
    : num_classes(nc), num_masks(nm) {
  const int c2 = std::max({16, ch[0] / 4, 4 * kRegMax});
  const int c3 = std::max(ch[0], std::min(nc, 100));
  const int c4 = std::max(ch[0] / 4, nm);
  cv2 = register_module("cv2", torch::nn::ModuleList());
  cv3 = register_module("cv3", torch::nn::ModuleList());
  for (int c : ch) {
    cv2->push_back(head_branch(c, c2, 4 * kRegMax));
    cv3->push_back(head_branch(c, c3, nc));
  }
  dfl = register_module("dfl", Dfl());
  proto = register_module("proto", Proto(ch[0], npr, nm));
  cv4 = register_module("cv4", torch::nn::ModuleList());
  for (int c : ch) cv4->push_back(head_branch(c, c4, nm));
}

HeadOutput SegmentHeadImpl::forward(const std::array<at::Tensor, 3>& levels) {
  HeadOutput out;
  out.proto = proto(levels[0]);
  for (std::size_t i = 0; i < levels.size(); ++i) {
    out.box.push_back(cv2[i]->as<torch::nn::Sequential>()->forward(levels[i]));
    out.cls.push_back(cv3[i]->as<torch::nn::Sequential>()->forward(levels[i]));
    out.coeff.push_back(cv4[i]->as<torch::nn::Sequential>()->forward(levels[i]));
  }
  return out;
}

Predictions SegmentHeadImpl::decode(const HeadOutput& raw) {
  const auto b = raw.box.front().size(0);
  const auto opts = raw.box.front().options();
  std::vector<at::Tensor> anchors, strides, box, cls, coeff;
  for (std::size_t i = 0; i < raw.box.size(); ++i) {
    const auto h = raw.box[i].size(2);
    const auto w = raw.box[i].size(3);
    const auto sy = at::arange(h, opts) + 0.5;
    const auto sx = at::arange(w, opts) + 0.5;
    const auto grid = at::meshgrid({sy, sx}, "ij");
    anchors.push_back(at::stack({grid[1], grid[0]}, -1).view({-1, 2}));
    strides.push_back(at::full({h * w}, static_cast<double>(kLevelStrides[i]), opts));
    box.push_back(raw.box[i].view({b, 4 * kRegMax, -1}));
    cls.push_back(raw.cls[i].view({b, num_classes, -1}));
    coeff.push_back(raw.coeff[i].view({b, num_masks, -1}));
  }
  Predictions p;
  p.anchors = at::cat(anchors, 0);
  p.strides = at::cat(strides, 0);
  const auto dist = dfl(at::cat(box, 2));  // [B, 4, A]
  const auto points = p.anchors.t().unsqueeze(0);  // [1, 2, A]
  const auto lt = dist.slice(1, 0, 2);
  const auto rb = dist.slice(1, 2, 4);
  p.boxes = (at::cat({points - lt, points + rb}, 1) * p.strides.view({1, 1, -1})).transpose(1, 2);
  p.scores = at::cat(cls, 2).sigmoid().transpose(1, 2);
  p.coeffs = at::cat(coeff, 2).transpose(1, 2);
  p.proto = raw.proto;
  return p;
}

YoloSegNetImpl::YoloSegNetImpl(const ArchSpec& spec) : spec_(spec) {
  const auto& c = spec.channels;
  const auto& r = spec.repeats;
  model_ = register_module("model", torch::nn::ModuleList());
  auto conv = [&](int i, int in, int k, int s) {
    auto m = convs_.insert_or_assign(i, ConvBnAct(in, c[i], k, s)).first->second;
    model_->push_back(m);
  };
  auto c2f = [&](int i, int in, bool shortcut) {
    auto m = c2fs_.insert_or_assign(i, C2f(in, c[i], r[i], shortcut)).first->second;
    model_->push_back(m);
  };
  auto upsample = [&] {
    model_->push_back(torch::nn::Upsample(
        torch::nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest)));
  };
  auto concat = [&] { model_->push_back(torch::nn::Identity()); };

  conv(0, 3, 3, 2);
  conv(1, c[0], 3, 2);
  c2f(2, c[1], true);
  conv(3, c[2], 3, 2);
  c2f(4, c[3], true);
  conv(5, c[4], 3, 2);
  c2f(6, c[5], true);
  conv(7, c[6], 3, 2);
  c2f(8, c[7], true);
  sppf_ = Sppf(c[8], c[9]);
  model_->push_back(sppf_);
  upsample();                  // 10
  concat();                    // 11: cat(10, 6)
  c2f(12, c[9] + c[6], false);
  upsample();                  // 13
  concat();                    // 14: cat(13, 4)
  c2f(15, c[12] + c[4], false);
  conv(16, c[15], 3, 2);
  concat();                    // 17: cat(16, 12)
  c2f(18, c[16] + c[12], false);
  conv(19, c[18], 3, 2);
  concat();                    // 20: cat(19, 9)
  c2f(21, c[19] + c[9], false);
  head_ = SegmentHead(spec.num_classes, spec.num_masks, spec.proto_channels, std::array<int, 3>{c[15], c[18], c[21]});
  model_->push_back(head_);
}

std::shared_ptr<torch::nn::Module> YoloSegNetImpl::layer(int index) const {
  if (index < 0 || index >= kLayerCount) {
    throw Error(ErrorKind::ArchitectureMismatch, "network has no layer " + std::to_string(index));
  }
  return model_->ptr(static_cast<std::size_t>(index));
}

at::Tensor YoloSegNetImpl::run_layer(int index, const at::Tensor& x) {
  if (const auto it = convs_.find(index); it != convs_.end()) return it->second(x);
  if (const auto it = c2fs_.find(index); it != c2fs_.end()) return it->second(x);
  if (index == kSppfLayer) return sppf_(x);
  throw Error(ErrorKind::ArchitectureMismatch, "layer " + std::to_string(index) + " is not a sequential stage");
}

std::vector<at::Tensor> YoloSegNetImpl::backbone(const at::Tensor& x, int last) {
  if (last < 0 || last >= kBackboneLayers) {
    throw Error(ErrorKind::ArchitectureMismatch, "backbone has no layer " + std::to_string(last));
  }
  std::vector<at::Tensor> outs;
  outs.reserve(static_cast<std::size_t>(last) + 1);
  at::Tensor h = x;
  for (int i = 0; i <= last; ++i) {
    h = run_layer(i, h);
    outs.push_back(h);
  }
  return outs;
}

HeadOutput YoloSegNetImpl::forward(const at::Tensor& x) {
  const auto b = backbone(x);
  const auto up = [](const at::Tensor& t) {
    return at::upsample_nearest2d(t, {t.size(2) * 2, t.size(3) * 2});
  };
  const auto p4_td = run_layer(12, at::cat({up(b[9]), b[6]}, 1));
  const auto p3 = run_layer(15, at::cat({up(p4_td), b[4]}, 1));
  const auto p4 = run_layer(18, at::cat({run_layer(16, p3), p4_td}, 1));
  const auto p5 = run_layer(21, at::cat({run_layer(19, p4), b[9]}, 1));
  return head_->forward({p3, p4, p5});
}

void YoloSegNetImpl::load_tensors(const std::map<std::string, at::Tensor>& tensors) {
  std::vector<std::string> problems;
  std::set<std::string> consumed;
  torch::NoGradGuard no_grad;
  auto assign = [&](const std::string& name, at::Tensor& dst) {
    const auto it = tensors.find(name);
    if (it == tensors.end()) {
      if (name.ends_with("num_batches_tracked")) return;
      problems.push_back("missing " + name);
      return;
    }
    consumed.insert(name);
    if (it->second.sizes() != dst.sizes()) {
      std::ostringstream os;
      os << "shape of " << name << " is " << it->second.sizes() << ", expected " << dst.sizes();
      problems.push_back(os.str());
      return;
    }
    dst.copy_(it->second.to(dst.scalar_type()));
  };
  for (auto& item : named_parameters(true)) assign(item.key(), item.value());
  for (auto& item : named_buffers(true)) assign(item.key(), item.value());
  for (const auto& [name, t] : tensors) {
    if (!consumed.contains(name) && !name.ends_with("num_batches_tracked")) problems.push_back("unexpected " + name);
  }
  if (!problems.empty()) {
    std::string msg = std::to_string(problems.size()) + " tensor mismatch(es); first: " + problems.front();
    throw Error(ErrorKind::ArchitectureMismatch, msg);
  }
}

std::map<std::string, at::Tensor> YoloSegNetImpl::export_tensors() const {
  std::map<std::string, at::Tensor> out;
  for (const auto& item : named_parameters(true)) out.emplace(item.key(), item.value().detach().clone());
  for (const auto& item : named_buffers(true)) out.emplace(item.key(), item.value().detach().clone());
  return out;
}

const std::vector<std::string>& coco_class_names() {
  static const std::vector<std::string> names = {
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train", "truck", "boat", "traffic light",
    "fire hydrant", "stop sign", "parking meter", "bench", "bird", "cat", "dog", "horse", "sheep", "cow",
    "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella", "handbag", "tie", "suitcase", "frisbee",
    "skis", "snowboard", "sports ball", "kite", "baseball bat", "baseball glove", "skateboard", "surfboard",
    "tennis racket", "bottle", "wine glass", "cup", "fork", "knife", "spoon", "bowl", "banana", "apple",
    "sandwich", "orange", "broccoli", "carrot", "hot dog", "pizza", "donut", "cake", "chair", "couch",
    "potted plant", "bed", "dining table", "toilet", "tv", "laptop", "mouse", "remote", "keyboard",
    "cell phone", "microwave", "oven", "toaster", "sink", "refrigerator", "book", "clock", "vase", "scissors",
    "teddy bear", "hair drier", "toothbrush",
  };
  return names;
}

}  // namespace ostk::yolo
