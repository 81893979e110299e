#include "ostk/network.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <numeric>
#include <set>

#include <torch/cuda.h>
#include <torch/utils.h>

#include "ostk/checkpoint.hpp"
#include "ostk/error.hpp"

namespace ostk {

std::vector<int> TapSpec::layers() const {
  std::set<int> all(style_layers.begin(), style_layers.end());
  all.insert(content_layer);
  return {all.begin(), all.end()};
}

at::Tensor image_to_tensor(const Image& img) {
  const auto hwc =
      at::from_blob(const_cast<float*>(img.pixels().data()), {img.height(), img.width(), 3}, at::kFloat);
  auto out = at::empty({1, 3, img.height(), img.width()}, at::kFloat);
  out[0].copy_(hwc.permute({2, 0, 1}));
  return out;
}

Image tensor_to_image(const at::Tensor& pixels) {
  const auto chw = pixels.detach().to(at::kCPU).to(at::kFloat).squeeze(0);
  if (chw.dim() != 3 || chw.size(0) != 3) {
    throw Error(ErrorKind::ShapeError, "expected a [1,3,H,W] or [3,H,W] tensor");
  }
  const auto hwc = chw.permute({1, 2, 0}).contiguous();
  const auto h = static_cast<int>(hwc.size(0));
  const auto w = static_cast<int>(hwc.size(1));
  const float* data = hwc.data_ptr<float>();
  return Image(h, w, std::vector<float>(data, data + hwc.numel()));
}

Features extract_features(const FeatureExtractor& model, const Image& img, bool require_grad) {
  const int stride = model.input_stride();
  if (stride > 1 && (img.height() < kMinImageSide || img.width() < kMinImageSide)) {
    throw Error(ErrorKind::ShapeError, "image is smaller than the minimum side of " + std::to_string(kMinImageSide));
  }
  if (img.height() % stride != 0 || img.width() % stride != 0) {
    throw Error(ErrorKind::ShapeError, std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                                           " is not a multiple of stride " + std::to_string(stride));
  }
  Features out;
  out.input = image_to_tensor(img);
  if (require_grad) out.input.set_requires_grad(true);
  out.maps = model.extract(out.input);
  return out;
}

struct BackboneModel::State {
  yolo::YoloSegNet net{nullptr};
  std::vector<std::string> class_names;
  TapSpec taps;
  std::vector<TapHook> hooks;
  std::string weights_source;
  Device device = Device::cpu;
  mutable std::atomic<std::size_t> segment_calls{0};
};

BackboneModel::BackboneModel(yolo::YoloSegNet net, std::vector<std::string> class_names, TapSpec taps,
                             std::string weights_source, Device device)
    : state_(std::make_shared<State>()) {
  for (int layer : taps.layers()) {
    if (layer < 0 || layer >= yolo::kBackboneLayers) {
      throw Error(ErrorKind::ArchitectureMismatch, "tap index " + std::to_string(layer) +
                                                       " is outside the backbone (0.." +
                                                       std::to_string(yolo::kBackboneLayers - 1) + ")");
    }
    state_->hooks.push_back(TapHook{layer, net->layer(layer)});
  }
  net->eval();
  for (auto& p : net->parameters()) p.set_requires_grad(false);
  if (device == Device::accelerator) {
    if (!torch::cuda::is_available()) {
      throw Error(ErrorKind::LoadFailure, "accelerator requested but none is available");
    }
    net->to(torch::kCUDA);
  }
  state_->net = std::move(net);
  state_->class_names = std::move(class_names);
  state_->taps = std::move(taps);
  state_->weights_source = std::move(weights_source);
  state_->device = device;
}

const TapSpec& BackboneModel::taps() const { return state_->taps; }
const std::vector<TapHook>& BackboneModel::hooks() const { return state_->hooks; }
const std::vector<std::string>& BackboneModel::class_names() const { return state_->class_names; }
const std::string& BackboneModel::weights_source() const { return state_->weights_source; }
Device BackboneModel::device() const { return state_->device; }
yolo::YoloSegNet BackboneModel::network() const { return state_->net; }
std::size_t BackboneModel::segment_calls() const { return state_->segment_calls.load(); }

FeatureSet BackboneModel::extract(const at::Tensor& pixels) const {
  const auto& hooks = state_->hooks;
  if (hooks.empty()) return {};
  const int deepest = hooks.back().layer_index;
  at::Tensor input = pixels;
  if (state_->device == Device::accelerator) input = input.to(torch::kCUDA);
  // The network consumes [0,1] RGB directly; there is no mean/std step.
  const auto outs = state_->net->backbone(input, deepest);
  FeatureSet maps;
  for (const auto& hook : hooks) {
    const auto& act = outs[static_cast<std::size_t>(hook.layer_index)];
    if (!at::isfinite(act).all().item<bool>()) {
      throw Error(ErrorKind::NonFiniteActivation, "layer " + std::to_string(hook.layer_index));
    }
    maps.emplace(hook.layer_index, FeatureMap{hook.layer_index, act.squeeze(0), act.requires_grad()});
  }
  return maps;
}

namespace {

// Greedy IoU suppression over boxes sorted by descending score.
std::vector<std::int64_t> nms(const at::Tensor& boxes, const at::Tensor& scores, float iou_threshold) {
  const auto order = std::get<1>(scores.sort(0, /*descending=*/true));
  const auto b = boxes.index_select(0, order).contiguous();
  const auto* p = b.data_ptr<float>();
  const auto* ord = order.data_ptr<std::int64_t>();
  const auto n = b.size(0);
  std::vector<char> removed(static_cast<std::size_t>(n), 0);
  std::vector<std::int64_t> keep;
  for (std::int64_t i = 0; i < n; ++i) {
    if (removed[i]) continue;
    keep.push_back(ord[i]);
    const float* bi = p + i * 4;
    const float area_i = (bi[2] - bi[0]) * (bi[3] - bi[1]);
    for (std::int64_t j = i + 1; j < n; ++j) {
      if (removed[j]) continue;
      const float* bj = p + j * 4;
      const float iw = std::max(0.0f, std::min(bi[2], bj[2]) - std::max(bi[0], bj[0]));
      const float ih = std::max(0.0f, std::min(bi[3], bj[3]) - std::max(bi[1], bj[1]));
      const float inter = iw * ih;
      const float area_j = (bj[2] - bj[0]) * (bj[3] - bj[1]);
      if (inter / (area_i + area_j - inter + 1e-9f) > iou_threshold) removed[j] = 1;
    }
  }
  return keep;
}

}  // namespace

std::vector<Detection> BackboneModel::segment(const Image& img, float conf_threshold, float iou_threshold,
                                              int max_detections) const {
  if (!(conf_threshold > 0.0f && conf_threshold < 1.0f)) {
    throw Error(ErrorKind::RangeError, "confidence threshold must lie in (0,1)");
  }
  if (img.empty()) throw Error(ErrorKind::ShapeError, "empty image");
  state_->segment_calls.fetch_add(1);

  try {
    torch::NoGradGuard no_grad;
    const int stride = yolo::kInputStride;
    const int h = img.height();
    const int w = img.width();
    const int ph = std::max(stride, (h + stride - 1) / stride * stride);
    const int pw = std::max(stride, (w + stride - 1) / stride * stride);
    at::Tensor x = image_to_tensor(img);
    if (ph != h || pw != w) {
      x = at::constant_pad_nd(x, {0, pw - w, 0, ph - h}, 114.0 / 255.0);
    }
    if (state_->device == Device::accelerator) x = x.to(torch::kCUDA);

    auto& net = state_->net;
    const auto preds = net->head()->decode(net->forward(x));
    const auto scores = preds.scores[0].to(at::kCPU);
    const auto [conf, cls] = scores.max(1);
    const auto keep_mask = conf >= conf_threshold;
    const auto candidates = keep_mask.nonzero().squeeze(1);
    if (candidates.numel() == 0) return {};

    const auto boxes = preds.boxes[0].to(at::kCPU).index_select(0, candidates);
    const auto cand_conf = conf.index_select(0, candidates);
    const auto cand_cls = cls.index_select(0, candidates);
    // Offsetting by class keeps suppression within a class.
    const auto offset = cand_cls.to(at::kFloat).unsqueeze(1) * 7680.0f;
    auto kept = nms((boxes + offset).contiguous(), cand_conf, iou_threshold);
    if (static_cast<int>(kept.size()) > max_detections) kept.resize(static_cast<std::size_t>(max_detections));
    const auto kept_idx = at::tensor(kept, at::kLong);

    const auto sel_boxes = boxes.index_select(0, kept_idx);
    const auto sel_conf = cand_conf.index_select(0, kept_idx);
    const auto sel_cls = cand_cls.index_select(0, kept_idx);
    const auto coeffs = preds.coeffs[0].to(at::kCPU).index_select(0, candidates).index_select(0, kept_idx);

    // Masks: sigmoid(coeffs . prototypes), cropped to the box at prototype
    // resolution, then bilinearly upsampled to the padded input size.
    const auto proto = preds.proto[0].to(at::kCPU);
    const auto nm = proto.size(0);
    const auto mh = proto.size(1);
    const auto mw = proto.size(2);
    auto masks = coeffs.matmul(proto.view({nm, -1})).sigmoid().view({-1, mh, mw});
    const auto scale = at::tensor({static_cast<float>(mw) / pw, static_cast<float>(mh) / ph,
                                   static_cast<float>(mw) / pw, static_cast<float>(mh) / ph});
    const auto down = sel_boxes * scale;
    const auto cols = at::arange(mw, at::kFloat).view({1, 1, -1});
    const auto rows = at::arange(mh, at::kFloat).view({1, -1, 1});
    const auto x1 = down.select(1, 0).view({-1, 1, 1});
    const auto y1 = down.select(1, 1).view({-1, 1, 1});
    const auto x2 = down.select(1, 2).view({-1, 1, 1});
    const auto y2 = down.select(1, 3).view({-1, 1, 1});
    masks = masks * ((cols >= x1) * (cols < x2) * (rows >= y1) * (rows < y2)).to(at::kFloat);
    masks = at::upsample_bilinear2d(masks.unsqueeze(0), {ph, pw}, /*align_corners=*/false)
                .squeeze(0)
                .slice(1, 0, h)
                .slice(2, 0, w)
                .clamp(0.0, 1.0)
                .contiguous();

    std::vector<Detection> out;
    const auto n = sel_conf.size(0);
    out.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      Detection d;
      d.class_id = static_cast<int>(sel_cls[i].item<std::int64_t>());
      d.class_label = d.class_id < static_cast<int>(state_->class_names.size())
                          ? state_->class_names[static_cast<std::size_t>(d.class_id)]
                          : std::to_string(d.class_id);
      d.confidence = sel_conf[i].item<float>();
      const auto bx = sel_boxes[i];
      d.bbox = {std::clamp(bx[0].item<float>(), 0.0f, static_cast<float>(w)),
                std::clamp(bx[1].item<float>(), 0.0f, static_cast<float>(h)),
                std::clamp(bx[2].item<float>(), 0.0f, static_cast<float>(w)),
                std::clamp(bx[3].item<float>(), 0.0f, static_cast<float>(h))};
      const auto m = masks[i];
      const float* mp = m.data_ptr<float>();
      d.mask = Mask(h, w);
      std::copy(mp, mp + m.numel(), d.mask.values.begin());
      out.push_back(std::move(d));
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
    return out;
  } catch (const c10::Error& e) {
    throw Error(ErrorKind::InferenceFailure, e.what_without_backtrace());
  }
}

std::vector<at::Tensor> BackboneModel::segmentation_parameters() const {
  return state_->net->parameters(true);
}

std::vector<at::Tensor> BackboneModel::feature_parameters() const {
  std::vector<at::Tensor> params;
  if (state_->hooks.empty()) return params;
  for (int i = 0; i <= state_->hooks.back().layer_index; ++i) {
    for (auto& p : state_->net->layer(i)->parameters(true)) params.push_back(p);
  }
  return params;
}

BackboneModel load_model(const std::filesystem::path& weights, const TapSpec& taps, Device device) {
  Checkpoint ckpt = read_checkpoint(weights);
  const auto spec = yolo::ArchSpec::infer(ckpt.tensors);
  yolo::YoloSegNet net(spec);
  net->load_tensors(ckpt.tensors);
  if (ckpt.class_names.empty() && spec.num_classes == 80) ckpt.class_names = yolo::coco_class_names();
  if (ckpt.class_names.size() != static_cast<std::size_t>(spec.num_classes)) {
    throw Error(ErrorKind::ArchitectureMismatch, std::to_string(ckpt.class_names.size()) + " class names for " +
                                                     std::to_string(spec.num_classes) + " classes");
  }
  return BackboneModel(std::move(net), std::move(ckpt.class_names), taps, weights.string(), device);
}

std::vector<Detection> segment(const BackboneModel& model, const Image& img, float conf_threshold) {
  return model.segment(img, conf_threshold);
}

TargetSelector TargetSelector::parse(std::string_view text) {
  auto parse_int = [&](std::string_view s) -> int {
    int v = -1;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size() || v < 0) {
      throw Error(ErrorKind::SelectorParseError, "bad index in selector '" + std::string(text) + "'");
    }
    return v;
  };
  auto is_digits = [](std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
  };

  if (text.empty()) throw Error(ErrorKind::SelectorParseError, "empty selector");
  TargetSelector sel;
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos) {
    if (is_digits(text) || (text.front() == '-' && is_digits(text.substr(1)))) {
      sel.index = parse_int(text);
    } else {
      sel.class_label = std::string(text);
    }
    return sel;
  }
  const auto label = text.substr(0, colon);
  if (label.empty() || label.find(':') != std::string_view::npos) {
    throw Error(ErrorKind::SelectorParseError, "malformed selector '" + std::string(text) + "'");
  }
  sel.class_label = std::string(label);
  sel.index = parse_int(text.substr(colon + 1));
  return sel;
}

std::string TargetSelector::to_string() const {
  if (class_label && index) return *class_label + ":" + std::to_string(*index);
  if (class_label) return *class_label;
  return index ? std::to_string(*index) : std::string{};
}

std::vector<std::size_t> match_targets(const std::vector<Detection>& detections, const TargetSelector& selector) {
  std::vector<std::size_t> hits;
  if (!selector.class_label) {
    if (selector.index && static_cast<std::size_t>(*selector.index) < detections.size()) {
      hits.push_back(static_cast<std::size_t>(*selector.index));
    }
    return hits;
  }
  for (std::size_t i = 0; i < detections.size(); ++i) {
    if (detections[i].class_label == *selector.class_label) hits.push_back(i);
  }
  if (selector.index) {
    const auto ordinal = static_cast<std::size_t>(*selector.index);
    return ordinal < hits.size() ? std::vector<std::size_t>{hits[ordinal]} : std::vector<std::size_t>{};
  }
  return hits;
}

std::vector<Detection> select_targets(const std::vector<Detection>& detections, const TargetSelector& selector) {
  std::vector<Detection> out;
  for (std::size_t i : match_targets(detections, selector)) out.push_back(detections[i]);
  return out;
}

}  // namespace ostk
