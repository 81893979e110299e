// Trains the small segmentation network stored under tests/data on procedural
// vase/bird scenes. Developer tool; not part of the library.
//
// The objective is a compact stand-in for a detector training loss:
// centre-sampled anchor assignment, BCE class targets, distribution + IoU box
// terms and a per-instance mask BCE cropped to the ground-truth box.

#include <chrono>
#include <cmath>
#include <iostream>

#include <CLI11.hpp>
#include <torch/nn/functional.h>
#include <torch/nn/utils/clip_grad.h>
#include <torch/optim/adamw.h>

#include "ostk/checkpoint.hpp"
#include "ostk/network.hpp"
#include "ostk/scenes.hpp"
#include "ostk/yolo.hpp"

namespace F = torch::nn::functional;
using namespace ostk;

namespace {

struct Batch {
  at::Tensor images;  // [B,3,H,W]
  std::vector<scenes::Scene> scenes;
};

Batch sample_batch(int batch, int size, std::uint64_t& seed) {
  Batch b;
  std::vector<at::Tensor> imgs;
  for (int i = 0; i < batch; ++i) {
    scenes::SceneSpec spec;
    spec.height = size;
    spec.width = size;
    spec.seed = seed++;
    // One in eight scenes is empty so the classifier sees plain backgrounds.
    if (spec.seed % 8 == 0) spec.vases = spec.birds = 0;
    if (spec.seed % 16 == 3) spec.vases = 3;
    auto scene = scenes::render(spec);
    imgs.push_back(image_to_tensor(scene.image));
    b.scenes.push_back(std::move(scene));
  }
  b.images = at::cat(imgs, 0);
  return b;
}

struct Anchors {
  at::Tensor points;   // [A,2] grid units
  at::Tensor strides;  // [A]
};

Anchors make_anchors(const std::vector<at::Tensor>& levels) {
  std::vector<at::Tensor> pts, strides;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const auto h = levels[i].size(2);
    const auto w = levels[i].size(3);
    const auto sy = at::arange(h, at::kFloat) + 0.5;
    const auto sx = at::arange(w, at::kFloat) + 0.5;
    const auto grid = at::meshgrid({sy, sx}, "ij");
    pts.push_back(at::stack({grid[1].reshape(-1), grid[0].reshape(-1)}, 1));
    strides.push_back(at::full({h * w}, static_cast<float>(yolo::kLevelStrides[i])));
  }
  return {at::cat(pts, 0), at::cat(strides, 0)};
}

at::Tensor box_iou(const at::Tensor& a, const at::Tensor& b) {
  const auto lt = at::max(a.slice(1, 0, 2), b.slice(1, 0, 2));
  const auto rb = at::min(a.slice(1, 2, 4), b.slice(1, 2, 4));
  const auto wh = (rb - lt).clamp_min(0);
  const auto inter = wh.select(1, 0) * wh.select(1, 1);
  const auto area = [](const at::Tensor& x) { return (x.select(1, 2) - x.select(1, 0)) * (x.select(1, 3) - x.select(1, 1)); };
  return inter / (area(a) + area(b) - inter + 1e-7);
}

struct LossParts {
  at::Tensor total;
  double box = 0, cls = 0, dfl = 0, mask = 0;
  int positives = 0;
};

LossParts compute_loss(const yolo::HeadOutput& out, const Batch& batch, int num_classes) {
  const auto B = out.cls[0].size(0);
  const int nm = static_cast<int>(out.coeff[0].size(1));
  std::vector<at::Tensor> box_l, cls_l, coeff_l;
  for (std::size_t i = 0; i < out.box.size(); ++i) {
    box_l.push_back(out.box[i].flatten(2));
    cls_l.push_back(out.cls[i].flatten(2));
    coeff_l.push_back(out.coeff[i].flatten(2));
  }
  const auto box_logits = at::cat(box_l, 2);               // [B,64,A]
  const auto cls_logits = at::cat(cls_l, 2).transpose(1, 2);  // [B,A,nc]
  const auto coeffs = at::cat(coeff_l, 2).transpose(1, 2);    // [B,A,nm]
  const auto anchors = make_anchors(out.box);
  const auto A = anchors.points.size(0);
  const auto ax = anchors.points.select(1, 0) * anchors.strides;
  const auto ay = anchors.points.select(1, 1) * anchors.strides;

  const auto bins = at::arange(yolo::kRegMax, at::kFloat);
  auto cls_target = at::zeros({B, A, num_classes});
  at::Tensor box_loss = at::zeros({});
  at::Tensor dfl_loss = at::zeros({});
  at::Tensor mask_loss = at::zeros({});
  int total_pos = 0;
  int mask_images = 0;

  const auto mh = out.proto.size(2);
  const auto mw = out.proto.size(3);
  const auto H = batch.images.size(2);
  const auto W = batch.images.size(3);

  for (int64_t b = 0; b < B; ++b) {
    const auto& objs = batch.scenes[static_cast<std::size_t>(b)].objects;
    if (objs.empty()) continue;
    auto assigned = at::full({A}, -1, at::kLong);
    auto best_area = at::full({A}, 1e12, at::kFloat);
    std::vector<at::Tensor> gt_boxes;
    for (std::size_t g = 0; g < objs.size(); ++g) {
      const auto& bb = objs[g].box;
      gt_boxes.push_back(at::tensor({bb.x1, bb.y1, bb.x2, bb.y2}));
      const float cx = (bb.x1 + bb.x2) / 2;
      const float cy = (bb.y1 + bb.y2) / 2;
      const float area = (bb.x2 - bb.x1) * (bb.y2 - bb.y1);
      const auto s = anchors.strides;
      const auto inside = (ax > bb.x1) & (ax < bb.x2) & (ay > bb.y1) & (ay < bb.y2);
      const auto central = ((ax - cx).abs() < 2.5 * s) & ((ay - cy).abs() < 2.5 * s);
      const auto reach = at::stack({ax - bb.x1, ay - bb.y1, bb.x2 - ax, bb.y2 - ay}, 1).amax(1) / s;
      const auto fits = reach < (yolo::kRegMax - 1.01);
      const auto pos = inside & central & fits & (best_area > area);
      assigned.masked_fill_(pos, static_cast<int64_t>(g));
      best_area.masked_fill_(pos, area);
    }
    const auto pos_idx = (assigned >= 0).nonzero().squeeze(1);
    const auto P = pos_idx.size(0);
    if (P == 0) continue;
    total_pos += static_cast<int>(P);
    const auto gt_all = at::stack(gt_boxes, 0);
    const auto gidx = assigned.index_select(0, pos_idx);
    const auto gt = gt_all.index_select(0, gidx);  // [P,4]
    std::vector<int64_t> cls_ids;
    for (int64_t i = 0; i < P; ++i) cls_ids.push_back(objs[static_cast<std::size_t>(gidx[i].item<int64_t>())].class_id);
    const auto cls_idx = at::tensor(cls_ids, at::kLong);
    cls_target[b].index_put_({pos_idx, cls_idx}, 1.0);

    const auto s = anchors.strides.index_select(0, pos_idx);
    const auto px = anchors.points.index_select(0, pos_idx);
    const auto logits = box_logits[b].index_select(1, pos_idx).view({4, yolo::kRegMax, P}).permute({2, 0, 1});  // [P,4,16]
    const auto dist = (logits.softmax(2) * bins).sum(2);  // [P,4]
    const auto x = px.select(1, 0);
    const auto y = px.select(1, 1);
    const auto pred = at::stack({x - dist.select(1, 0), y - dist.select(1, 1), x + dist.select(1, 2), y + dist.select(1, 3)}, 1) *
                      s.unsqueeze(1);
    box_loss = box_loss + (1.0 - box_iou(pred, gt)).sum();

    const auto target = at::stack({x - gt.select(1, 0) / s, y - gt.select(1, 1) / s, gt.select(1, 2) / s - x,
                                   gt.select(1, 3) / s - y},
                                  1)
                            .clamp(0, yolo::kRegMax - 1.01);
    const auto tl = target.floor().to(at::kLong);
    const auto wl = tl.to(at::kFloat) + 1 - target;
    const auto logp = logits.log_softmax(2);
    const auto lp_l = logp.gather(2, tl.unsqueeze(2)).squeeze(2);
    const auto lp_r = logp.gather(2, (tl + 1).unsqueeze(2)).squeeze(2);
    dfl_loss = dfl_loss - (lp_l * wl + lp_r * (1 - wl)).mean(1).sum();

    // Mask term on a subsample of positives.
    auto sel = at::randperm(P).slice(0, 0, std::min<int64_t>(P, 24));
    const auto sel_anchor = pos_idx.index_select(0, sel);
    const auto sel_gt = gidx.index_select(0, sel);
    std::vector<at::Tensor> gmasks;
    for (const auto& o : objs) gmasks.push_back(at::from_blob(const_cast<float*>(o.mask.values.data()), {H, W}).clone());
    const auto gm = F::interpolate(at::stack(gmasks, 0).unsqueeze(1),
                                   F::InterpolateFuncOptions().size(std::vector<int64_t>{mh, mw}).mode(torch::kArea))
                        .squeeze(1)
                        .index_select(0, sel_gt);  // [S,mh,mw]
    const auto c = coeffs[b].index_select(0, sel_anchor);  // [S,nm]
    const auto pm = c.matmul(out.proto[b].view({nm, -1})).view({-1, mh, mw});
    const auto bce = F::binary_cross_entropy_with_logits(pm, gm, F::BinaryCrossEntropyWithLogitsFuncOptions().reduction(torch::kNone));
    const auto gsel = gt.index_select(0, sel) * at::tensor({static_cast<float>(mw) / W, static_cast<float>(mh) / H,
                                                             static_cast<float>(mw) / W, static_cast<float>(mh) / H});
    const auto cols = at::arange(mw, at::kFloat).view({1, 1, -1});
    const auto rows = at::arange(mh, at::kFloat).view({1, -1, 1});
    const auto crop = ((cols >= gsel.select(1, 0).view({-1, 1, 1})) & (cols < gsel.select(1, 2).view({-1, 1, 1})) &
                       (rows >= gsel.select(1, 1).view({-1, 1, 1})) & (rows < gsel.select(1, 3).view({-1, 1, 1})))
                          .to(at::kFloat);
    // Keep a thin context ring outside the box so background stays off.
    const auto weight = crop + 0.1;
    mask_loss = mask_loss + ((bce * weight).sum({1, 2}) / weight.sum({1, 2})).mean();
    ++mask_images;
  }

  const double norm = std::max(total_pos, 1);
  const auto cls_loss = F::binary_cross_entropy_with_logits(cls_logits, cls_target,
                                                            F::BinaryCrossEntropyWithLogitsFuncOptions().reduction(torch::kSum)) /
                        norm;
  box_loss = box_loss / norm;
  dfl_loss = dfl_loss / norm;
  if (mask_images > 0) mask_loss = mask_loss / mask_images;

  LossParts parts;
  parts.total = (7.5 * box_loss + 0.5 * cls_loss + 1.5 * dfl_loss + 4.0 * mask_loss) * static_cast<double>(B);
  parts.box = box_loss.item<double>();
  parts.cls = cls_loss.item<double>();
  parts.dfl = dfl_loss.item<double>();
  parts.mask = mask_loss.item<double>();
  parts.positives = total_pos;
  return parts;
}

void init_biases(yolo::YoloSegNet& net, int size) {
  torch::NoGradGuard no_grad;
  auto& head = net->head();
  for (std::size_t i = 0; i < 3; ++i) {
    const double s = yolo::kLevelStrides[i];
    auto box_seq = head->cv2[i]->as<torch::nn::Sequential>();
    auto cls_seq = head->cv3[i]->as<torch::nn::Sequential>();
    box_seq->ptr(2)->named_parameters()["bias"].fill_(1.0);
    cls_seq->ptr(2)->named_parameters()["bias"].fill_(std::log(5.0 / head->num_classes / std::pow(size / s, 2)));
  }
}

struct EvalStats {
  int objects = 0, found = 0, false_pos = 0, blank_hits = 0;
  double mask_iou = 0;
};

EvalStats evaluate(yolo::YoloSegNet& net, int size) {
  yolo::YoloSegNet copy(net->spec());
  copy->load_tensors(net->export_tensors());
  BackboneModel model(copy, yolo::coco_class_names(), TapSpec{}, "eval");
  EvalStats st;
  for (std::uint64_t i = 0; i < 24; ++i) {
    scenes::SceneSpec spec;
    spec.height = spec.width = size;
    spec.seed = 1'000'000 + i;
    const auto scene = scenes::render(spec);
    const auto dets = model.segment(scene.image, 0.5f);
    std::vector<bool> used(dets.size(), false);
    for (const auto& o : scene.objects) {
      ++st.objects;
      for (std::size_t d = 0; d < dets.size(); ++d) {
        if (used[d] || dets[d].class_id != o.class_id) continue;
        const auto iou = box_iou(at::tensor({dets[d].bbox.x1, dets[d].bbox.y1, dets[d].bbox.x2, dets[d].bbox.y2}).view({1, 4}),
                                 at::tensor({o.box.x1, o.box.y1, o.box.x2, o.box.y2}).view({1, 4}))
                             .item<float>();
        if (iou < 0.5f) continue;
        used[d] = true;
        ++st.found;
        double inter = 0, uni = 0;
        for (std::size_t p = 0; p < o.mask.values.size(); ++p) {
          const bool a = dets[d].mask.values[p] >= 0.5f;
          const bool b = o.mask.values[p] > 0.5f;
          inter += a && b;
          uni += a || b;
        }
        st.mask_iou += uni > 0 ? inter / uni : 0;
        break;
      }
    }
    st.false_pos += static_cast<int>(std::count(used.begin(), used.end(), false));
  }
  for (float level : {0.5f, 0.2f, 0.8f}) st.blank_hits += static_cast<int>(model.segment(scenes::blank(size, size, level), 0.5f).size());
  if (st.found > 0) st.mask_iou /= st.found;
  return st;
}

void save(const yolo::YoloSegNet& net, const std::string& path) {
  Checkpoint ck;
  ck.format = Checkpoint::Format::native;
  ck.class_names = yolo::coco_class_names();
  for (auto& [k, v] : net->export_tensors()) {
    ck.tensors[k] = v.is_floating_point() ? v.detach().to(at::kHalf).contiguous() : v.detach().contiguous();
  }
  write_checkpoint(ck, path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train the segmentation fixture network on procedural scenes"};
  std::string out = "fixture_seg.pt";
  std::string resume;
  int steps = 2000, batch = 8, size = 320, eval_every = 200;
  double lr = 2e-3, width = 0.25, depth = 0.33;
  std::uint64_t seed = 1;
  app.add_option("--out", out);
  app.add_option("--resume", resume);
  app.add_option("--steps", steps);
  app.add_option("--batch", batch);
  app.add_option("--size", size);
  app.add_option("--lr", lr);
  app.add_option("--width", width);
  app.add_option("--depth", depth);
  app.add_option("--seed", seed);
  app.add_option("--eval-every", eval_every);
  CLI11_PARSE(app, argc, argv);

  torch::manual_seed(seed);
  at::set_num_threads(1);
  yolo::YoloSegNet net(yolo::ArchSpec::from_scale(depth, width, 1024));
  if (!resume.empty()) {
    net->load_tensors(read_checkpoint(resume).tensors);
  } else {
    init_biases(net, size);
  }
  for (auto& m : net->modules(false)) {
    if (auto* bn = m->as<torch::nn::BatchNorm2d>()) bn->options.momentum(0.03);
  }
  net->train();

  std::vector<at::Tensor> decay, no_decay;
  for (auto& p : net->parameters()) {
    if (!p.requires_grad()) continue;
    (p.dim() > 1 ? decay : no_decay).push_back(p);
  }
  std::vector<torch::optim::OptimizerParamGroup> groups;
  groups.emplace_back(decay, std::make_unique<torch::optim::AdamWOptions>(torch::optim::AdamWOptions(lr).weight_decay(5e-4)));
  groups.emplace_back(no_decay, std::make_unique<torch::optim::AdamWOptions>(torch::optim::AdamWOptions(lr).weight_decay(0)));
  torch::optim::AdamW opt(std::move(groups), torch::optim::AdamWOptions(lr));

  std::uint64_t scene_seed = seed * 1'000'003;
  const auto t0 = std::chrono::steady_clock::now();
  for (int step = 1; step <= steps; ++step) {
    const double warm = std::min(1.0, step / 100.0);
    const double cosine = 0.5 * (1 + std::cos(M_PI * step / steps));
    for (auto& g : opt.param_groups()) {
      static_cast<torch::optim::AdamWOptions&>(g.options()).lr(lr * warm * (0.05 + 0.95 * cosine));
    }
    const auto b = sample_batch(batch, size, scene_seed);
    const auto out_raw = net->forward(b.images);
    const auto loss = compute_loss(out_raw, b, net->spec().num_classes);
    opt.zero_grad();
    loss.total.backward();
    torch::nn::utils::clip_grad_norm_(net->parameters(), 10.0);
    opt.step();
    if (step % 20 == 0) {
      const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cout << "step " << step << " box " << loss.box << " cls " << loss.cls << " dfl " << loss.dfl << " mask "
                << loss.mask << " pos " << loss.positives << " t " << el << "s" << std::endl;
    }
    if (step % eval_every == 0 || step == steps) {
      net->eval();
      const auto st = evaluate(net, size);
      net->train();
      std::cout << "eval step " << step << " recall " << st.found << "/" << st.objects << " fp " << st.false_pos
                << " blank " << st.blank_hits << " mask_iou " << st.mask_iou << std::endl;
      save(net, out);
    }
  }
  return 0;
}
