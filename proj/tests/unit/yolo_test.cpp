#include <gtest/gtest.h>
#include <torch/torch.h>

#include "ostk/error.hpp"
#include "ostk/yolo.hpp"
#include "support.hpp"

namespace ostk::yolo {
namespace {

std::int64_t parameter_count(const YoloSegNet& net) {
  std::int64_t n = 0;
  for (const auto& p : net->parameters()) n += p.numel();
  return n;
}

TEST(ArchSpec, PublishedParameterCounts) {
  // Totals reported by the reference implementation's model summaries.
  EXPECT_EQ(parameter_count(YoloSegNet(ArchSpec::variant('n'))), 3409968);
  EXPECT_EQ(parameter_count(YoloSegNet(ArchSpec::variant('x'))), 71827888);
}

TEST(ArchSpec, InferRoundTripsEveryVariant) {
  for (char scale : {'n', 's', 'm', 'l', 'x'}) {
    const auto spec = ArchSpec::variant(scale);
    YoloSegNet net(spec);
    EXPECT_EQ(ArchSpec::infer(net->export_tensors()), spec) << scale;
  }
  const auto custom = ArchSpec::from_scale(0.33, 0.25, 1024, 3);
  EXPECT_EQ(ArchSpec::infer(YoloSegNet(custom)->export_tensors()), custom);
}

TEST(ArchSpec, InferRejectsForeignTensors) {
  std::map<std::string, at::Tensor> tensors{{"fc.weight", at::zeros({4, 4})}};
  EXPECT_EQ(testing::kind_of([&] { ArchSpec::infer(tensors); }), ErrorKind::ArchitectureMismatch);
}

TEST(Backbone, StridesAndShapes) {
  const std::array<int, kBackboneLayers> strides{2, 4, 4, 8, 8, 16, 16, 32, 32, 32};
  for (int i = 0; i < kBackboneLayers; ++i) EXPECT_EQ(backbone_stride(i), strides[static_cast<std::size_t>(i)]);

  const auto spec = ArchSpec::variant('n');
  YoloSegNet net(spec);
  net->eval();
  torch::NoGradGuard ng;
  const auto outs = net->backbone(at::rand({1, 3, 64, 96}));
  ASSERT_EQ(outs.size(), static_cast<std::size_t>(kBackboneLayers));
  for (int i = 0; i < kBackboneLayers; ++i) {
    const auto& t = outs[static_cast<std::size_t>(i)];
    EXPECT_EQ(t.size(1), spec.channels[static_cast<std::size_t>(i)]) << i;
    EXPECT_EQ(t.size(2), 64 / strides[static_cast<std::size_t>(i)]) << i;
    EXPECT_EQ(t.size(3), 96 / strides[static_cast<std::size_t>(i)]) << i;
  }
}

TEST(Head, DecodedShapes) {
  YoloSegNet net(ArchSpec::variant('n'));
  net->eval();
  torch::NoGradGuard ng;
  const auto pred = net->head()->decode(net->forward(at::rand({1, 3, 64, 96})));
  const std::int64_t anchors = 8 * 12 + 4 * 6 + 2 * 3;
  EXPECT_EQ(pred.boxes.sizes(), (at::IntArrayRef{1, anchors, 4}));
  EXPECT_EQ(pred.scores.sizes(), (at::IntArrayRef{1, anchors, 80}));
  EXPECT_EQ(pred.coeffs.sizes(), (at::IntArrayRef{1, anchors, 32}));
  EXPECT_EQ(pred.proto.sizes(), (at::IntArrayRef{1, 32, 16, 24}));
  EXPECT_GE(pred.scores.min().item<float>(), 0.0f);
  EXPECT_LE(pred.scores.max().item<float>(), 1.0f);
}

TEST(ClassNames, Coco) {
  const auto& names = coco_class_names();
  ASSERT_EQ(names.size(), 80u);
  EXPECT_EQ(names[0], "person");
  EXPECT_EQ(names[14], "bird");
  EXPECT_EQ(names[75], "vase");
}

}  // namespace
}  // namespace ostk::yolo
