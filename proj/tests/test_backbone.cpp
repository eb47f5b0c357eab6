#include <gtest/gtest.h>

#include <random>

#include "das/backbone/backbone.hpp"
#include "test_util.hpp"

using namespace das;

namespace {

BackboneSpec plain(size_t depth = 3, size_t width = 8, size_t classes = 10) {
  BackboneSpec s;
  s.depth = depth;
  s.width = width;
  s.classes = classes;
  return s;
}

BackboneSpec resnet(size_t depth = 2, size_t width = 8) {
  BackboneSpec s = plain(depth, width, 4);
  s.kind = BackboneKind::mini_resnet;
  return s;
}

Tensor<double> run(Model<double>& m, const Tensor<double>& x, size_t frames, RunMode mode = RunMode::eval) {
  Tape<double> tape;
  return m.forward(tape.constant(x), frames, mode).value();
}

}  // namespace

TEST(Backbone, PlainCnnLogitShape) {
  std::mt19937_64 rng(1);
  Backbone<double> net(plain(), rng);
  auto y = run(net, Tensor<double>::uniform(Shape{2, 3, 32, 32}, rng), 1);
  EXPECT_EQ(y.shape(), (Shape{2, 10}));
}

TEST(Backbone, PlainCnnParamCountClosedForm) {
  std::mt19937_64 rng(2);
  Backbone<double> net(plain(3, 8, 10), rng);
  // (27·8 + 8) + 2·(72·8 + 8) + (8·10 + 10)
  EXPECT_EQ(net.param_count(), 224u + 2 * 584u + 90u);
  EXPECT_EQ(net.param_count(), expected_param_count(net.spec()));
}

TEST(Backbone, ResnetParamCountMatchesFormula) {
  std::mt19937_64 rng(3);
  for (auto s : {resnet(1, 4), resnet(3, 8)}) {
    Backbone<double> net(s, rng);
    EXPECT_EQ(net.param_count(), expected_param_count(s));
  }
}

TEST(Backbone, ZeroScaleResidualBlockIsIdentity) {
  std::mt19937_64 rng(4);
  BackboneSpec s = resnet(1, 6);
  s.head = HeadKind::dense_predictor;
  Backbone<double> net(s, rng);
  auto x = Tensor<double>::uniform(Shape{2, 3, 8, 8}, rng);
  // with the branch scale at zero the block passes h through; perturbing branch weights changes nothing
  auto y0 = run(net, x, 1);
  for (auto* p : net.parameters())
    if (p->name.rfind("block0.conv", 0) == 0) p->value = Tensor<double>::normal(p->value.shape(), rng);
  auto y1 = run(net, x, 1);
  for (size_t i = 0; i < y0.size(); ++i) EXPECT_EQ(y0[i], y1[i]);
  // and a nonzero scale does change the output
  for (auto* p : net.parameters())
    if (p->name == "block0.scale") p->value.fill(1.0);
  auto y2 = run(net, x, 1);
  double diff = 0;
  for (size_t i = 0; i < y0.size(); ++i) diff += std::abs(y0[i] - y2[i]);
  EXPECT_GT(diff, 0.0);
}

TEST(Backbone, DensePredictorShape) {
  std::mt19937_64 rng(5);
  BackboneSpec s = plain(2, 6, 3);
  s.head = HeadKind::dense_predictor;
  Backbone<double> net(s, rng);
  EXPECT_TRUE(net.dense_output());
  EXPECT_EQ(run(net, Tensor<double>::uniform(Shape{2, 3, 12, 10}, rng), 1).shape(), (Shape{2, 3, 12, 10}));
  EXPECT_EQ(net.param_count(), expected_param_count(s));
}

TEST(Backbone, SingleFrameMatches2DNetwork) {
  std::mt19937_64 rng(6);
  for (auto s : {plain(3, 8, 5), resnet(2, 8)}) {
    BackboneSpec shifted = s;
    shifted.shift_points = {1, s.depth - 1};
    std::mt19937_64 a(7), b(7);
    Backbone<double> flat(s, a), folded(shifted, b);
    auto x = Tensor<double>::uniform(Shape{3, 3, 10, 10}, rng);
    auto y0 = run(flat, x, 1), y1 = run(folded, x, 1);
    for (size_t i = 0; i < y0.size(); ++i) EXPECT_EQ(y0[i], y1[i]);
  }
}

TEST(Backbone, ShiftInsertionParamDelta) {
  for (auto mode : {ShiftMode::tsm_fixed, ShiftMode::gated_shift}) {
    BackboneSpec s = plain(4, 16, 3), sh = s;
    sh.shift_points = {1, 2, 3};
    sh.shift_mode = mode;
    std::mt19937_64 rng(8);
    Backbone<double> a(s, rng), b(sh, rng);
    const size_t gates = mode == ShiftMode::gated_shift ? 3 * 2 * 2 : 0;  // fold(16) = 2 each way
    EXPECT_EQ(b.param_count() - a.param_count(), gates);
  }
}

TEST(Backbone, ShiftMixesFrames) {
  std::mt19937_64 rng(9);
  BackboneSpec s = plain(3, 8, 4);
  s.shift_points = {1};
  Backbone<double> net(s, rng);
  auto x = Tensor<double>::uniform(Shape{4, 3, 8, 8}, rng);
  auto two = run(net, x, 2);  // two clips of two frames
  auto four = run(net, x, 1);
  double diff = 0;
  for (size_t i = 0; i < two.size(); ++i) diff += std::abs(two[i] - four[i]);
  EXPECT_GT(diff, 1e-9);
}

TEST(Backbone, ReceptiveLayers) {
  auto l = receptive_layers(plain(3, 8, 10));
  ASSERT_EQ(l.size(), 3u);
  for (const auto& x : l) EXPECT_EQ(x.kernel[0], 3u);
  BackboneSpec r = resnet(2, 8);
  EXPECT_EQ(receptive_layers(r).size(), 5u);
  BackboneSpec d = plain(1, 8, 2);
  d.head = HeadKind::dense_predictor;
  auto dl = receptive_layers(d);
  ASSERT_EQ(dl.size(), 3u);
  EXPECT_EQ(dl[1].dilation[0], 2u);
}

TEST(Backbone, SpecValidationAndJson) {
  BackboneSpec s = plain(3, 8, 10);
  s.shift_points = {3};
  EXPECT_THROW(s.validate(), ConfigError);
  s.shift_points = {0};  // 3 input channels cannot move floor(3/8) = 0 channels
  EXPECT_THROW(s.validate(), ConfigError);
  s.shift_points = {1, 2};
  s.kind = BackboneKind::mini_resnet;
  s.head = HeadKind::dense_predictor;
  s.shift_mode = ShiftMode::gated_shift;
  auto back = backbone_from_json(nlohmann::json::parse(to_json(s).dump()));
  EXPECT_EQ(to_json(back), to_json(s));
  EXPECT_THROW(backbone_from_json(nlohmann::json{{"kind", "vgg"}, {"depth", 2}, {"width", 4}, {"head", {{"kind", "classifier"}, {"classes", 2}}}}),
               ConfigError);
  EXPECT_THROW(backbone_from_json(nlohmann::json{{"kind", "plain_cnn"}}), ConfigError);
}

TEST(Backbone, ArchModeKeepsRunningStats) {
  std::mt19937_64 rng(10);
  Backbone<double> net(resnet(1, 4), rng);
  auto x = Tensor<double>::uniform(Shape{2, 3, 6, 6}, rng);
  auto stats = [&] { auto d = net.buffers()[0].second->data(); return std::vector<double>(d.begin(), d.end()); };
  const auto before = stats();
  run(net, x, 1, RunMode::arch);
  EXPECT_EQ(stats(), before);
  run(net, x, 1, RunMode::train);
  EXPECT_NE(stats(), before);
}

TEST(Backbone, TrainModeGradientsReachParameters) {
  std::mt19937_64 rng(11);
  Backbone<double> net(resnet(1, 4), rng);
  for (auto* p : net.parameters())
    if (p->name == "block0.scale") p->value.fill(0.5);
  Tape<double> tape;
  auto y = net.forward(tape.constant(Tensor<double>::uniform(Shape{2, 3, 6, 6}, rng)), 1, RunMode::train);
  tape.backward(ops::cross_entropy(y, {0, 1}));
  for (auto* p : net.parameters()) {
    double g = 0;
    for (double v : p->grad.data()) g += std::abs(v);
    EXPECT_GT(g, 0.0) << p->name;
  }
}
