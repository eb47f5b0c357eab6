// Central finite differences (64-bit, eps 1e-5) against the tape for every smooth op.
#include <gtest/gtest.h>

#include <random>

#include "das/cell/cell.hpp"
#include "das/core/ops.hpp"
#include "das/temporal/shift.hpp"
#include "das/transforms/apply.hpp"
#include "test_util.hpp"

using namespace das;
using testutil::grad_check;
using V = Var<double>;
using Vs = std::vector<V>;
using Tp = Tape<double>;

namespace {

constexpr double kTol = 1e-4;
constexpr int kProbes = 20;

Tensor<double> rnd(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  return Tensor<double>::uniform(std::move(s), rng, lo, hi);
}

// Values with |x| >= 0.1 so relu/clamp kinks stay out of reach of the probe step.
Tensor<double> away_from_zero(Shape s, std::mt19937_64& rng) {
  auto t = rnd(std::move(s), rng);
  for (auto& v : t.data()) v = v < 0 ? v - 0.1 : v + 0.1;
  return t;
}

void expect_ok(const testutil::GradCheck& gc) {
  EXPECT_GE(gc.probes, kProbes);
  EXPECT_LT(gc.worst, kTol);
}

}  // namespace

class GradCheck : public ::testing::Test {
 protected:
  std::mt19937_64 rng{20240601};
};

TEST_F(GradCheck, Add) {
  expect_ok(grad_check({rnd({3, 4}, rng), rnd({3, 4}, rng)}, [](Tp&, const Vs& v) { return ops::add(v[0], v[1]); }, rng));
}
TEST_F(GradCheck, Sub) {
  expect_ok(grad_check({rnd({5}, rng), rnd({5}, rng)}, [](Tp&, const Vs& v) { return ops::sub(v[0], v[1]); }, rng));
}
TEST_F(GradCheck, Mul) {
  expect_ok(grad_check({rnd({2, 6}, rng), rnd({2, 6}, rng)}, [](Tp&, const Vs& v) { return ops::mul(v[0], v[1]); }, rng));
}
TEST_F(GradCheck, AffineScalar) {
  expect_ok(grad_check({rnd({7}, rng)}, [](Tp&, const Vs& v) { return ops::affine_scalar(v[0], -2.5, 0.3); }, rng));
}
TEST_F(GradCheck, SumMeanSumSquares) {
  expect_ok(grad_check({rnd({4, 3}, rng)}, [](Tp&, const Vs& v) { return ops::sum(v[0]); }, rng));
  expect_ok(grad_check({rnd({4, 3}, rng)}, [](Tp&, const Vs& v) { return ops::mean(v[0]); }, rng));
  expect_ok(grad_check({rnd({4, 3}, rng)}, [](Tp&, const Vs& v) { return ops::sum_squares(v[0]); }, rng));
}
TEST_F(GradCheck, Reshape) {
  expect_ok(grad_check({rnd({4, 3}, rng)}, [](Tp&, const Vs& v) { return ops::reshape(v[0], Shape{2, 6}); }, rng));
}
TEST_F(GradCheck, Relu) {
  expect_ok(grad_check({away_from_zero({30}, rng)}, [](Tp&, const Vs& v) { return ops::relu(v[0]); }, rng));
}
TEST_F(GradCheck, Sigmoid) {
  expect_ok(grad_check({rnd({10}, rng, -4, 4)}, [](Tp&, const Vs& v) { return ops::sigmoid(v[0]); }, rng));
}
TEST_F(GradCheck, Clamp) {
  expect_ok(grad_check({away_from_zero({30}, rng)}, [](Tp&, const Vs& v) { return ops::clamp(v[0], 0.0, 0.5); }, rng));
}
TEST_F(GradCheck, Softmax) {
  expect_ok(grad_check({rnd({3, 5}, rng, -3, 3)}, [](Tp&, const Vs& v) { return ops::softmax(v[0]); }, rng));
}
TEST_F(GradCheck, LogSoftmax) {
  expect_ok(grad_check({rnd({3, 5}, rng, -3, 3)}, [](Tp&, const Vs& v) { return ops::log_softmax(v[0]); }, rng));
}
TEST_F(GradCheck, CrossEntropy) {
  expect_ok(grad_check({rnd({4, 3}, rng, -3, 3)}, [](Tp&, const Vs& v) { return ops::cross_entropy(v[0], {0, 2, 1, 2}); },
                       rng));
}
TEST_F(GradCheck, Dense) {
  expect_ok(grad_check({rnd({3, 5}, rng), rnd({4, 5}, rng), rnd({4}, rng)},
                       [](Tp&, const Vs& v) { return ops::dense(v[0], v[1], std::optional<V>(v[2])); }, rng));
}
TEST_F(GradCheck, Conv2dStridePadDilation) {
  for (auto [s, p, d] : {std::array<size_t, 3>{1, 1, 1}, {2, 1, 1}, {1, 2, 2}}) {
    expect_ok(grad_check({rnd({2, 2, 6, 6}, rng), rnd({3, 2, 3, 3}, rng), rnd({3}, rng)},
                         [s = s, p = p, d = d](Tp&, const Vs& v) {
                           return ops::conv2d(v[0], LayerSpec::conv(2, 3, 3, s, p, d), v[1], std::optional<V>(v[2]));
                         },
                         rng));
  }
}
TEST_F(GradCheck, MaxPool) {
  expect_ok(grad_check({rnd({1, 2, 6, 6}, rng)}, [](Tp&, const Vs& v) { return ops::maxpool2d(v[0], LayerSpec::pool(2, 2)); },
                       rng));
}
TEST_F(GradCheck, GlobalAvgPool) {
  expect_ok(grad_check({rnd({2, 3, 4, 4}, rng)}, [](Tp&, const Vs& v) { return ops::global_avgpool(v[0]); }, rng));
}
TEST_F(GradCheck, MeanAxis1) {
  expect_ok(grad_check({rnd({2, 3, 4}, rng)}, [](Tp&, const Vs& v) { return ops::mean_axis1(v[0]); }, rng));
}
TEST_F(GradCheck, WeightedSum) {
  expect_ok(grad_check({rnd({2, 3}, rng), rnd({2, 3}, rng), rnd({2, 3}, rng), rnd({3}, rng)},
                       [](Tp&, const Vs& v) { return ops::weighted_sum(Vs{v[0], v[1], v[2]}, v[3]); }, rng));
}
TEST_F(GradCheck, Average) {
  expect_ok(grad_check({rnd({5}, rng), rnd({5}, rng)}, [](Tp&, const Vs& v) { return ops::average(Vs{v[0], v[1]}); }, rng));
}
TEST_F(GradCheck, StackSelect) {
  expect_ok(grad_check({rnd({2, 3}, rng), rnd({2, 3}, rng)}, [](Tp&, const Vs& v) { return ops::stack_axis1(Vs{v[0], v[1]}); },
                       rng));
  expect_ok(grad_check({rnd({2, 3, 4}, rng)}, [](Tp&, const Vs& v) { return ops::select_axis1(v[0], 1); }, rng));
}
TEST_F(GradCheck, PickCrop) {
  expect_ok(grad_check({rnd({2, 3}, rng)}, [](Tp&, const Vs& v) { return ops::pick(v[0], 4); }, rng));
  expect_ok(grad_check({rnd({1, 2, 6, 6}, rng)}, [](Tp&, const Vs& v) { return ops::crop2d(v[0], 1, 2, 3, 3); }, rng));
}
TEST_F(GradCheck, ChannelNormTraining) {
  expect_ok(grad_check({rnd({3, 2, 3, 3}, rng), rnd({2}, rng, 0.5, 1.5), rnd({2}, rng)},
                       [](Tp&, const Vs& v) {
                         ops::ChannelNormState<double> st(2);
                         return ops::channel_norm(v[0], v[1], v[2], st, true);
                       },
                       rng));
}
TEST_F(GradCheck, ChannelScale) {
  expect_ok(grad_check({rnd({2, 3, 2, 2}, rng), rnd({3}, rng)},
                       [](Tp&, const Vs& v) { return ops::channel_scale(v[0], v[1]); }, rng));
}
TEST_F(GradCheck, UpsampleBilinear) {
  expect_ok(grad_check({rnd({1, 2, 3, 3}, rng)}, [](Tp&, const Vs& v) { return ops::upsample_bilinear(v[0], 7, 5); }, rng));
}

TEST_F(GradCheck, WarpEveryAffineKind) {
  for (auto k : {TransformKind::TranslateX, TransformKind::TranslateY, TransformKind::Rotate, TransformKind::Scale,
                 TransformKind::ShearX, TransformKind::ShearY}) {
    SCOPED_TRACE(to_string(k));
    expect_ok(grad_check({rnd({2, 3, 8, 8}, rng, 0, 1)}, [k](Tp&, const Vs& v) { return ops::apply(TransformOp(k), v[0]); },
                         rng));
  }
}

TEST_F(GradCheck, SmoothPixelOps) {
  // inputs in [0.3, 0.6] keep every op's output strictly inside (0,1), away from the clamp
  for (auto k : {TransformKind::Invert, TransformKind::Color, TransformKind::Brightness, TransformKind::Sharpness,
                 TransformKind::Cutout}) {
    SCOPED_TRACE(to_string(k));
    expect_ok(grad_check({rnd({2, 3, 6, 6}, rng, 0.3, 0.6)},
                         [k](Tp&, const Vs& v) { return ops::apply(TransformOp(k), v[0]); }, rng));
  }
}

TEST_F(GradCheck, CrossEntropyDense) {
  expect_ok(grad_check({rnd({2, 3, 4, 4}, rng)},
                       [](Tp&, const Vs& v) {
                         std::vector<int> labels(32);
                         for (size_t i = 0; i < labels.size(); ++i) labels[i] = i % 5 == 0 ? -1 : static_cast<int>(i % 3);
                         return ops::cross_entropy_dense(v[0], labels);
                       },
                       rng));
}

TEST_F(GradCheck, MixedEdge) {
  const CellEdge e{0, 1, {TransformKind::Identity, TransformOp(TransformKind::Rotate, 20.0), TransformKind::Invert}};
  expect_ok(grad_check({rnd({2, 1, 6, 6}, rng, 0.3, 0.6), rnd({3}, rng)},
                       [&e](Tp&, const Vs& v) { return ops::mixed_edge_forward(e, v[0], v[1]); }, rng));
}

TEST_F(GradCheck, CellForwardDag) {
  const CellSpec cell = CellSpec::dense_dag(
      1, 2, {TransformKind::Identity, TransformOp(TransformKind::TranslateX, 0.1), TransformOp(TransformKind::Scale, 1.2)},
      CellOutput::mean_of_intermediates);
  expect_ok(grad_check({rnd({1, 2, 6, 6}, rng, 0.3, 0.6), rnd({3}, rng), rnd({3}, rng), rnd({3}, rng)},
                       [&cell](Tp&, const Vs& v) {
                         std::vector<V> w{ops::softmax(v[1]), ops::softmax(v[2]), ops::softmax(v[3])};
                         return ops::cell_forward_weighted(cell, v[0], w);
                       },
                       rng));
}

TEST_F(GradCheck, TemporalShift) {
  expect_ok(grad_check({rnd({6, 8, 2, 2}, rng)}, [](Tp&, const Vs& v) { return ops::temporal_shift(v[0], 3, 2); }, rng));
}

TEST_F(GradCheck, GatedShift) {
  expect_ok(grad_check({rnd({6, 8, 2, 2}, rng), rnd({4}, rng)},
                       [](Tp&, const Vs& v) { return ops::gated_shift(v[0], v[1], 3, 2); }, rng));
}

TEST_F(GradCheck, UndoAndAverage) {
  const std::vector<AffineTransform> ts{AffineTransform::translation(0.2, 0.0), AffineTransform::rotation(15.0),
                                        AffineTransform::scaling(1.3)};
  expect_ok(grad_check({rnd({1, 3, 2, 6, 6}, rng)}, [&ts](Tp&, const Vs& v) { return ops::undo_and_average(v[0], ts); },
                       rng));
}
