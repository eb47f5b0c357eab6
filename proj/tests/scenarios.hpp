// Constructed experiments shared by the unit tests and the acceptance runner.
#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "das/backbone/backbone.hpp"
#include "das/cell/discretize.hpp"
#include "das/cell/theta.hpp"
#include "das/core/optim.hpp"
#include "das/data/ablation.hpp"
#include "das/search/search.hpp"

namespace scenarios {

using namespace das;

// ------------------------------------------------------------------ images

// Smooth random field: sum of a few low-frequency cosines, rescaled to [0,1].
inline Tensor<double> natural_image(size_t c, size_t h, size_t w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  Tensor<double> t(Shape{c, h, w});
  for (size_t ch = 0; ch < c; ++ch) {
    for (int k = 0; k < 4; ++k) {
      const double fx = u(rng) * 0.5, fy = u(rng) * 0.5, ph = u(rng) * 6.283, a = u(rng);
      for (size_t r = 0; r < h; ++r)
        for (size_t col = 0; col < w; ++col) t.at(ch, r, col) += a * std::cos(fx * col + fy * r + ph);
    }
    double lo = 1e9, hi = -1e9;
    for (size_t i = ch * h * w; i < (ch + 1) * h * w; ++i) lo = std::min(lo, t[i]), hi = std::max(hi, t[i]);
    for (size_t i = ch * h * w; i < (ch + 1) * h * w; ++i) t[i] = (t[i] - lo) / (hi - lo);
  }
  return t;
}

inline double interior_mae(const Tensor<double>& a, const Tensor<double>& b, size_t margin) {
  const size_t C = a.dim(0), H = a.dim(1), W = a.dim(2);
  double s = 0;
  size_t n = 0;
  for (size_t ch = 0; ch < C; ++ch)
    for (size_t r = margin; r + margin < H; ++r)
      for (size_t c = margin; c + margin < W; ++c) s += std::abs(a.at(ch, r, c) - b.at(ch, r, c)), ++n;
  return s / n;
}

inline Tensor<double> one_hot_image(size_t h, size_t w, size_t r, size_t c) {
  Tensor<double> x(Shape{1, 1, h, w});
  x[r * w + c] = 1.0;
  return x;
}

// ------------------------------------------------------------ temporal coupling

// coupling[t][u] = Σ|∂ logits_t / ∂ frame_u| for a backbone whose first n blocks after the
// stem carry fully open gated shifts.
inline std::vector<std::vector<double>> temporal_coupling(size_t nshift, size_t nt) {
  std::mt19937_64 rng(100 + nshift);
  BackboneSpec s;
  s.depth = 4;
  s.width = 16;
  s.in_channels = 1;
  s.classes = 3;
  s.shift_mode = ShiftMode::gated_shift;
  for (size_t b = 1; b <= nshift; ++b) s.shift_points.push_back(b);
  Backbone<double> net(s, rng);
  for (size_t b = 1; b <= nshift; ++b) net.gate(b)->value.fill(40.0);
  auto x = Tensor<double>::uniform(Shape{nt, 1, 6, 6}, rng, 0.5, 1.0);
  std::vector<std::vector<double>> out(nt, std::vector<double>(nt, 0.0));
  for (size_t t = 0; t < nt; ++t) {
    Tape<double> tape;
    auto xv = tape.leaf(x);
    auto y = net.forward(xv, nt, RunMode::eval);
    tape.backward(ops::sum(ops::select_axis1(ops::reshape(y, Shape{1, nt, 3}), t)));
    const auto g = tape.grad(xv);
    for (size_t u = 0; u < nt; ++u)
      for (size_t q = 0; q < 36; ++q) out[t][u] += std::abs(g[u * 36 + q]);
  }
  return out;
}

// ---------------------------------------------------------------- theta oracle

inline ThetaOracle<double> random_theta_oracle(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.2, 1.5);
  for (;;) {
    ThetaOracle<double> o;
    o.m_star = Tensor<double>::uniform(Shape{6, 6}, rng);
    const double a = u(rng), b = u(rng), c = u(rng) - 0.7;
    for (int s = 0; s < 8; ++s) {
      auto shared = Tensor<double>::normal(Shape{6, 6}, rng);
      auto ni = Tensor<double>::normal(Shape{6, 6}, rng), nt = Tensor<double>::normal(Shape{6, 6}, rng);
      Tensor<double> xi(o.m_star.shape()), xt(o.m_star.shape());
      for (size_t i = 0; i < xi.size(); ++i) {
        xi[i] = o.m_star[i] + a * ni[i] + 0.5 * shared[i];
        xt[i] = o.m_star[i] + b * nt[i] + c * shared[i];
      }
      o.samples_x_I.push_back(xi);
      o.samples_x_T.push_back(xt);
    }
    const double t = theta_star(o).theta_T;
    if (t > -1.9 && t < 2.9) return o;
  }
}

// argmin over θ_T on a 1e-3 grid of var(θ_T x_T + (1−θ_T) x_I − m*).
inline double grid_theta_T(const ThetaOracle<double>& o) {
  double best = 0, best_v = 1e300;
  for (int i = -2000; i <= 3000; ++i) {
    const double t = i * 1e-3;
    const double v = mixture_variance(o, t);
    if (v < best_v) best_v = v, best = t;
  }
  return best;
}

// Shared fluctuation fixed; the branch named by `identity_closer` gets the smaller private noise.
inline ThetaOracle<double> ordered_theta_oracle(std::mt19937_64& rng, bool identity_closer) {
  std::uniform_real_distribution<double> small(0.1, 0.5), extra(0.05, 1.0);
  const double lo = small(rng), hi = lo + extra(rng);
  const double si = identity_closer ? lo : hi, st = identity_closer ? hi : lo;
  ThetaOracle<double> o;
  o.m_star = Tensor<double>::uniform(Shape{8, 8}, rng);
  for (int s = 0; s < 6; ++s) {
    auto shared = Tensor<double>::normal(Shape{8, 8}, rng, 0.0, 0.3);
    auto ni = Tensor<double>::normal(Shape{8, 8}, rng), nt = Tensor<double>::normal(Shape{8, 8}, rng);
    Tensor<double> xi(o.m_star.shape()), xt(o.m_star.shape());
    for (size_t i = 0; i < xi.size(); ++i) {
      xi[i] = o.m_star[i] + si * ni[i] + shared[i];
      xt[i] = o.m_star[i] + st * nt[i] + shared[i];
    }
    o.samples_x_I.push_back(xi);
    o.samples_x_T.push_back(xt);
  }
  return o;
}

// ------------------------------------------------------- discretization oracle

struct OracleResult {
  int trials = 0;
  int agree = 0;
};

// Plants a random discrete cell, fits the mixture logits to reproduce its output (the
// "network" is frozen to the identity and scored by −MSE), then compares perturbation
// selection with the best of all discrete cells under the same metric.
inline OracleResult discretization_oracle(int trials, std::uint64_t seed) {
  using Kd = TransformKind;
  std::mt19937_64 rng(seed);
  OracleResult res;
  const std::vector<TransformOp> pool{TransformOp(Kd::TranslateX, 0.125), TransformOp(Kd::TranslateY, 0.125),
                                      TransformOp(Kd::Scale, 1.25), TransformOp(Kd::Rotate, 20.0)};
  for (int t = 0; t < trials; ++t) {
    const size_t n_edges = 1 + rng() % 3, n_ops = 2 + rng() % 2;
    std::vector<TransformOp> cands{Kd::Identity};
    std::vector<size_t> idx{0, 1, 2, 3};
    std::shuffle(idx.begin(), idx.end(), rng);
    for (size_t k = 0; k + 1 < n_ops; ++k) cands.push_back(pool[idx[k]]);
    const CellSpec cell = (n_edges == 3 && rng() % 2) ? CellSpec::dense_dag(1, 2, cands, CellOutput::last_node)
                                                      : CellSpec::chain(n_edges, cands);
    std::vector<size_t> planted;
    for (size_t e = 0; e < cell.edges.size(); ++e) planted.push_back(rng() % n_ops);
    const auto g = Genotype::from_choice(cell, planted, SearchSpace::affine5);

    const auto x = Tensor<double>::uniform(Shape{6, 1, 12, 12}, rng);
    const auto target = genotype_forward(g, x);
    auto metric = [&](const EdgeWeights<double>& w) {
      Tape<double> tape;
      const auto y = ops::cell_forward_fixed(cell, w, tape.constant(x));
      double s = 0;
      for (size_t i = 0; i < target.size(); ++i) s += (y.value()[i] - target[i]) * (y.value()[i] - target[i]);
      return -s / static_cast<double>(target.size());
    };

    CellParams<double> params(cell);
    for (auto& p : params.tau) p.value = Tensor<double>::normal(p.value.shape(), rng);
    Adam<double> opt(0.1, 0.0, 0.9);
    for (int step = 0; step < 150; ++step) {
      Tape<double> tape;
      auto y = ops::cell_forward(cell, params, tape.constant(x), true);
      auto d = ops::sub(y, tape.constant(target));
      tape.backward(ops::mean(ops::mul(d, d)));
      opt.step(params.pointers());
    }
    const auto rep = perturbation_select<double>(cell, mixture_weights(params), metric);

    // exhaustive enumeration of every discrete cell
    auto one_hot = [&](const std::vector<size_t>& ch) {
      EdgeWeights<double> w;
      for (size_t e = 0; e < ch.size(); ++e) {
        w.emplace_back(n_ops, 0.0);
        w.back()[ch[e]] = 1.0;
      }
      return w;
    };
    double best = -1e300;
    std::vector<size_t> ch(cell.edges.size(), 0);
    for (;;) {
      best = std::max(best, metric(one_hot(ch)));
      size_t e = 0;
      while (e < ch.size() && ++ch[e] == n_ops) ch[e++] = 0;
      if (e == ch.size()) break;
    }
    ++res.trials;
    // cells with identical outputs tie at the top; any of them counts as the top-1
    if (metric(one_hot(rep.choice)) >= best - 1e-12) ++res.agree;
  }
  return res;
}

// -------------------------------------------------------------- identity bias

// Linear classifier over a fixed column window of the frame.
class WindowProbe : public Model<double> {
 public:
  WindowProbe(size_t col0, size_t cols, size_t rows)
      : col0_(col0), cols_(cols), rows_(rows),
        w_("probe.w", Tensor<double>(Shape{2, rows * cols})),
        b_("probe.b", Tensor<double>(Shape{2})) {}
  std::vector<Parameter<double>*> parameters() override { return {&w_, &b_}; }
  Var<double> forward(const Var<double>& x, size_t, RunMode mode) override {
    const bool tr = mode == RunMode::train;
    auto win = ops::reshape(ops::crop2d(x, 0, col0_, rows_, cols_), Shape{x.shape()[0], rows_ * cols_});
    return ops::dense(win, x.tape->param(w_, tr), x.tape->param(b_, tr));
  }

 private:
  size_t col0_, cols_, rows_;
  Parameter<double> w_, b_;
};

struct IdentityBiasRun {
  std::vector<size_t> argmax;       // per edge
  Genotype perturbation;            // selected genotype
  std::vector<std::vector<double>> weights;
  double base_metric = 0;
};

// Two-edge chain on 8x16 images whose columns are constant. Edge 1 offers {Identity,
// TranslateY}, which does nothing to column-constant content, so edge 2 always sees the
// mixed output of edge 1. Edge 2 offers {Identity, TranslateX by 4 px}. A probe reads
// columns 8..11: under Identity it sees a large cue that agrees with the label 75% of the
// time; TranslateX pushes that cue out and brings in a small cue from columns 4..7 that always
// agrees. The discrete optimum is TranslateX on edge 2. With the probe's gain held down by
// weight decay, the validation loss still prefers the large cue, so the logits drift to
// Identity while masking Identity is what raises accuracy.
inline IdentityBiasRun identity_bias_run(std::uint64_t seed) {
  using Kd = TransformKind;
  constexpr size_t H = 8, W = 16, N = 400;
  constexpr double big = 0.2, small = 0.04;
  std::mt19937_64 rng(1000 + seed);
  Dataset<double> d;
  d.classes = 2;
  d.images = Tensor<double>(Shape{N, 1, H, W});
  std::normal_distribution<double> noise(0, 0.01);
  std::bernoulli_distribution agree(0.75);
  for (size_t i = 0; i < N; ++i) {
    const int y = static_cast<int>(i % 2);
    d.labels.push_back(y);
    const double sg = y ? 1.0 : -1.0, cue = agree(rng) ? sg : -sg;
    for (size_t c = 0; c < W; ++c) {
      const double v = (c >= 4 && c < 8 ? small * sg : 0.0) + (c >= 8 && c < 12 ? big * cue : 0.0) + noise(rng);
      for (size_t r = 0; r < H; ++r) d.images[(i * H + r) * W + c] = v;
    }
  }
  CellSpec cell = CellSpec::chain(2, {TransformOp(Kd::Identity), TransformOp(Kd::TranslateY, 1.0 / 8)});
  cell.edges[1].candidates = {TransformOp(Kd::Identity), TransformOp(Kd::TranslateX, 4.0 / 16)};
  WindowProbe probe(8, 4, H);
  SearchConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 32;
  cfg.lr_w = 0.1;
  cfg.schedule = LrSchedule::poly;
  cfg.weight_decay_w = 0.5;
  cfg.lr_tau = 0.05;
  cfg.frames = 1;
  cfg.seed = seed;
  auto res = search(cell, SearchSpace::affine5, probe, d, cfg);
  return {argmax_tau(res.params), res.genotype, mixture_weights(res.params), res.report.final_metric};
}

// ---------------------------------------------------------------- corner cue

// Residual backbone with one block: receptive field 7, GAP head. On the corner-cue task it
// cannot see a glyph and a border at once, so still images leave it at chance.
inline RunConfig corner_cue_config(std::uint64_t seed, const std::string& cell = "chain:2") {
  RunConfig c;
  c.search_space = SearchSpace::affine5;
  c.cell = cell;
  c.backbone.kind = BackboneKind::mini_resnet;
  c.backbone.depth = 1;
  c.backbone.width = 8;
  c.backbone.in_channels = 1;
  c.backbone.classes = 2;
  c.backbone.shift_points = {0};
  c.search.epochs = 8;
  c.search.batch_size = 32;
  c.search.lr_w = 0.1;
  c.search.lr_tau = 0.01;
  c.search.frames = 4;
  c.search.seed = seed;
  c.dataset.kind = DatasetKind::synthetic_corner_cue;
  c.dataset.train = 512;
  c.dataset.test = 256;
  c.dataset.seed = seed;
  return c;
}

}  // namespace scenarios
