#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "das/core/ops.hpp"
#include "das/temporal/video.hpp"

namespace das {

enum class ShiftMode { tsm_fixed, gated_shift };

inline std::string to_string(ShiftMode m) { return m == ShiftMode::tsm_fixed ? "tsm_fixed" : "gated_shift"; }

inline ShiftMode parse_shift_mode(const std::string& s) {
  if (s == "tsm_fixed") return ShiftMode::tsm_fixed;
  if (s == "gated_shift") return ShiftMode::gated_shift;
  throw ConfigError("unknown shift mode '" + s + "'");
}

struct ShiftConfig {
  ShiftMode mode = ShiftMode::tsm_fixed;
  double shift_fraction = 1.0 / 8;  // per direction
  std::vector<std::size_t> insertion_points;

  void validate() const {
    DAS_CHECK(shift_fraction > 0 && 2 * shift_fraction <= 1, ConfigError,
              "shift fraction must satisfy 0 < 2f <= 1, got " + std::to_string(shift_fraction));
  }

  // Channels moved in each direction.
  std::size_t fold(std::size_t channels) const {
    validate();
    const auto f = static_cast<std::size_t>(std::floor(static_cast<double>(channels) * shift_fraction + 1e-9));
    DAS_CHECK(f >= 1, ConfigError,
              "shift fraction " + std::to_string(shift_fraction) + " moves no channel out of " + std::to_string(channels));
    return f;
  }
};

namespace ops {

namespace detail {

// out = x + s_c·(shift(x) − x) on the first 2·fold channels. shift() pulls channel group 0
// from frame t−1 and group 1 from frame t+1; boundary frames read zeros. T = 1 is a no-op.
template <typename T>
Var<T> shift_impl(const Var<T>& x, std::size_t frames, std::size_t fold, const std::optional<Var<T>>& gate) {
  const Shape& s = x.shape();
  DAS_CHECK(s.size() >= 2, DimensionError, "temporal shift expects [N*T,C,...] features");
  DAS_CHECK(frames >= 1 && s[0] % frames == 0, DimensionError,
            "batch " + std::to_string(s[0]) + " is not a multiple of T = " + std::to_string(frames));
  const std::size_t c = s[1];
  DAS_CHECK(2 * fold <= c, ConfigError, "shift moves more channels than exist");
  if (frames == 1) return x;
  const std::size_t n = s[0] / frames, inner = x.value().size() / (s[0] * c);
  std::vector<T> sc(2 * fold, T(1));
  if (gate) {
    DAS_CHECK(gate->shape() == Shape{2 * fold}, DimensionError, "gate length must be 2 * fold");
    for (std::size_t k = 0; k < 2 * fold; ++k) sc[k] = T(1) / (T(1) + std::exp(-gate->value()[k]));
  }
  // source frame for channel k at frame t, or -1 for zero fill
  auto src = [frames, fold](std::size_t k, std::size_t t) -> long {
    if (k < fold) return t == 0 ? -1 : static_cast<long>(t) - 1;
    return t + 1 == frames ? -1 : static_cast<long>(t) + 1;
  };
  const auto& xv = x.value();
  Tensor<T> out = xv;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t k = 0; k < 2 * fold; ++k) {
        const long st = src(k, t);
        T* o = out.ptr() + (((i * frames + t) * c) + k) * inner;
        const T* own = xv.ptr() + (((i * frames + t) * c) + k) * inner;
        const T* from = st < 0 ? nullptr : xv.ptr() + (((i * frames + st) * c) + k) * inner;
        for (std::size_t q = 0; q < inner; ++q) {
          const T v = from ? from[q] : T(0);
          o[q] = gate ? own[q] + sc[k] * (v - own[q]) : v;  // the fixed shift copies exactly
        }
      }
  std::vector<Var<T>> inputs{x};
  if (gate) inputs.push_back(*gate);
  return x.tape->record(std::move(out), inputs, [=](Tape<T>& tp, const Tensor<T>& g) {
    const auto& xv = tp.value(x);
    T* gx = tp.grad_ptr(x);
    T* gg = gate ? tp.grad_ptr(*gate) : nullptr;
    if (gx)
      for (std::size_t i = 0; i < s[0] * c * inner; ++i) {
        const std::size_t k = (i / inner) % c;
        if (k >= 2 * fold) gx[i] += g[i];
      }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t k = 0; k < 2 * fold; ++k) {
          const long st = src(k, t);
          const std::size_t o = (((i * frames + t) * c) + k) * inner;
          const std::size_t f = st < 0 ? 0 : (((i * frames + st) * c) + k) * inner;
          for (std::size_t q = 0; q < inner; ++q) {
            if (gx) {
              gx[o + q] += (T(1) - sc[k]) * g[o + q];
              if (st >= 0) gx[f + q] += sc[k] * g[o + q];
            }
            if (gg) {
              const T diff = (st < 0 ? T(0) : xv[f + q]) - xv[o + q];
              gg[k] += g[o + q] * diff * sc[k] * (T(1) - sc[k]);
            }
          }
        }
  });
}

}  // namespace detail

// Fixed shift of `fold` channels each way along T; x is [N*T, C, ...] with frames contiguous.
template <typename T>
Var<T> temporal_shift(const Var<T>& x, std::size_t frames, std::size_t fold) {
  return detail::shift_impl<T>(x, frames, fold, std::nullopt);
}

// Shifted channels blended with the originals through sigmoid(gate), gate of length 2*fold.
template <typename T>
Var<T> gated_shift(const Var<T>& x, const Var<T>& gate, std::size_t frames, std::size_t fold) {
  return detail::shift_impl<T>(x, frames, fold, gate);
}

// [N,T,K] -> [N,K]; the loss is computed on this mean.
template <typename T>
Var<T> aggregate_classification(const Var<T>& logits) {
  DAS_CHECK(logits.shape().size() == 3, DimensionError, "aggregate_classification expects [N,T,K]");
  return mean_axis1(logits);
}

// Per-pixel undo: out[n,k] = Σ_t warp(inv_t, maps[n,t,k]) / Σ_t coverage_t, where coverage is
// the in-bounds share of each pixel's bilinear taps. Pixels no frame covers stay 0.
template <typename T>
Var<T> undo_and_average(const Var<T>& maps, const std::vector<AffineTransform>& transforms,
                        std::shared_ptr<std::vector<T>> coverage_out = nullptr) {
  const Shape& s = maps.shape();
  DAS_CHECK(s.size() == 5, DimensionError, "segmentation maps must be [N,T,K,H,W]");
  DAS_CHECK(s[1] == transforms.size(), DimensionError, "one transform per frame required");
  const std::size_t n = s[0], nt = s[1], k = s[2], h = s[3], w = s[4], hw = h * w;
  auto samplers = std::make_shared<std::vector<Sampler>>();
  for (const auto& t : transforms) samplers->emplace_back(inverse(t, "frame transform"), h, w);
  auto cov = std::make_shared<std::vector<T>>(hw, T(0));
  {
    std::vector<T> ones(hw, T(1)), tmp(hw);
    for (const auto& sp : *samplers) {
      sp.forward(ones.data(), tmp.data());
      for (std::size_t p = 0; p < hw; ++p) (*cov)[p] += tmp[p];
    }
  }
  if (coverage_out) *coverage_out = *cov;
  Tensor<T> out(Shape{n, k, h, w});
  std::vector<T> tmp(hw);
  const auto& mv = maps.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < nt; ++t)
      for (std::size_t c = 0; c < k; ++c) {
        (*samplers)[t].forward(mv.ptr() + ((i * nt + t) * k + c) * hw, tmp.data());
        T* o = out.ptr() + (i * k + c) * hw;
        for (std::size_t p = 0; p < hw; ++p) o[p] += tmp[p];
      }
  for (std::size_t i = 0; i < n * k; ++i)
    for (std::size_t p = 0; p < hw; ++p) {
      T& v = out[i * hw + p];
      v = (*cov)[p] > T(1e-9) ? v / (*cov)[p] : T(0);
    }
  return maps.tape->record(std::move(out), {maps}, [=](Tape<T>& tp, const Tensor<T>& g) {
    T* gm = tp.grad_ptr(maps);
    if (!gm) return;
    std::vector<T> scaled(hw);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t p = 0; p < hw; ++p)
          scaled[p] = (*cov)[p] > T(1e-9) ? g[(i * k + c) * hw + p] / (*cov)[p] : T(0);
        for (std::size_t t = 0; t < nt; ++t) (*samplers)[t].adjoint(scaled.data(), gm + ((i * nt + t) * k + c) * hw);
      }
  });
}

}  // namespace ops

// Tensor shortcut of the fixed shift.
template <typename T>
Tensor<T> temporal_shift(const Tensor<T>& features, std::size_t frames, const ShiftConfig& cfg) {
  DAS_CHECK(cfg.mode == ShiftMode::tsm_fixed, ConfigError, "the tensor shortcut only covers tsm_fixed");
  Tape<T> tape;
  Shape s = features.shape();
  Tensor<T> x = features;
  if (s.size() == 5) x = features.reshaped(Shape{s[0] * s[1], s[2], s[3], s[4]});
  const std::size_t nt = s.size() == 5 ? s[1] : frames;
  auto y = ops::temporal_shift(tape.constant(x), nt, cfg.fold(x.dim(1)));
  return y.value().reshaped(s);
}

template <typename T>
Tensor<T> aggregate_classification(const Tensor<T>& logits) {
  Tape<T> tape;
  return ops::aggregate_classification(tape.constant(logits)).value();
}

template <typename T>
struct SegmentationResult {
  Tensor<T> maps;             // [N,K,H,W]
  std::vector<unsigned char> valid;  // [H*W]; 0 where no frame maps back inside the image
};

template <typename T>
SegmentationResult<T> aggregate_segmentation(const Tensor<T>& maps, const VideoBatch<T>& video) {
  DAS_CHECK(video.exact_geometry, ConfigError,
            "segmentation undo needs a cell whose paths share one geometric transform");
  Tape<T> tape;
  auto cov = std::make_shared<std::vector<T>>();
  SegmentationResult<T> r;
  r.maps = ops::undo_and_average(tape.constant(maps), video.per_frame_transform, cov).value();
  for (T c : *cov) r.valid.push_back(c > T(1e-9) ? 1 : 0);
  return r;
}

}  // namespace das
