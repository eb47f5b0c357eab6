#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <vector>

#include "das/core/ops.hpp"
#include "das/transforms/affine.hpp"

namespace das {

enum class FillPolicy { zeros, replicate };

// Bilinear taps for every output pixel of an HxW grid under an affine map. The taps only
// depend on geometry, so one sampler serves every channel and batch element.
class Sampler {
 public:
  struct Tap {
    std::array<std::ptrdiff_t, 4> index{-1, -1, -1, -1};  // -1: out of bounds (fill)
    std::array<double, 4> weight{0, 0, 0, 0};
  };

  Sampler(const AffineTransform& t, std::size_t h, std::size_t w, FillPolicy fill = FillPolicy::zeros)
      : h_(h), w_(w), taps_(h * w) {
    const double H = static_cast<double>(h), W = static_cast<double>(w);
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) {
        const double xn = (2.0 * static_cast<double>(c) + 1.0) / W - 1.0;
        const double yn = 1.0 - (2.0 * static_cast<double>(r) + 1.0) / H;
        const auto [xi, yi] = t.apply(xn, yn);
        double cx = ((xi + 1.0) * W - 1.0) / 2.0;
        double ry = ((1.0 - yi) * H - 1.0) / 2.0;
        cx = snap(cx);
        ry = snap(ry);
        if (fill == FillPolicy::replicate) {
          cx = std::clamp(cx, 0.0, W - 1.0);
          ry = std::clamp(ry, 0.0, H - 1.0);
        }
        const double fx = std::floor(cx), fy = std::floor(ry);
        const double ax = cx - fx, ay = ry - fy;
        const auto x0 = static_cast<std::ptrdiff_t>(fx), y0 = static_cast<std::ptrdiff_t>(fy);
        Tap& tap = taps_[r * w + c];
        const std::ptrdiff_t xs[2] = {x0, x0 + 1}, ys[2] = {y0, y0 + 1};
        const double wx[2] = {1 - ax, ax}, wy[2] = {1 - ay, ay};
        for (int j = 0; j < 2; ++j)
          for (int i = 0; i < 2; ++i) {
            const int k = j * 2 + i;
            const double wt = wx[i] * wy[j];
            if (wt == 0.0) continue;
            if (xs[i] < 0 || ys[j] < 0 || xs[i] >= static_cast<std::ptrdiff_t>(w) ||
                ys[j] >= static_cast<std::ptrdiff_t>(h))
              continue;
            tap.index[k] = ys[j] * static_cast<std::ptrdiff_t>(w) + xs[i];
            tap.weight[k] = wt;
          }
      }
  }

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }

  // out[p] = Σ w·in[idx] for one HxW plane.
  template <typename T>
  void forward(const T* in, T* out) const {
    for (std::size_t p = 0; p < taps_.size(); ++p) {
      const Tap& tap = taps_[p];
      T s = 0;
      for (int k = 0; k < 4; ++k)
        if (tap.index[k] >= 0) s += static_cast<T>(tap.weight[k]) * in[tap.index[k]];
      out[p] = s;
    }
  }

  // Adjoint of forward(): scatter-add.
  template <typename T>
  void adjoint(const T* gout, T* gin) const {
    for (std::size_t p = 0; p < taps_.size(); ++p) {
      const Tap& tap = taps_[p];
      for (int k = 0; k < 4; ++k)
        if (tap.index[k] >= 0) gin[tap.index[k]] += static_cast<T>(tap.weight[k]) * gout[p];
    }
  }

  // True when at least one tap of output pixel p lands inside the source image.
  bool maps_inside(std::size_t p) const {
    for (int k = 0; k < 4; ++k)
      if (taps_[p].index[k] >= 0) return true;
    return false;
  }

 private:
  static double snap(double v) {
    const double r = std::round(v);
    return std::abs(v - r) < 1e-9 ? r : v;
  }

  std::size_t h_, w_;
  std::vector<Tap> taps_;
};

// Warps every HxW plane of a rank>=2 tensor (trailing two axes are spatial).
template <typename T>
Tensor<T> warp(const AffineTransform& t, const Tensor<T>& img, FillPolicy fill = FillPolicy::zeros) {
  DAS_CHECK(img.rank() >= 2, DimensionError, "warp expects at least two spatial axes");
  const std::size_t h = img.shape()[img.rank() - 2], w = img.shape()[img.rank() - 1];
  if (t.is_identity()) return img;
  const Sampler s(t, h, w, fill);
  Tensor<T> out(img.shape());
  for (std::size_t p = 0; p < img.size() / (h * w); ++p) s.forward(img.ptr() + p * h * w, out.ptr() + p * h * w);
  return out;
}

namespace ops {

// Differentiable in the image; the transform is a fixed constant.
template <typename T>
Var<T> warp(const Var<T>& x, const AffineTransform& t, FillPolicy fill = FillPolicy::zeros) {
  const auto& xv = x.value();
  DAS_CHECK(xv.rank() >= 2, DimensionError, "warp expects at least two spatial axes");
  const std::size_t h = xv.shape()[xv.rank() - 2], w = xv.shape()[xv.rank() - 1];
  const std::size_t planes = xv.size() / (h * w);
  auto sampler = std::make_shared<Sampler>(t, h, w, fill);
  Tensor<T> out(xv.shape());
  for (std::size_t p = 0; p < planes; ++p) sampler->forward(xv.ptr() + p * h * w, out.ptr() + p * h * w);
  return x.tape->record(std::move(out), {x}, [x, sampler, planes, h, w](Tape<T>& tp, const Tensor<T>& g) {
    if (T* gx = tp.grad_ptr(x))
      for (std::size_t p = 0; p < planes; ++p) sampler->adjoint(g.ptr() + p * h * w, gx + p * h * w);
  });
}

}  // namespace ops

}  // namespace das
