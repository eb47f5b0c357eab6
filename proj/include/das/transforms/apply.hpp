#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "das/core/ops.hpp"
#include "das/transforms/registry.hpp"
#include "das/transforms/warp.hpp"

namespace das {

namespace pixel {

// Shapes are [..., C, H, W]; every function loops over the leading batch of images.
struct Geometry {
  std::size_t images, c, h, w;
};

template <typename T>
Geometry geometry(const Tensor<T>& t) {
  DAS_CHECK(t.rank() == 3 || t.rank() == 4, DimensionError,
            "image op expects [C,H,W] or [N,C,H,W], got " + shape_str(t.shape()));
  const std::size_t r = t.rank();
  const std::size_t c = t.dim(r - 3), h = t.dim(r - 2), w = t.dim(r - 1);
  return {t.size() / (c * h * w), c, h, w};
}

template <typename T>
void autocontrast(const Tensor<T>& in, Tensor<T>& out) {
  const auto g = geometry(in);
  const std::size_t hw = g.h * g.w;
  for (std::size_t p = 0; p < g.images * g.c; ++p) {
    const T* x = in.ptr() + p * hw;
    T* y = out.ptr() + p * hw;
    const auto [lo, hi] = std::minmax_element(x, x + hw);
    const T range = *hi - *lo;
    for (std::size_t i = 0; i < hw; ++i) y[i] = range > T(0) ? (x[i] - *lo) / range : x[i];
  }
}

// Histogram equalization over 256 levels per channel.
template <typename T>
void equalize(const Tensor<T>& in, Tensor<T>& out) {
  const auto g = geometry(in);
  const std::size_t hw = g.h * g.w;
  for (std::size_t p = 0; p < g.images * g.c; ++p) {
    const T* x = in.ptr() + p * hw;
    T* y = out.ptr() + p * hw;
    std::array<std::size_t, 256> hist{};
    std::vector<int> level(hw);
    for (std::size_t i = 0; i < hw; ++i) {
      level[i] = static_cast<int>(std::lround(std::clamp<double>(x[i], 0.0, 1.0) * 255.0));
      ++hist[level[i]];
    }
    std::array<std::size_t, 256> cdf{};
    std::size_t acc = 0;
    for (int l = 0; l < 256; ++l) cdf[l] = (acc += hist[l]);
    std::size_t cdf_min = 0;
    for (int l = 0; l < 256; ++l)
      if (hist[l]) {
        cdf_min = cdf[l];
        break;
      }
    const double denom = static_cast<double>(hw - cdf_min);
    for (std::size_t i = 0; i < hw; ++i)
      y[i] = denom > 0 ? static_cast<T>(static_cast<double>(cdf[level[i]] - cdf_min) / denom) : x[i];
  }
}

template <typename T>
void solarize(const Tensor<T>& in, Tensor<T>& out, double threshold) {
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] >= static_cast<T>(threshold) ? T(1) - in[i] : in[i];
}

template <typename T>
void posterize(const Tensor<T>& in, Tensor<T>& out, int bits) {
  const int shift = 8 - bits;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const int v = static_cast<int>(std::floor(std::clamp<double>(in[i], 0.0, 1.0) * 255.0 + 1e-9));
    out[i] = static_cast<T>(((v >> shift) << shift) / 255.0);
  }
}

// Channel weights used by Color for the grayscale reference.
inline std::vector<double> gray_weights(std::size_t c) {
  if (c == 3) return {0.299, 0.587, 0.114};
  return std::vector<double>(c, 1.0 / static_cast<double>(c));
}

// out = gray + f·(x - gray); linear, so the same routine serves as its own adjoint
// after transposing the gray projection.
template <typename T>
void color(const T* x, T* y, const Geometry& g, double f, bool adjoint) {
  const std::size_t hw = g.h * g.w;
  const auto wts = gray_weights(g.c);
  for (std::size_t n = 0; n < g.images; ++n) {
    const T* xi = x + n * g.c * hw;
    T* yi = y + n * g.c * hw;
    for (std::size_t i = 0; i < hw; ++i) {
      double s = 0;
      for (std::size_t ch = 0; ch < g.c; ++ch) s += (adjoint ? 1.0 : wts[ch]) * xi[ch * hw + i];
      for (std::size_t ch = 0; ch < g.c; ++ch) {
        const double gray = adjoint ? wts[ch] * s : s;
        yi[ch * hw + i] += static_cast<T>((1.0 - f) * gray + f * xi[ch * hw + i]);
      }
    }
  }
}

// Smoothing kernel [[1,1,1],[1,5,1],[1,1,1]]/13 on interior pixels; borders pass through.
// out = blur + f·(x - blur).
template <typename T>
void sharpness(const T* x, T* y, const Geometry& g, double f, bool adjoint) {
  const std::size_t hw = g.h * g.w;
  for (std::size_t p = 0; p < g.images * g.c; ++p) {
    const T* xi = x + p * hw;
    T* yi = y + p * hw;
    for (std::size_t r = 0; r < g.h; ++r)
      for (std::size_t c = 0; c < g.w; ++c) {
        const std::size_t i = r * g.w + c;
        const bool interior = r > 0 && c > 0 && r + 1 < g.h && c + 1 < g.w;
        if (!interior) {
          yi[i] += xi[i];
          continue;
        }
        yi[i] += static_cast<T>(f * xi[i]);
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            const std::size_t j = (r + dr) * g.w + (c + dc);
            const double k = (dr == 0 && dc == 0 ? 5.0 : 1.0) / 13.0 * (1.0 - f);
            if (adjoint)
              yi[j] += static_cast<T>(k * xi[i]);
            else
              yi[i] += static_cast<T>(k * xi[j]);
          }
      }
  }
}

// Zeroes a centered square patch of side round(frac·min(H,W)).
template <typename T>
std::vector<T> cutout_mask(const Geometry& g, double frac) {
  std::vector<T> mask(g.h * g.w, T(1));
  const auto side = static_cast<std::size_t>(std::lround(frac * static_cast<double>(std::min(g.h, g.w))));
  const std::size_t r0 = (g.h - side) / 2, c0 = (g.w - side) / 2;
  for (std::size_t r = r0; r < r0 + side; ++r)
    for (std::size_t c = c0; c < c0 + side; ++c) mask[r * g.w + c] = T(0);
  return mask;
}

}  // namespace pixel

namespace detail {

template <typename T>
void clamp01(Tensor<T>& t) {
  for (auto& v : t.data()) v = std::clamp(v, T(0), T(1));
}

}  // namespace detail

// Applies op to an image [C,H,W] or a batch [N,C,H,W]; values are clamped to [0,1].
template <typename T>
Tensor<T> apply(const TransformOp& op, const Tensor<T>& img, FillPolicy fill = FillPolicy::zeros) {
  op.validate();
  const auto g = pixel::geometry(img);
  if (op.kind == TransformKind::Identity) return img;
  Tensor<T> out(img.shape());
  switch (op.kind) {
    case TransformKind::TranslateX:
    case TransformKind::TranslateY:
    case TransformKind::Rotate:
    case TransformKind::Scale:
    case TransformKind::ShearX:
    case TransformKind::ShearY:
      out = warp(to_affine(op), img, fill);
      break;
    case TransformKind::AutoContrast: pixel::autocontrast(img, out); break;
    case TransformKind::Invert:
      for (std::size_t i = 0; i < img.size(); ++i) out[i] = T(1) - img[i];
      break;
    case TransformKind::Equalize: pixel::equalize(img, out); break;
    case TransformKind::Solarize: pixel::solarize(img, out, op.magnitude); break;
    case TransformKind::Posterize: pixel::posterize(img, out, static_cast<int>(std::lround(op.magnitude))); break;
    case TransformKind::Color: pixel::color(img.ptr(), out.ptr(), g, op.magnitude, false); break;
    case TransformKind::Brightness:
      for (std::size_t i = 0; i < img.size(); ++i) out[i] = img[i] * static_cast<T>(op.magnitude);
      break;
    case TransformKind::Sharpness: pixel::sharpness(img.ptr(), out.ptr(), g, op.magnitude, false); break;
    case TransformKind::Cutout: {
      const auto mask = pixel::cutout_mask<T>(g, op.magnitude);
      const std::size_t hw = g.h * g.w;
      for (std::size_t i = 0; i < img.size(); ++i) out[i] = img[i] * mask[i % hw];
      break;
    }
    case TransformKind::Identity: break;
  }
  detail::clamp01(out);
  return out;
}

namespace ops {

// Linear image map with an explicit adjoint.
template <typename T>
Var<T> linear_image_map(const Var<T>& x, std::function<void(const T*, T*, bool)> fn) {
  Tensor<T> out(x.shape());
  fn(x.value().ptr(), out.ptr(), false);
  return x.tape->record(std::move(out), {x}, [x, fn](Tape<T>& tp, const Tensor<T>& g) {
    if (T* gx = tp.grad_ptr(x)) fn(g.ptr(), gx, true);
  });
}

// Differentiable apply. Smooth kinds carry exact gradients; the rest are straight-through.
template <typename T>
Var<T> apply(const TransformOp& op, const Var<T>& x, FillPolicy fill = FillPolicy::zeros) {
  op.validate();
  if (op.kind == TransformKind::Identity) return x;
  const auto g = pixel::geometry(x.value());
  Var<T> y = x;
  switch (op.kind) {
    case TransformKind::TranslateX:
    case TransformKind::TranslateY:
    case TransformKind::Rotate:
    case TransformKind::Scale:
    case TransformKind::ShearX:
    case TransformKind::ShearY:
      // Bilinear samples of [0,1] data stay in [0,1]; no clamp node needed.
      return warp(x, to_affine(op), fill);
    case TransformKind::Invert: y = affine_scalar(x, T(-1), T(1)); break;
    case TransformKind::Brightness: y = affine_scalar(x, static_cast<T>(op.magnitude)); break;
    case TransformKind::Color: {
      const double f = op.magnitude;
      y = linear_image_map<T>(x, [g, f](const T* in, T* out, bool adj) { pixel::color(in, out, g, f, adj); });
      break;
    }
    case TransformKind::Sharpness: {
      const double f = op.magnitude;
      y = linear_image_map<T>(x, [g, f](const T* in, T* out, bool adj) { pixel::sharpness(in, out, g, f, adj); });
      break;
    }
    case TransformKind::Cutout: {
      auto mask = std::make_shared<std::vector<T>>(pixel::cutout_mask<T>(g, op.magnitude));
      const std::size_t total = x.value().size(), hw = g.h * g.w;
      y = linear_image_map<T>(x, [mask, total, hw](const T* in, T* out, bool) {
        for (std::size_t i = 0; i < total; ++i) out[i] += in[i] * (*mask)[i % hw];
      });
      break;
    }
    default:
      return straight_through(x, das::apply(op, x.value(), fill));
  }
  return clamp(y, T(0), T(1));
}

}  // namespace ops

}  // namespace das
