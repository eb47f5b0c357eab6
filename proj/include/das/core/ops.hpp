#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <type_traits>
#include <vector>

#include "das/core/layer_spec.hpp"
#include "das/core/tape.hpp"

// Differentiable operations recorded on a Tape. Every op takes and returns Var handles;
// backward rules accumulate into the inputs' gradient buffers.
namespace das::ops {

namespace detail {

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  DAS_CHECK(a.shape() == b.shape(), DimensionError,
            std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
void require_rank(const Var<T>& a, std::size_t r, const char* op) {
  DAS_CHECK(a.shape().size() == r, DimensionError,
            std::string(op) + ": expected rank " + std::to_string(r) + ", got " + shape_str(a.shape()));
}

template <typename T>
void require_tape(const Var<T>& a, const Var<T>& b) {
  DAS_CHECK(a.tape == b.tape, ContractError, "operands recorded on different tapes");
}

}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_tape(a, b);
  detail::require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& g) {
    for (const auto& v : {a, b})
      if (T* gi = tp.grad_ptr(v))
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_tape(a, b);
  detail::require_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& g) {
    if (T* ga = tp.grad_ptr(a))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (T* gb = tp.grad_ptr(b))
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_tape(a, b);
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& g) {
    const auto& av = tp.value(a);
    const auto& bv = tp.value(b);
    if (T* ga = tp.grad_ptr(a))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    if (T* gb = tp.grad_ptr(b))
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
  });
}

// a * s + c for constants s, c.
template <typename T>
Var<T> affine_scalar(const Var<T>& a, T s, T c = T(0)) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = v * s + c;
  return a.tape->record(std::move(out), {a}, [a, s](Tape<T>& tp, const Tensor<T>& g) {
    if (T* ga = tp.grad_ptr(a))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T s = 0;
  for (T v : a.value().data()) s += v;
  return a.tape->record(Tensor<T>::scalar(s), {a}, [a](Tape<T>& tp, const Tensor<T>& g) {
    if (T* ga = tp.grad_ptr(a)) {
      const std::size_t n = tp.value(a).size();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[0];
    }
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  const std::size_t n = a.value().size();
  DAS_CHECK(n > 0, ContractError, "mean of empty tensor");
  return affine_scalar(sum(a), T(1) / static_cast<T>(n));
}

// Sum of squares, convenient for regression losses.
template <typename T>
Var<T> sum_squares(const Var<T>& a) {
  return sum(mul(a, a));
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape s) {
  Tensor<T> out = a.value().reshaped(std::move(s));
  return a.tape->record(std::move(out), {a}, [a](Tape<T>& tp, const Tensor<T>& g) {
    if (T* ga = tp.grad_ptr(a))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = v > T(0) ? v : T(0);
  return a.tape->record(std::move(out), {a}, [a](Tape<T>& tp, const Tensor<T>& g) {
    if (T* ga = tp.grad_ptr(a)) {
      const auto& av = tp.value(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (av[i] > T(0)) ga[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = T(1) / (T(1) + std::exp(-v));
  Tensor<T> saved = out;
  return a.tape->record(std::move(out), {a}, [a, saved](Tape<T>& tp, const Tensor<T>& g) {
    if (T* ga = tp.grad_ptr(a))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * saved[i] * (T(1) - saved[i]);
  });
}

// Elementwise clamp; the gradient passes where lo < x < hi.
template <typename T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
  Tensor<T> out = a.value();
  bool changed = false;
  for (auto& v : out.data()) {
    const T c = std::clamp(v, lo, hi);
    changed = changed || c != v;
    v = c;
  }
  if (!changed && !a.requires_grad()) return a;
  return a.tape->record(std::move(out), {a}, [a, lo, hi](Tape<T>& tp, const Tensor<T>& g) {
    if (T* ga = tp.grad_ptr(a)) {
      const auto& av = tp.value(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (av[i] >= lo && av[i] <= hi) ga[i] += g[i];
    }
  });
}

// Forward value taken from `forward`, gradient passed to `a` unchanged.
template <typename T>
Var<T> straight_through(const Var<T>& a, Tensor<T> forward) {
  DAS_CHECK(forward.shape() == a.shape(), DimensionError, "straight_through: shape mismatch");
  return a.tape->record(std::move(forward), {a}, [a](Tape<T>& tp, const Tensor<T>& g) {
    if (T* ga = tp.grad_ptr(a))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

// Softmax along the last axis.
template <typename T>
Var<T> softmax(const Var<T>& a) {
  const auto& in = a.value();
  DAS_CHECK(in.rank() >= 1, DimensionError, "softmax of a scalar");
  const std::size_t k = in.shape().back();
  const std::size_t rows = in.size() / k;
  Tensor<T> out(in.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = in.ptr() + r * k;
    T* y = out.ptr() + r * k;
    const T mx = *std::max_element(x, x + k);
    T z = 0;
    for (std::size_t j = 0; j < k; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < k; ++j) y[j] /= z;
  }
  Tensor<T> saved = out;
  return a.tape->record(std::move(out), {a}, [a, saved, k, rows](Tape<T>& tp, const Tensor<T>& g) {
    T* ga = tp.grad_ptr(a);
    if (!ga) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = saved.ptr() + r * k;
      const T* gy = g.ptr() + r * k;
      T dot = 0;
      for (std::size_t j = 0; j < k; ++j) dot += gy[j] * y[j];
      for (std::size_t j = 0; j < k; ++j) ga[r * k + j] += y[j] * (gy[j] - dot);
    }
  });
}

template <typename T>
Var<T> log_softmax(const Var<T>& a) {
  const auto& in = a.value();
  const std::size_t k = in.shape().back();
  const std::size_t rows = in.size() / k;
  Tensor<T> out(in.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = in.ptr() + r * k;
    T* y = out.ptr() + r * k;
    const T mx = *std::max_element(x, x + k);
    T z = 0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(x[j] - mx);
    const T lz = mx + std::log(z);
    for (std::size_t j = 0; j < k; ++j) y[j] = x[j] - lz;
  }
  Tensor<T> saved = out;
  return a.tape->record(std::move(out), {a}, [a, saved, k, rows](Tape<T>& tp, const Tensor<T>& g) {
    T* ga = tp.grad_ptr(a);
    if (!ga) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = saved.ptr() + r * k;
      const T* gy = g.ptr() + r * k;
      T s = 0;
      for (std::size_t j = 0; j < k; ++j) s += gy[j];
      for (std::size_t j = 0; j < k; ++j) ga[r * k + j] += gy[j] - std::exp(y[j]) * s;
    }
  });
}

// Mean negative log-likelihood of integer labels under logits [N,K].
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
  detail::require_rank(logits, 2, "cross_entropy");
  const std::size_t n = logits.shape()[0], k = logits.shape()[1];
  DAS_CHECK(labels.size() == n, DimensionError, "cross_entropy: label count mismatch");
  Var<T> lp = log_softmax(logits);
  const auto& lv = lp.value();
  T loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    DAS_CHECK(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < k, ContractError,
              "cross_entropy: label out of range");
    loss -= lv[i * k + labels[i]];
  }
  loss /= static_cast<T>(n);
  return lp.tape->record(Tensor<T>::scalar(loss), {lp}, [lp, labels, n, k](Tape<T>& tp, const Tensor<T>& g) {
    if (T* gl = tp.grad_ptr(lp))
      for (std::size_t i = 0; i < n; ++i) gl[i * k + labels[i]] -= g[0] / static_cast<T>(n);
  });
}

// x [N,I], w [O,I], b [O] -> [N,O]
template <typename T>
Var<T> dense(const Var<T>& x, const Var<T>& w, const std::optional<std::type_identity_t<Var<T>>>& b = std::nullopt) {
  detail::require_rank(x, 2, "dense");
  detail::require_rank(w, 2, "dense");
  const std::size_t n = x.shape()[0], in = x.shape()[1], o = w.shape()[0];
  DAS_CHECK(w.shape()[1] == in, DimensionError,
            "dense: weight " + shape_str(w.shape()) + " does not match input " + shape_str(x.shape()));
  if (b) DAS_CHECK(b->shape() == Shape{o}, DimensionError, "dense: bias shape mismatch");
  const auto& xv = x.value();
  const auto& wv = w.value();
  Tensor<T> out(Shape{n, o});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < o; ++j) {
      T s = b ? b->value()[j] : T(0);
      const T* xr = xv.ptr() + i * in;
      const T* wr = wv.ptr() + j * in;
      for (std::size_t q = 0; q < in; ++q) s += xr[q] * wr[q];
      out[i * o + j] = s;
    }
  std::vector<Var<T>> inputs{x, w};
  if (b) inputs.push_back(*b);
  return x.tape->record(std::move(out), inputs, [x, w, b, n, in, o](Tape<T>& tp, const Tensor<T>& g) {
    const auto& xv = tp.value(x);
    const auto& wv = tp.value(w);
    if (T* gx = tp.grad_ptr(x))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < o; ++j) {
          const T gij = g[i * o + j];
          for (std::size_t q = 0; q < in; ++q) gx[i * in + q] += gij * wv[j * in + q];
        }
    if (T* gw = tp.grad_ptr(w))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < o; ++j) {
          const T gij = g[i * o + j];
          for (std::size_t q = 0; q < in; ++q) gw[j * in + q] += gij * xv[i * in + q];
        }
    if (b)
      if (T* gb = tp.grad_ptr(*b))
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < o; ++j) gb[j] += g[i * o + j];
  });
}

// x [N,C,H,W], w [O,C,kh,kw], b [O].
template <typename T>
Var<T> conv2d(const Var<T>& x, const LayerSpec& spec, const Var<T>& w, const std::optional<std::type_identity_t<Var<T>>>& b = std::nullopt) {
  DAS_CHECK(spec.kind == LayerKind::conv2d, ConfigError, "conv2d called with a non-conv LayerSpec");
  spec.validate();
  detail::require_rank(x, 4, "conv2d");
  detail::require_rank(w, 4, "conv2d");
  const std::size_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  const std::size_t oc = w.shape()[0], kh = spec.kernel[0], kw = spec.kernel[1];
  DAS_CHECK(w.shape() == (Shape{spec.channels[1], spec.channels[0], kh, kw}) && c == spec.channels[0],
            DimensionError,
            "conv2d: weight " + shape_str(w.shape()) + " / input " + shape_str(x.shape()) +
                " do not match layer channels (" + std::to_string(spec.channels[0]) + "->" +
                std::to_string(spec.channels[1]) + ")");
  if (b) DAS_CHECK(b->shape() == Shape{oc}, DimensionError, "conv2d: bias shape mismatch");
  const std::size_t oh = spec.output_extent(h, 0), ow = spec.output_extent(wd, 1);
  const long sh = static_cast<long>(spec.stride[0]), sw = static_cast<long>(spec.stride[1]);
  const long ph = static_cast<long>(spec.padding[0]), pw = static_cast<long>(spec.padding[1]);
  const long dh = static_cast<long>(spec.dilation[0]), dw = static_cast<long>(spec.dilation[1]);
  const long H = static_cast<long>(h), W = static_cast<long>(wd);

  const auto& xv = x.value();
  const auto& wv = w.value();
  Tensor<T> out(Shape{n, oc, oh, ow});
  for (std::size_t bn = 0; bn < n; ++bn)
    for (std::size_t o = 0; o < oc; ++o) {
      T* op = out.ptr() + (bn * oc + o) * oh * ow;
      const T bias = b ? b->value()[o] : T(0);
      for (std::size_t i = 0; i < oh * ow; ++i) op[i] = bias;
      for (std::size_t ci = 0; ci < c; ++ci) {
        const T* ip = xv.ptr() + (bn * c + ci) * h * wd;
        for (std::size_t u = 0; u < kh; ++u)
          for (std::size_t v = 0; v < kw; ++v) {
            const T wt = wv[((o * c + ci) * kh + u) * kw + v];
            for (std::size_t y = 0; y < oh; ++y) {
              const long iy = static_cast<long>(y) * sh - ph + static_cast<long>(u) * dh;
              if (iy < 0 || iy >= H) continue;
              const T* row = ip + iy * W;
              T* orow = op + y * ow;
              for (std::size_t xo = 0; xo < ow; ++xo) {
                const long ix = static_cast<long>(xo) * sw - pw + static_cast<long>(v) * dw;
                if (ix < 0 || ix >= W) continue;
                orow[xo] += wt * row[ix];
              }
            }
          }
      }
    }
  std::vector<Var<T>> inputs{x, w};
  if (b) inputs.push_back(*b);
  return x.tape->record(std::move(out), inputs,
                        [=](Tape<T>& tp, const Tensor<T>& g) {
                          const auto& xv = tp.value(x);
                          const auto& wv = tp.value(w);
                          T* gx = tp.grad_ptr(x);
                          T* gw = tp.grad_ptr(w);
                          for (std::size_t bn = 0; bn < n; ++bn)
                            for (std::size_t o = 0; o < oc; ++o) {
                              const T* gp = g.ptr() + (bn * oc + o) * oh * ow;
                              for (std::size_t ci = 0; ci < c; ++ci) {
                                const std::size_t ioff = (bn * c + ci) * h * wd;
                                for (std::size_t u = 0; u < kh; ++u)
                                  for (std::size_t v = 0; v < kw; ++v) {
                                    const std::size_t widx = ((o * c + ci) * kh + u) * kw + v;
                                    const T wt = wv[widx];
                                    T acc = 0;
                                    for (std::size_t y = 0; y < oh; ++y) {
                                      const long iy = static_cast<long>(y) * sh - ph + static_cast<long>(u) * dh;
                                      if (iy < 0 || iy >= H) continue;
                                      for (std::size_t xo = 0; xo < ow; ++xo) {
                                        const long ix = static_cast<long>(xo) * sw - pw + static_cast<long>(v) * dw;
                                        if (ix < 0 || ix >= W) continue;
                                        const std::size_t ii = ioff + static_cast<std::size_t>(iy * W + ix);
                                        const T gv = gp[y * ow + xo];
                                        acc += gv * xv[ii];
                                        if (gx) gx[ii] += gv * wt;
                                      }
                                    }
                                    if (gw) gw[widx] += acc;
                                  }
                              }
                            }
                          if (b)
                            if (T* gb = tp.grad_ptr(*b))
                              for (std::size_t bn = 0; bn < n; ++bn)
                                for (std::size_t o = 0; o < oc; ++o) {
                                  const T* gp = g.ptr() + (bn * oc + o) * oh * ow;
                                  for (std::size_t i = 0; i < oh * ow; ++i) gb[o] += gp[i];
                                }
                        });
}

template <typename T>
Var<T> maxpool2d(const Var<T>& x, const LayerSpec& spec) {
  DAS_CHECK(spec.kind == LayerKind::maxpool, ConfigError, "maxpool2d called with a non-pool LayerSpec");
  spec.validate();
  detail::require_rank(x, 4, "maxpool2d");
  const std::size_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  const std::size_t oh = spec.output_extent(h, 0), ow = spec.output_extent(wd, 1);
  const auto& xv = x.value();
  Tensor<T> out(Shape{n, c, oh, ow});
  std::vector<std::size_t> argmax(out.size(), static_cast<std::size_t>(-1));
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xo = 0; xo < ow; ++xo) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t bi = static_cast<std::size_t>(-1);
        for (std::size_t u = 0; u < spec.kernel[0]; ++u)
          for (std::size_t v = 0; v < spec.kernel[1]; ++v) {
            const long iy = static_cast<long>(y * spec.stride[0] + u * spec.dilation[0]) - static_cast<long>(spec.padding[0]);
            const long ix = static_cast<long>(xo * spec.stride[1] + v * spec.dilation[1]) - static_cast<long>(spec.padding[1]);
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
            const std::size_t ii = p * h * wd + static_cast<std::size_t>(iy) * wd + static_cast<std::size_t>(ix);
            if (xv[ii] > best) {
              best = xv[ii];
              bi = ii;
            }
          }
        const std::size_t oi = (p * oh + y) * ow + xo;
        out[oi] = bi == static_cast<std::size_t>(-1) ? T(0) : best;
        argmax[oi] = bi;
      }
  return x.tape->record(std::move(out), {x}, [x, argmax](Tape<T>& tp, const Tensor<T>& g) {
    if (T* gx = tp.grad_ptr(x))
      for (std::size_t i = 0; i < g.size(); ++i)
        if (argmax[i] != static_cast<std::size_t>(-1)) gx[argmax[i]] += g[i];
  });
}

// [N,C,H,W] -> [N,C]
template <typename T>
Var<T> global_avgpool(const Var<T>& x) {
  detail::require_rank(x, 4, "global_avgpool");
  const std::size_t n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  const auto& xv = x.value();
  Tensor<T> out(Shape{n, c});
  for (std::size_t p = 0; p < n * c; ++p) {
    T s = 0;
    for (std::size_t i = 0; i < hw; ++i) s += xv[p * hw + i];
    out[p] = s / static_cast<T>(hw);
  }
  return x.tape->record(std::move(out), {x}, [x, n, c, hw](Tape<T>& tp, const Tensor<T>& g) {
    if (T* gx = tp.grad_ptr(x))
      for (std::size_t p = 0; p < n * c; ++p)
        for (std::size_t i = 0; i < hw; ++i) gx[p * hw + i] += g[p] / static_cast<T>(hw);
  });
}

// Mean over axis 1 of a rank>=2 tensor: [N,T,...] -> [N,...].
template <typename T>
Var<T> mean_axis1(const Var<T>& x) {
  DAS_CHECK(x.shape().size() >= 2, DimensionError, "mean_axis1 needs rank >= 2");
  const std::size_t n = x.shape()[0], t = x.shape()[1];
  const std::size_t inner = x.value().size() / (n * t);
  Shape os = x.shape();
  os.erase(os.begin() + 1);
  Tensor<T> out(os);
  const auto& xv = x.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < t; ++j)
      for (std::size_t q = 0; q < inner; ++q) out[i * inner + q] += xv[(i * t + j) * inner + q] / static_cast<T>(t);
  return x.tape->record(std::move(out), {x}, [x, n, t, inner](Tape<T>& tp, const Tensor<T>& g) {
    if (T* gx = tp.grad_ptr(x))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < t; ++j)
          for (std::size_t q = 0; q < inner; ++q) gx[(i * t + j) * inner + q] += g[i * inner + q] / static_cast<T>(t);
  });
}

// Σ_k weights[k] · xs[k]; weights is a rank-1 tensor of length |xs|.
template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& xs, const Var<T>& weights) {
  DAS_CHECK(!xs.empty(), ConfigError, "weighted_sum of zero terms");
  DAS_CHECK(weights.shape() == Shape{xs.size()}, DimensionError, "weighted_sum: weight length mismatch");
  for (const auto& x : xs) {
    detail::require_tape(x, weights);
    detail::require_same_shape(x, xs.front(), "weighted_sum");
  }
  const auto& wv = weights.value();
  Tensor<T> out(xs.front().shape());
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto& xv = xs[k].value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += wv[k] * xv[i];
  }
  std::vector<Var<T>> inputs = xs;
  inputs.push_back(weights);
  return weights.tape->record(std::move(out), inputs, [xs, weights](Tape<T>& tp, const Tensor<T>& g) {
    const auto& wv = tp.value(weights);
    T* gw = tp.grad_ptr(weights);
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const auto& xv = tp.value(xs[k]);
      if (gw) {
        T dot = 0;
        for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * xv[i];
        gw[k] += dot;
      }
      if (T* gx = tp.grad_ptr(xs[k]))
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += wv[k] * g[i];
    }
  });
}

// Average of equally-shaped tensors.
template <typename T>
Var<T> average(const std::vector<Var<T>>& xs) {
  DAS_CHECK(!xs.empty(), ConfigError, "average of zero terms");
  if (xs.size() == 1) return xs.front();
  Var<T> acc = xs.front();
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return affine_scalar(acc, T(1) / static_cast<T>(xs.size()));
}

// Stack [N,...] tensors into [N,T,...] (new axis 1).
template <typename T>
Var<T> stack_axis1(const std::vector<Var<T>>& xs) {
  DAS_CHECK(!xs.empty(), ContractError, "stack_axis1 of zero tensors");
  const Shape& s = xs.front().shape();
  DAS_CHECK(!s.empty(), DimensionError, "stack_axis1 of scalars");
  for (const auto& x : xs) detail::require_same_shape(x, xs.front(), "stack_axis1");
  const std::size_t n = s[0], t = xs.size(), inner = xs.front().value().size() / n;
  Shape os = s;
  os.insert(os.begin() + 1, t);
  Tensor<T> out(os);
  for (std::size_t j = 0; j < t; ++j) {
    const auto& xv = xs[j].value();
    for (std::size_t i = 0; i < n; ++i)
      std::copy(xv.ptr() + i * inner, xv.ptr() + (i + 1) * inner, out.ptr() + (i * t + j) * inner);
  }
  return xs.front().tape->record(std::move(out), xs, [xs, n, t, inner](Tape<T>& tp, const Tensor<T>& g) {
    for (std::size_t j = 0; j < t; ++j)
      if (T* gx = tp.grad_ptr(xs[j]))
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t q = 0; q < inner; ++q) gx[i * inner + q] += g[(i * t + j) * inner + q];
  });
}

// [N,T,...] -> [N,...] at index j of axis 1.
template <typename T>
Var<T> select_axis1(const Var<T>& x, std::size_t j) {
  DAS_CHECK(x.shape().size() >= 2 && j < x.shape()[1], DimensionError, "select_axis1 out of range");
  const std::size_t n = x.shape()[0], t = x.shape()[1], inner = x.value().size() / (n * t);
  Shape os = x.shape();
  os.erase(os.begin() + 1);
  Tensor<T> out(os);
  const auto& xv = x.value();
  for (std::size_t i = 0; i < n; ++i)
    std::copy(xv.ptr() + (i * t + j) * inner, xv.ptr() + (i * t + j + 1) * inner, out.ptr() + i * inner);
  return x.tape->record(std::move(out), {x}, [x, j, n, t, inner](Tape<T>& tp, const Tensor<T>& g) {
    if (T* gx = tp.grad_ptr(x))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t q = 0; q < inner; ++q) gx[(i * t + j) * inner + q] += g[i * inner + q];
  });
}

// Element at a flat index as a scalar.
template <typename T>
Var<T> pick(const Var<T>& x, std::size_t flat) {
  DAS_CHECK(flat < x.value().size(), ContractError, "pick: index out of bounds");
  return x.tape->record(Tensor<T>::scalar(x.value()[flat]), {x}, [x, flat](Tape<T>& tp, const Tensor<T>& g) {
    if (T* gx = tp.grad_ptr(x)) gx[flat] += g[0];
  });
}

// Spatial crop of [N,C,H,W].
template <typename T>
Var<T> crop2d(const Var<T>& x, std::size_t r0, std::size_t c0, std::size_t hh, std::size_t ww) {
  detail::require_rank(x, 4, "crop2d");
  const std::size_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  DAS_CHECK(r0 + hh <= h && c0 + ww <= w, DimensionError, "crop2d window out of bounds");
  Tensor<T> out(Shape{n, c, hh, ww});
  const auto& xv = x.value();
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t y = 0; y < hh; ++y)
      for (std::size_t q = 0; q < ww; ++q) out[(p * hh + y) * ww + q] = xv[(p * h + r0 + y) * w + c0 + q];
  return x.tape->record(std::move(out), {x}, [=](Tape<T>& tp, const Tensor<T>& g) {
    if (T* gx = tp.grad_ptr(x))
      for (std::size_t p = 0; p < n * c; ++p)
        for (std::size_t y = 0; y < hh; ++y)
          for (std::size_t q = 0; q < ww; ++q) gx[(p * h + r0 + y) * w + c0 + q] += g[(p * hh + y) * ww + q];
  });
}

// Running statistics for channel_norm; updated in training mode, frozen otherwise.
template <typename T>
struct ChannelNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  explicit ChannelNormState(std::size_t c = 0)
      : running_mean(Shape{c}, T(0)), running_var(Shape{c}, T(1)) {}
};

// Per-channel normalization over (N,H,W) with affine gamma/beta. Training mode uses batch
// statistics and, when update_stats is set, folds them into the running estimates.
template <typename T>
Var<T> channel_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, ChannelNormState<T>& state,
                    bool training, bool update_stats = true) {
  detail::require_rank(x, 4, "channel_norm");
  const std::size_t n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  DAS_CHECK(gamma.shape() == Shape{c} && beta.shape() == Shape{c}, DimensionError,
            "channel_norm: affine parameter shape mismatch");
  const auto& xv = x.value();
  const T m = static_cast<T>(n * hw);
  std::vector<T> mu(c), inv(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (training) {
      T s = 0, s2 = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t q = 0; q < hw; ++q) s += xv[(i * c + ch) * hw + q];
      mu[ch] = s / m;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t q = 0; q < hw; ++q) {
          const T d = xv[(i * c + ch) * hw + q] - mu[ch];
          s2 += d * d;
        }
      const T var = s2 / m;
      inv[ch] = T(1) / std::sqrt(var + state.eps);
      if (!update_stats) continue;
      state.running_mean[ch] = (T(1) - state.momentum) * state.running_mean[ch] + state.momentum * mu[ch];
      state.running_var[ch] = (T(1) - state.momentum) * state.running_var[ch] + state.momentum * var;
    } else {
      mu[ch] = state.running_mean[ch];
      inv[ch] = T(1) / std::sqrt(state.running_var[ch] + state.eps);
    }
  }
  Tensor<T> xhat(x.shape());
  Tensor<T> out(x.shape());
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t q = 0; q < hw; ++q) {
        const std::size_t idx = (i * c + ch) * hw + q;
        xhat[idx] = (xv[idx] - mu[ch]) * inv[ch];
        out[idx] = gv[ch] * xhat[idx] + bv[ch];
      }
  return x.tape->record(std::move(out), {x, gamma, beta},
                        [=](Tape<T>& tp, const Tensor<T>& g) {
                          const auto& gv = tp.value(gamma);
                          T* gx = tp.grad_ptr(x);
                          T* gg = tp.grad_ptr(gamma);
                          T* gb = tp.grad_ptr(beta);
                          for (std::size_t ch = 0; ch < c; ++ch) {
                            T sg = 0, sgx = 0;
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t q = 0; q < hw; ++q) {
                                const std::size_t idx = (i * c + ch) * hw + q;
                                sg += g[idx];
                                sgx += g[idx] * xhat[idx];
                              }
                            if (gg) gg[ch] += sgx;
                            if (gb) gb[ch] += sg;
                            if (!gx) continue;
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t q = 0; q < hw; ++q) {
                                const std::size_t idx = (i * c + ch) * hw + q;
                                if (training)
                                  gx[idx] += gv[ch] * inv[ch] * (g[idx] - sg / m - xhat[idx] * sgx / m);
                                else
                                  gx[idx] += gv[ch] * inv[ch] * g[idx];
                              }
                          }
                        });
}

// Per-channel scale: x [N,C,...] times s [C].
template <typename T>
Var<T> channel_scale(const Var<T>& x, const Var<T>& s) {
  DAS_CHECK(x.shape().size() >= 2 && s.shape() == Shape{x.shape()[1]}, DimensionError,
            "channel_scale: scale length mismatch");
  const std::size_t n = x.shape()[0], c = x.shape()[1], inner = x.value().size() / (n * c);
  Tensor<T> out = x.value();
  const auto& sv = s.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t q = 0; q < inner; ++q) out[(i * c + ch) * inner + q] *= sv[ch];
  return x.tape->record(std::move(out), {x, s}, [x, s, n, c, inner](Tape<T>& tp, const Tensor<T>& g) {
    const auto& xv = tp.value(x);
    const auto& sv = tp.value(s);
    T* gx = tp.grad_ptr(x);
    T* gs = tp.grad_ptr(s);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t q = 0; q < inner; ++q) {
          const std::size_t idx = (i * c + ch) * inner + q;
          if (gx) gx[idx] += g[idx] * sv[ch];
          if (gs) gs[ch] += g[idx] * xv[idx];
        }
  });
}

// Bilinear resize of [N,C,H,W] to (oh, ow) with half-pixel centers.
template <typename T>
Var<T> upsample_bilinear(const Var<T>& x, std::size_t oh, std::size_t ow) {
  detail::require_rank(x, 4, "upsample_bilinear");
  const std::size_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if (oh == h && ow == w) return x;
  struct Tap {
    std::size_t i0, i1;
    T f;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(src));
      const std::size_t i1 = std::min(i0 + 1, in - 1);
      t[o] = Tap{i0, i1, static_cast<T>(src - static_cast<double>(i0))};
    }
    return t;
  };
  const auto ty = taps(h, oh), tx = taps(w, ow);
  const auto& xv = x.value();
  Tensor<T> out(Shape{n, c, oh, ow});
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t q = 0; q < ow; ++q) {
        const T* ip = xv.ptr() + p * h * w;
        const auto& a = ty[y];
        const auto& b = tx[q];
        out[(p * oh + y) * ow + q] = (1 - a.f) * ((1 - b.f) * ip[a.i0 * w + b.i0] + b.f * ip[a.i0 * w + b.i1]) +
                                     a.f * ((1 - b.f) * ip[a.i1 * w + b.i0] + b.f * ip[a.i1 * w + b.i1]);
      }
  return x.tape->record(std::move(out), {x}, [=](Tape<T>& tp, const Tensor<T>& g) {
    T* gx = tp.grad_ptr(x);
    if (!gx) return;
    for (std::size_t p = 0; p < n * c; ++p)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t q = 0; q < ow; ++q) {
          T* gp = gx + p * h * w;
          const T gv = g[(p * oh + y) * ow + q];
          const auto& a = ty[y];
          const auto& b = tx[q];
          gp[a.i0 * w + b.i0] += gv * (1 - a.f) * (1 - b.f);
          gp[a.i0 * w + b.i1] += gv * (1 - a.f) * b.f;
          gp[a.i1 * w + b.i0] += gv * a.f * (1 - b.f);
          gp[a.i1 * w + b.i1] += gv * a.f * b.f;
        }
  });
}

// Mean per-pixel cross entropy of [N,K,H,W] logits against labels[N*H*W]; label -1 is ignored.
template <typename T>
Var<T> cross_entropy_dense(const Var<T>& logits, const std::vector<int>& labels) {
  detail::require_rank(logits, 4, "cross_entropy_dense");
  const std::size_t n = logits.shape()[0], k = logits.shape()[1], hw = logits.shape()[2] * logits.shape()[3];
  DAS_CHECK(labels.size() == n * hw, DimensionError, "cross_entropy_dense: one label per pixel required");
  const auto& xv = logits.value();
  Tensor<T> prob(logits.shape());
  T loss = 0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < hw; ++p) {
      T mx = xv[(i * k) * hw + p];
      for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, xv[(i * k + c) * hw + p]);
      T z = 0;
      for (std::size_t c = 0; c < k; ++c) z += (prob[(i * k + c) * hw + p] = std::exp(xv[(i * k + c) * hw + p] - mx));
      for (std::size_t c = 0; c < k; ++c) prob[(i * k + c) * hw + p] /= z;
      const int y = labels[i * hw + p];
      if (y < 0) continue;
      DAS_CHECK(static_cast<std::size_t>(y) < k, ContractError, "cross_entropy_dense: label out of range");
      loss -= std::log(std::max(prob[(i * k + y) * hw + p], std::numeric_limits<T>::min()));
      ++counted;
    }
  const T denom = static_cast<T>(std::max<std::size_t>(counted, 1));
  return logits.tape->record(Tensor<T>::scalar(loss / denom), {logits}, [=](Tape<T>& tp, const Tensor<T>& g) {
    T* gx = tp.grad_ptr(logits);
    if (!gx) return;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < hw; ++p) {
        const int y = labels[i * hw + p];
        if (y < 0) continue;
        for (std::size_t c = 0; c < k; ++c)
          gx[(i * k + c) * hw + p] +=
              g[0] * (prob[(i * k + c) * hw + p] - (static_cast<int>(c) == y ? T(1) : T(0))) / denom;
      }
  });
}

}  // namespace das::ops
