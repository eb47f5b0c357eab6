#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "das/core/io.hpp"
#include "das/core/layer_spec.hpp"
#include "das/core/ops.hpp"

namespace das {

// ------------------------------------------------------------------ theoretical

// r after each layer: r_l = r_{l-1} + (k_eff − 1)·Π_{j<l} s_j with k_eff = d(k−1)+1.
inline std::vector<std::size_t> theoretical_rf_per_layer(const std::vector<LayerSpec>& layers) {
  std::vector<std::size_t> out;
  std::size_t r = 1, jump = 1;
  for (const auto& l : layers) {
    l.validate();
    const std::size_t k_eff = l.dilation[0] * (l.kernel[0] - 1) + 1;
    r += (k_eff - 1) * jump;
    jump *= l.stride[0];
    out.push_back(r);
  }
  return out;
}

// An empty stack sees exactly one pixel.
inline std::size_t theoretical_rf(const std::vector<LayerSpec>& layers) {
  const auto per = theoretical_rf_per_layer(layers);
  return per.empty() ? 1 : per.back();
}

// ------------------------------------------------------------------ geometry

struct Rect {
  double x1 = 0, y1 = 0;  // bottom left
  double x2 = 0, y2 = 0;  // top right

  double area() const { return std::max(0.0, x2 - x1) * std::max(0.0, y2 - y1); }
};

// Clamped at 0 for disjoint rectangles.
inline double rect_intersection_area(const Rect& a, const Rect& b) {
  return std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1)) *
         std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
}

inline Rect rect_intersection(const Rect& a, const Rect& b) {
  return {std::max(a.x1, b.x1), std::max(a.y1, b.y1), std::min(a.x2, b.x2), std::min(a.y2, b.y2)};
}

struct Point {
  double x = 0, y = 0;
};

inline double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Convex polygon, vertices counter-clockwise.
struct Poly {
  std::vector<Point> vertices;

  static Poly rect(const Rect& r) { return {{{r.x1, r.y1}, {r.x2, r.y1}, {r.x2, r.y2}, {r.x1, r.y2}}}; }

  double signed_area() const {
    double s = 0;
    for (std::size_t i = 0, n = vertices.size(); i < n; ++i) {
      const auto& a = vertices[i];
      const auto& b = vertices[(i + 1) % n];
      s += a.x * b.y - b.x * a.y;
    }
    return 0.5 * s;
  }

  // Shoelace; orientation-independent.
  double area() const { return std::abs(signed_area()); }

  bool is_convex() const {
    const std::size_t n = vertices.size();
    if (n < 3) return false;
    int sign = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double c = cross(vertices[i], vertices[(i + 1) % n], vertices[(i + 2) % n]);
      if (std::abs(c) < 1e-12) continue;
      const int s = c > 0 ? 1 : -1;
      if (sign && s != sign) return false;
      sign = s;
    }
    return sign != 0;
  }

  Poly ccw() const {
    Poly p = *this;
    if (p.signed_area() < 0) std::reverse(p.vertices.begin(), p.vertices.end());
    return p;
  }

  bool contains(const Point& q) const {
    const std::size_t n = vertices.size();
    for (std::size_t i = 0; i < n; ++i)
      if (cross(vertices[i], vertices[(i + 1) % n], q) < 0) return false;
    return n >= 3;
  }

  Poly mapped(const std::function<Point(const Point&)>& f) const {
    Poly p;
    for (const auto& v : vertices) p.vertices.push_back(f(v));
    return p.ccw();
  }
};

// Sutherland–Hodgman: `subject` clipped to the inside of convex `clip`.
inline Poly clip_polygon(const Poly& subject, const Poly& clip) {
  const Poly c = clip.ccw();
  std::vector<Point> out = subject.ccw().vertices;
  for (std::size_t i = 0, n = c.vertices.size(); i < n && !out.empty(); ++i) {
    const Point a = c.vertices[i], b = c.vertices[(i + 1) % n];
    std::vector<Point> in;
    in.swap(out);
    for (std::size_t j = 0, m = in.size(); j < m; ++j) {
      const Point p = in[j], q = in[(j + 1) % m];
      const double cp = cross(a, b, p), cq = cross(a, b, q);
      if (cp >= 0) out.push_back(p);
      if ((cp >= 0) != (cq >= 0)) {
        const double t = cp / (cp - cq);
        out.push_back({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
      }
    }
  }
  return {out};
}

// Zero for degenerate input.
inline double poly_clip_area(const Poly& a, const Poly& b) {
  if (a.area() < 1e-15 || b.area() < 1e-15) return 0.0;
  const Poly r = clip_polygon(a, b);
  return r.vertices.size() < 3 ? 0.0 : r.area();
}

namespace detail {

// Inclusion–exclusion by depth-first extension of intersections; an empty intersection
// prunes all of its supersets.
template <typename Shape, typename Intersect, typename Area>
double union_by_inclusion_exclusion(const std::vector<Shape>& parts, Intersect intersect, Area area) {
  DAS_CHECK(parts.size() <= 24, ConfigError, "union of more than 24 regions is not supported");
  double total = 0;
  std::function<void(std::size_t, const Shape&, int)> rec = [&](std::size_t next, const Shape& cur, int k) {
    for (std::size_t i = next; i < parts.size(); ++i) {
      const Shape s = intersect(cur, parts[i]);
      const double a = area(s);
      if (a <= 1e-15) continue;
      total += (k % 2 == 0 ? a : -a);
      rec(i + 1, s, k + 1);
    }
  };
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const double a = area(parts[i]);
    if (a <= 1e-15) continue;
    total += a;
    rec(i + 1, parts[i], 1);
  }
  return total;
}

}  // namespace detail

inline double rect_union_area(const std::vector<Rect>& rects) {
  return detail::union_by_inclusion_exclusion(rects, rect_intersection, [](const Rect& r) { return r.area(); });
}

inline double poly_union_area(const std::vector<Poly>& polys) {
  return detail::union_by_inclusion_exclusion(
      polys, clip_polygon, [](const Poly& p) { return p.vertices.size() < 3 ? 0.0 : p.area(); });
}

struct MonteCarloArea {
  double area = 0;
  double stderr_ = 0;  // binomial standard error; an upper bound under stratification
  std::size_t samples = 0;
};

// One uniform point per cell of an m×m grid over the joint bounding box (m² ≈ samples);
// a point counts when any polygon contains it.
inline MonteCarloArea monte_carlo_union_area(const std::vector<Poly>& polys, std::size_t samples, std::uint64_t seed) {
  DAS_CHECK(!polys.empty() && samples > 0, ContractError, "monte carlo union needs polygons and samples");
  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  std::vector<Poly> ccw;
  for (const auto& p : polys) {
    ccw.push_back(p.ccw());
    for (const auto& v : p.vertices) x0 = std::min(x0, v.x), y0 = std::min(y0, v.y), x1 = std::max(x1, v.x), y1 = std::max(y1, v.y);
  }
  const auto m = std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(samples))));
  const double cw = (x1 - x0) / static_cast<double>(m), ch = (y1 - y0) / static_cast<double>(m);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const Point q{x0 + (static_cast<double>(j) + u(rng)) * cw, y0 + (static_cast<double>(i) + u(rng)) * ch};
      for (const auto& p : ccw)
        if (p.contains(q)) {
          ++hits;
          break;
        }
    }
  const double n = static_cast<double>(m * m);
  const double box = (x1 - x0) * (y1 - y0), f = static_cast<double>(hits) / n;
  return {box * f, box * std::sqrt(f * (1 - f) / n), m * m};
}

// ------------------------------------------------------------------ fused RF

enum class FusedKind { translate, rotate, scale, shear };

inline std::string to_string(FusedKind k) {
  switch (k) {
    case FusedKind::translate: return "translate";
    case FusedKind::rotate: return "rotate";
    case FusedKind::scale: return "scale";
    case FusedKind::shear: return "shear";
  }
  return "?";
}

// Per-frame step of the transform whose frames are fused.
//   translate:tx,ty  (pixels)   rotate:degrees   scale:gamma   shear:s
struct FusedTransform {
  FusedKind kind = FusedKind::translate;
  std::vector<double> params;
  Point pivot{0, 0};  // rotation/scale/shear centre: the centre of the corner pixel

  static FusedTransform parse(const std::string& text) {
    const auto colon = text.find(':');
    DAS_CHECK(colon != std::string::npos, ConfigError, "fused transform must look like kind:p1[,p2], got '" + text + "'");
    const std::string kind = text.substr(0, colon);
    FusedTransform f;
    if (kind == "translate") f.kind = FusedKind::translate;
    else if (kind == "rotate") f.kind = FusedKind::rotate;
    else if (kind == "scale") f.kind = FusedKind::scale;
    else if (kind == "shear") f.kind = FusedKind::shear;
    else throw ConfigError("fused RF does not support transform '" + kind + "'");
    std::stringstream ss(text.substr(colon + 1));
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        std::size_t used = 0;
        f.params.push_back(std::stod(item, &used));
        DAS_CHECK(used == item.size(), ConfigError, "bad number '" + item + "'");
      } catch (const std::logic_error&) {
        throw ConfigError("bad number '" + item + "' in fused transform");
      }
    }
    f.validate();
    return f;
  }

  void validate() const {
    const std::size_t want = kind == FusedKind::translate ? 2 : 1;
    DAS_CHECK(params.size() == want, ConfigError,
              to_string(kind) + " takes " + std::to_string(want) + " parameter(s), got " + std::to_string(params.size()));
    if (kind == FusedKind::scale) DAS_CHECK(params[0] > 0, ConfigError, "scale factor must be positive");
  }

  // Frame i's map applied to a point of the base region.
  Point apply(const Point& p, std::size_t i) const {
    const double n = static_cast<double>(i);
    const double dx = p.x - pivot.x, dy = p.y - pivot.y;
    switch (kind) {
      case FusedKind::translate: return {p.x + n * params[0], p.y + n * params[1]};
      case FusedKind::rotate: {
        const double a = n * params[0] * std::numbers::pi / 180.0;
        return {pivot.x + std::cos(a) * dx - std::sin(a) * dy, pivot.y + std::sin(a) * dx + std::cos(a) * dy};
      }
      case FusedKind::scale: {
        const double g = std::pow(params[0], n);
        return {pivot.x + g * dx, pivot.y + g * dy};
      }
      case FusedKind::shear: return {p.x + n * params[0] * dy, p.y};
    }
    return p;
  }
};

// The r×r region covers pixel cells [-0.5, r-0.5]^2 around the corner pixel centre (0,0).
inline Rect base_region(std::size_t r) {
  const double lo = -0.5, hi = static_cast<double>(r) - 0.5;
  return {lo, lo, hi, hi};
}

inline std::vector<Poly> fused_regions(const FusedTransform& f, std::size_t r, std::size_t n_frames) {
  const Poly base = Poly::rect(base_region(r));
  std::vector<Poly> out;
  for (std::size_t i = 0; i < n_frames; ++i) out.push_back(base.mapped([&](const Point& p) { return f.apply(p, i); }));
  return out;
}

// Area of the union of the per-frame regions.
inline double fused_rf_area(const FusedTransform& f, std::size_t r, std::size_t n_frames) {
  f.validate();
  DAS_CHECK(r >= 1 && n_frames >= 1, ConfigError, "fused RF needs r >= 1 and at least one frame");
  const double side = static_cast<double>(r);
  switch (f.kind) {
    case FusedKind::translate: {
      std::vector<Rect> rects;
      const Rect b = base_region(r);
      for (std::size_t i = 0; i < n_frames; ++i) {
        const double dx = static_cast<double>(i) * f.params[0], dy = static_cast<double>(i) * f.params[1];
        rects.push_back({b.x1 + dx, b.y1 + dy, b.x2 + dx, b.y2 + dy});
      }
      return rect_union_area(rects);
    }
    case FusedKind::scale: {
      // nested squares: the union is the largest one
      const double g = std::max(1.0, std::pow(f.params[0], static_cast<double>(n_frames - 1)));
      return g * side * g * side;
    }
    case FusedKind::rotate:
    case FusedKind::shear: return poly_union_area(fused_regions(f, r, n_frames));
  }
  return 0;
}

// ------------------------------------------------------------------ empirical RF

// |∂y[target]/∂x| summed over input channels, averaged over `batch` uniform random inputs
// and normalized to a maximum of 1. `target` indexes the output without its batch axis.
template <typename T>
Tensor<T> empirical_rf(const std::function<Var<T>(const Var<T>&)>& model, const Shape& input_shape,
                       const std::vector<std::size_t>& target, std::size_t batch, std::mt19937_64& rng) {
  DAS_CHECK(input_shape.size() == 3, DimensionError, "empirical_rf input shape must be [C,H,W]");
  DAS_CHECK(batch >= 1, ContractError, "empirical_rf needs at least one sample");
  const std::size_t c = input_shape[0], h = input_shape[1], w = input_shape[2];
  Tape<T> tape;
  auto x = tape.leaf(Tensor<T>::uniform(Shape{batch, c, h, w}, rng));
  auto y = model(x);
  const Shape& os = y.shape();
  DAS_CHECK(os.size() == target.size() + 1 && os[0] == batch, ContractError,
            "target " + std::to_string(target.size()) + "-d does not index output " + shape_str(os));
  std::size_t flat = 0, stride = 1;
  for (std::size_t a = target.size(); a-- > 0;) {
    DAS_CHECK(target[a] < os[a + 1], ContractError, "ERF target out of bounds for output " + shape_str(os));
    flat += target[a] * stride;
    stride *= os[a + 1];
  }
  Var<T> loss = ops::pick(y, flat);
  for (std::size_t b = 1; b < batch; ++b) loss = ops::add(loss, ops::pick(y, b * stride + flat));
  tape.backward(loss);
  const auto g = tape.grad(x);
  Tensor<T> heat(Shape{h, w});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < h * w; ++p) heat[p] += std::abs(g[(b * c + ch) * h * w + p]) / static_cast<T>(batch);
  T mx = 0;
  for (T v : heat.data()) mx = std::max(mx, v);
  if (mx > 0)
    for (auto& v : heat.data()) v /= mx;
  return heat;
}

struct ExtentBox {
  std::size_t row0 = 0, col0 = 0, row1 = 0, col1 = 0;  // inclusive
  double mass = 0;                                       // share of the total inside

  std::size_t side() const { return row1 - row0 + 1; }
};

// Smallest square box centred on (cy, cx) holding at least `threshold` of the heatmap mass.
template <typename T>
ExtentBox extent_box(const Tensor<T>& heat, std::size_t cy, std::size_t cx, double threshold = 0.95) {
  DAS_CHECK(heat.rank() == 2, DimensionError, "extent_box expects an [H,W] heatmap");
  const std::size_t h = heat.dim(0), w = heat.dim(1);
  DAS_CHECK(cy < h && cx < w, ContractError, "extent box centre out of bounds");
  double total = 0;
  for (T v : heat.data()) total += static_cast<double>(v);
  ExtentBox b{cy, cx, cy, cx, 0};
  for (std::size_t rad = 0;; ++rad) {
    b.row0 = cy >= rad ? cy - rad : 0;
    b.col0 = cx >= rad ? cx - rad : 0;
    b.row1 = std::min(h - 1, cy + rad);
    b.col1 = std::min(w - 1, cx + rad);
    double in = 0;
    for (std::size_t y = b.row0; y <= b.row1; ++y)
      for (std::size_t x = b.col0; x <= b.col1; ++x) in += static_cast<double>(heat[y * w + x]);
    b.mass = total > 0 ? in / total : 1.0;
    const bool whole = b.row0 == 0 && b.col0 == 0 && b.row1 == h - 1 && b.col1 == w - 1;
    if (b.mass >= threshold - 1e-12 || whole) return b;
  }
}

// Pixels with a nonzero heat value.
template <typename T>
std::vector<std::size_t> support(const Tensor<T>& heat) {
  std::vector<std::size_t> s;
  for (std::size_t i = 0; i < heat.size(); ++i)
    if (heat[i] != T(0)) s.push_back(i);
  return s;
}

template <typename T>
void write_heatmap(const std::filesystem::path& p, const Tensor<T>& heat) {
  io::write_pnm(p, heat.reshaped(Shape{1, heat.dim(0), heat.dim(1)}));
}

// ------------------------------------------------------------------ report

struct RFReport {
  std::vector<std::size_t> per_layer;
  struct Fused {
    FusedTransform transform;
    std::size_t r = 0;
    std::size_t frames = 0;
    double area = 0;
  };
  std::optional<Fused> fused;
  struct Erf {
    std::string file;
    ExtentBox box;
    double threshold = 0.95;
  };
  std::optional<Erf> erf;
};

inline nlohmann::ordered_json to_json(const RFReport& r) {
  nlohmann::ordered_json j;
  j["per_layer"] = r.per_layer;
  j["theoretical_rf"] = r.per_layer.empty() ? std::size_t{1} : r.per_layer.back();
  if (r.fused)
    j["fused"] = {{"kind", to_string(r.fused->transform.kind)},
                  {"params", r.fused->transform.params},
                  {"r", r.fused->r},
                  {"frames", r.fused->frames},
                  {"area", r.fused->area}};
  if (r.erf)
    j["erf"] = {{"file", r.erf->file},
                {"extent_box",
                 {{"row0", r.erf->box.row0},
                  {"col0", r.erf->box.col0},
                  {"row1", r.erf->box.row1},
                  {"col1", r.erf->box.col1},
                  {"mass", r.erf->box.mass},
                  {"threshold", r.erf->threshold}}}};
  return j;
}

}  // namespace das
