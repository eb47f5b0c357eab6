#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "das/core/error.hpp"

namespace das {

// 2x3 row-major map from output to input coordinates. Coordinates are normalized to [-1,1]
// with x pointing right and y pointing up; pixel centers sit at half-pixel offsets.
struct AffineTransform {
  std::array<double, 6> m{1, 0, 0, 0, 1, 0};

  static AffineTransform identity() { return {}; }

  // Content moves by (+tx, +ty) in normalized units.
  static AffineTransform translation(double tx, double ty) { return {{1, 0, -tx, 0, 1, -ty}}; }

  // Content rotates counter-clockwise by `degrees` about the image center.
  static AffineTransform rotation(double degrees) {
    const double r = degrees * std::numbers::pi / 180.0;
    const double c = std::cos(r), s = std::sin(r);
    return {{c, s, 0, -s, c, 0}};
  }

  // Content is magnified by `gamma` about the image center.
  static AffineTransform scaling(double gamma) {
    DAS_CHECK(gamma != 0.0, ConfigError, "scaling factor must be non-zero");
    return {{1 / gamma, 0, 0, 0, 1 / gamma, 0}};
  }

  static AffineTransform shear_x(double s) { return {{1, -s, 0, 0, 1, 0}}; }
  static AffineTransform shear_y(double s) { return {{1, 0, 0, -s, 1, 0}}; }

  double det() const { return m[0] * m[4] - m[1] * m[3]; }

  std::array<double, 2> apply(double x, double y) const {
    return {m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5]};
  }

  bool is_identity(double tol = 0.0) const {
    const AffineTransform id;
    for (int i = 0; i < 6; ++i)
      if (std::abs(m[i] - id.m[i]) > tol) return false;
    return true;
  }
};

// Applying `first` and then `second` equals warping once by compose(first, second).
inline AffineTransform compose(const AffineTransform& first, const AffineTransform& second) {
  const auto& a = first.m;
  const auto& b = second.m;
  return {{a[0] * b[0] + a[1] * b[3], a[0] * b[1] + a[1] * b[4], a[0] * b[2] + a[1] * b[5] + a[2],
           a[3] * b[0] + a[4] * b[3], a[3] * b[1] + a[4] * b[4], a[3] * b[2] + a[4] * b[5] + a[5]}};
}

inline AffineTransform inverse(const AffineTransform& t, const std::string& what = "affine transform") {
  const double d = t.det();
  DAS_CHECK(std::abs(d) > 1e-8, InversionError, "cannot invert " + what + ": singular linear part");
  const auto& m = t.m;
  const double i0 = m[4] / d, i1 = -m[1] / d, i3 = -m[3] / d, i4 = m[0] / d;
  return {{i0, i1, -(i0 * m[2] + i1 * m[5]), i3, i4, -(i3 * m[2] + i4 * m[5])}};
}

inline AffineTransform power(const AffineTransform& t, unsigned n) {
  AffineTransform out;
  for (unsigned i = 0; i < n; ++i) out = compose(out, t);
  return out;
}

inline double max_abs_diff(const AffineTransform& a, const AffineTransform& b) {
  double d = 0;
  for (int i = 0; i < 6; ++i) d = std::max(d, std::abs(a.m[i] - b.m[i]));
  return d;
}

}  // namespace das
