#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "das/core/error.hpp"
#include "das/transforms/affine.hpp"

namespace das {

enum class TransformKind {
  Identity,
  TranslateX,
  TranslateY,
  Rotate,
  Scale,
  ShearX,
  ShearY,
  AutoContrast,
  Invert,
  Equalize,
  Solarize,
  Posterize,
  Color,
  Brightness,
  Sharpness,
  Cutout,
};

enum class Differentiability { smooth, straight_through };

// One registry row. Magnitudes are fixed per op; the search only chooses which ops appear.
struct TransformInfo {
  TransformKind kind;
  std::string_view name;
  std::string_view unit;
  double default_magnitude;
  double min_magnitude;
  double max_magnitude;
  Differentiability diff;
  bool affine;
};

// Registry table. Geometric defaults keep a 2-pixel interior band intact at 32x32 under
// apply-then-undo; translations are a fraction of the image side.
inline constexpr std::array<TransformInfo, 16> kTransformTable{{
    {TransformKind::Identity, "Identity", "none", 0.0, 0.0, 0.0, Differentiability::smooth, true},
    {TransformKind::TranslateX, "TranslateX", "fraction of width", 0.0625, -0.5, 0.5, Differentiability::smooth, true},
    {TransformKind::TranslateY, "TranslateY", "fraction of height", 0.0625, -0.5, 0.5, Differentiability::smooth, true},
    {TransformKind::Rotate, "Rotate", "degrees", 8.0, -180.0, 180.0, Differentiability::smooth, true},
    {TransformKind::Scale, "Scale", "factor", 1.1, 0.5, 2.0, Differentiability::smooth, true},
    {TransformKind::ShearX, "ShearX", "shear factor", 0.1, -1.0, 1.0, Differentiability::smooth, true},
    {TransformKind::ShearY, "ShearY", "shear factor", 0.1, -1.0, 1.0, Differentiability::smooth, true},
    {TransformKind::AutoContrast, "AutoContrast", "none", 0.0, 0.0, 0.0, Differentiability::straight_through, false},
    {TransformKind::Invert, "Invert", "none", 0.0, 0.0, 0.0, Differentiability::smooth, false},
    {TransformKind::Equalize, "Equalize", "none", 0.0, 0.0, 0.0, Differentiability::straight_through, false},
    {TransformKind::Solarize, "Solarize", "threshold", 0.5, 0.0, 1.0, Differentiability::straight_through, false},
    {TransformKind::Posterize, "Posterize", "bits", 4.0, 1.0, 8.0, Differentiability::straight_through, false},
    {TransformKind::Color, "Color", "factor", 1.5, 0.0, 3.0, Differentiability::smooth, false},
    {TransformKind::Brightness, "Brightness", "factor", 1.5, 0.0, 3.0, Differentiability::smooth, false},
    {TransformKind::Sharpness, "Sharpness", "factor", 1.5, 0.0, 3.0, Differentiability::smooth, false},
    {TransformKind::Cutout, "Cutout", "patch fraction", 0.25, 0.0, 1.0, Differentiability::smooth, false},
}};

inline const TransformInfo& info(TransformKind k) {
  for (const auto& row : kTransformTable)
    if (row.kind == k) return row;
  throw ConfigError("unregistered transform kind");
}

inline std::string to_string(TransformKind k) { return std::string(info(k).name); }

inline TransformKind parse_transform_kind(std::string_view name) {
  for (const auto& row : kTransformTable)
    if (row.name == name) return row.kind;
  throw ConfigError("unknown transform '" + std::string(name) + "'");
}

// A candidate augmentation with a fixed magnitude.
struct TransformOp {
  TransformKind kind = TransformKind::Identity;
  double magnitude = 0.0;

  TransformOp() = default;
  TransformOp(TransformKind k) : kind(k), magnitude(info(k).default_magnitude) {}
  TransformOp(TransformKind k, double mag) : kind(k), magnitude(mag) { validate(); }

  void validate() const {
    const auto& row = info(kind);
    DAS_CHECK(magnitude >= row.min_magnitude && magnitude <= row.max_magnitude, ConfigError,
              std::string(row.name) + " magnitude " + std::to_string(magnitude) + " outside [" +
                  std::to_string(row.min_magnitude) + ", " + std::to_string(row.max_magnitude) + "]");
    if (kind == TransformKind::Scale) DAS_CHECK(magnitude > 0, ConfigError, "Scale factor must be positive");
  }

  bool is_affine() const { return info(kind).affine; }
  Differentiability differentiability() const { return info(kind).diff; }
  std::string name() const { return to_string(kind); }

  friend bool operator==(const TransformOp& a, const TransformOp& b) {
    return a.kind == b.kind && a.magnitude == b.magnitude;
  }
};

// Sampling matrix for an affine op.
inline AffineTransform to_affine(const TransformOp& op) {
  const double m = op.magnitude;
  switch (op.kind) {
    case TransformKind::Identity: return AffineTransform::identity();
    case TransformKind::TranslateX: return AffineTransform::translation(2.0 * m, 0.0);
    case TransformKind::TranslateY: return AffineTransform::translation(0.0, 2.0 * m);
    case TransformKind::Rotate: return AffineTransform::rotation(m);
    case TransformKind::Scale: return AffineTransform::scaling(m);
    case TransformKind::ShearX: return AffineTransform::shear_x(m);
    case TransformKind::ShearY: return AffineTransform::shear_y(m);
    default: break;
  }
  throw ConfigError(op.name() + " is not an affine transform");
}

inline AffineTransform inverse(const TransformOp& op) { return inverse(to_affine(op), op.name()); }

enum class SearchSpace { affine5, full13 };

inline std::string to_string(SearchSpace s) { return s == SearchSpace::affine5 ? "affine5" : "full13"; }

inline SearchSpace parse_search_space(std::string_view s) {
  if (s == "affine5") return SearchSpace::affine5;
  if (s == "full13") return SearchSpace::full13;
  throw ConfigError("unknown search space '" + std::string(s) + "'");
}

// Candidate lists; Identity is always first so that ties resolve to it.
inline std::vector<TransformOp> candidates(SearchSpace s) {
  using K = TransformKind;
  if (s == SearchSpace::affine5) return {K::Identity, K::TranslateX, K::TranslateY, K::Scale, K::Rotate};
  // The 13 listed items of the image-to-image space; "Shear X/Y" and "Translate X/Y" are one
  // item each and are realized by their X variant.
  return {K::Identity,   K::ShearX,   K::TranslateX, K::Rotate, K::AutoContrast,
          K::Invert,     K::Equalize, K::Solarize,   K::Posterize, K::Color,
          K::Brightness, K::Sharpness, K::Cutout};
}

}  // namespace das
