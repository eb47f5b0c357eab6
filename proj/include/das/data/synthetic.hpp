#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "das/data/dataset.hpp"
#include "das/search/checkpoint.hpp"

namespace das {

enum class DatasetKind { synthetic_corner_cue, synthetic_scale_cue, cifar10_subset, synthetic_segmentation };

inline std::string to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::synthetic_corner_cue: return "synthetic_corner_cue";
    case DatasetKind::synthetic_scale_cue: return "synthetic_scale_cue";
    case DatasetKind::cifar10_subset: return "cifar10_subset";
    case DatasetKind::synthetic_segmentation: return "synthetic_segmentation";
  }
  return "?";
}

inline DatasetKind parse_dataset_kind(const std::string& s) {
  for (auto k : {DatasetKind::synthetic_corner_cue, DatasetKind::synthetic_scale_cue, DatasetKind::cifar10_subset,
                 DatasetKind::synthetic_segmentation})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown dataset kind '" + s + "'");
}

// What a generator needs for one split.
struct SyntheticSpec {
  std::size_t count = 256;
  std::size_t height = 16, width = 16;
  std::size_t channels = 1;
  std::size_t classes = 2;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;  // split id; different streams never share an image generator
};

namespace detail {

// One generator per image, derived from (seed, stream, index) so images can be built in any order.
inline std::mt19937_64 image_rng(const SyntheticSpec& s, std::size_t i) {
  std::seed_seq seq{static_cast<std::uint32_t>(s.seed), static_cast<std::uint32_t>(s.seed >> 32),
                    static_cast<std::uint32_t>(s.stream), static_cast<std::uint32_t>(i), 0x5eedu};
  return std::mt19937_64(seq);
}

// Labels 0..K-1 repeated, then shuffled: every histogram bin is within one of the others.
inline std::vector<int> balanced_labels(const SyntheticSpec& s) {
  std::vector<int> l(s.count);
  for (std::size_t i = 0; i < s.count; ++i) l[i] = static_cast<int>(i % s.classes);
  std::seed_seq seq{static_cast<std::uint32_t>(s.seed), static_cast<std::uint32_t>(s.seed >> 32),
                    static_cast<std::uint32_t>(s.stream), 0x1abe1u};
  std::mt19937_64 rng(seq);
  std::shuffle(l.begin(), l.end(), rng);
  return l;
}

template <typename T>
void fill_rect(Tensor<T>& img, std::size_t n, std::size_t y0, std::size_t x0, std::size_t hh, std::size_t ww, T v) {
  const std::size_t c = img.dim(1), h = img.dim(2), w = img.dim(3);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = y0; y < std::min(h, y0 + hh); ++y)
      for (std::size_t x = x0; x < std::min(w, x0 + ww); ++x) img[((n * c + ch) * h + y) * w + x] = v;
}

template <typename T>
void noise_background(Tensor<T>& img, std::size_t n, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  const std::size_t inner = img.size() / img.dim(0);
  for (std::size_t i = 0; i < inner; ++i) img[n * inner + i] = static_cast<T>(u(rng));
}

inline void check_common(const SyntheticSpec& s) {
  DAS_CHECK(s.count >= 1, ConfigError, "dataset needs at least one sample");
  DAS_CHECK(s.channels >= 1, ConfigError, "dataset needs at least one channel");
  DAS_CHECK(s.classes >= 2, ConfigError, "dataset needs at least two classes");
}

}  // namespace detail

// Glyph geometry for the corner-cue task at a given image size.
struct CornerLayout {
  std::size_t glyph = 2;   // side of the square glyph
  std::size_t margin = 4;  // gap between the glyph and the nearest borders

  static CornerLayout for_size(std::size_t h, std::size_t w) {
    const std::size_t s = std::min(h, w);
    return {std::max<std::size_t>(2, s / 8), s / 4};
  }
  // top-left pixel of the glyph for class k: corners TL, BR, TR, BL
  std::pair<std::size_t, std::size_t> origin(std::size_t k, std::size_t h, std::size_t w) const {
    const bool bottom = k == 1 || k == 3, right = k == 1 || k == 2;
    return {bottom ? h - margin - glyph : margin, right ? w - margin - glyph : margin};
  }
};

// A bright square glyph sits in the corner named by the label, at a fixed inset from both
// borders, on uniform noise with two dim single-pixel distractors anywhere. The two glyph
// positions differ only by a translation, and nothing near the centre carries the class.
template <typename T>
Dataset<T> gen_synthetic_corner_cue(const SyntheticSpec& s) {
  detail::check_common(s);
  DAS_CHECK(s.height >= 16 && s.width >= 16, ConfigError,
            "corner-cue images must be at least 16x16, got " + std::to_string(s.height) + "x" + std::to_string(s.width));
  DAS_CHECK(s.classes <= 4, ConfigError, "corner-cue glyph cannot fit: only four corners for " + std::to_string(s.classes) + " classes");
  const auto lay = CornerLayout::for_size(s.height, s.width);
  DAS_CHECK(2 * (lay.margin + lay.glyph) <= std::min(s.height, s.width), ConfigError, "corner-cue glyph cannot fit");
  Dataset<T> d;
  d.classes = s.classes;
  d.images = Tensor<T>(Shape{s.count, s.channels, s.height, s.width});
  d.labels = detail::balanced_labels(s);
  for (std::size_t i = 0; i < s.count; ++i) {
    auto rng = detail::image_rng(s, i);
    detail::noise_background(d.images, i, rng, 0.0, 0.3);
    std::uniform_int_distribution<std::size_t> py(0, s.height - 1), px(0, s.width - 1);
    for (int k = 0; k < 2; ++k) detail::fill_rect(d.images, i, py(rng), px(rng), 1, 1, T(0.6));
    const auto [y, x] = lay.origin(static_cast<std::size_t>(d.labels[i]), s.height, s.width);
    detail::fill_rect(d.images, i, y, x, lay.glyph, lay.glyph, T(1));
  }
  return d;
}

// A centred square whose side encodes the class, with position jitter and noise.
template <typename T>
Dataset<T> gen_synthetic_scale_cue(const SyntheticSpec& s) {
  detail::check_common(s);
  const std::size_t side = std::min(s.height, s.width);
  const std::size_t step = side / (2 * s.classes + 2);
  DAS_CHECK(step >= 1, ConfigError, "scale-cue squares cannot fit " + std::to_string(s.classes) + " classes");
  Dataset<T> d;
  d.classes = s.classes;
  d.images = Tensor<T>(Shape{s.count, s.channels, s.height, s.width});
  d.labels = detail::balanced_labels(s);
  for (std::size_t i = 0; i < s.count; ++i) {
    auto rng = detail::image_rng(s, i);
    detail::noise_background(d.images, i, rng, 0.0, 0.3);
    const std::size_t a = 2 * step * (static_cast<std::size_t>(d.labels[i]) + 1);
    std::uniform_int_distribution<int> j(-static_cast<int>(step), static_cast<int>(step));
    const auto y = static_cast<std::size_t>(std::clamp<int>(static_cast<int>((s.height - a) / 2) + j(rng), 0, static_cast<int>(s.height - a)));
    const auto x = static_cast<std::size_t>(std::clamp<int>(static_cast<int>((s.width - a) / 2) + j(rng), 0, static_cast<int>(s.width - a)));
    detail::fill_rect(d.images, i, y, x, a, a, T(0.9));
  }
  return d;
}

// Per-pixel labels: background 0 plus one to three rectangles of classes 1..K-1, each class
// with its own intensity.
template <typename T>
Dataset<T> gen_synthetic_segmentation(const SyntheticSpec& s) {
  detail::check_common(s);
  DAS_CHECK(s.height >= 8 && s.width >= 8, ConfigError, "segmentation images must be at least 8x8");
  Dataset<T> d;
  d.classes = s.classes;
  d.dense = true;
  d.images = Tensor<T>(Shape{s.count, s.channels, s.height, s.width});
  d.labels.assign(s.count * s.height * s.width, 0);
  const std::size_t hw = s.height * s.width;
  for (std::size_t i = 0; i < s.count; ++i) {
    auto rng = detail::image_rng(s, i);
    detail::noise_background(d.images, i, rng, 0.0, 0.15);
    std::uniform_int_distribution<std::size_t> cls(1, s.classes - 1), nrect(1, 3);
    std::uniform_int_distribution<std::size_t> sz(s.height / 4, s.height / 2);
    const std::size_t n = nrect(rng);
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t c = cls(rng), hh = sz(rng), ww = sz(rng);
      const std::size_t y0 = std::uniform_int_distribution<std::size_t>(0, s.height - hh)(rng);
      const std::size_t x0 = std::uniform_int_distribution<std::size_t>(0, s.width - ww)(rng);
      const T v = static_cast<T>(0.25 + 0.75 * static_cast<double>(c) / static_cast<double>(s.classes - 1));
      detail::fill_rect(d.images, i, y0, x0, hh, ww, v);
      for (std::size_t y = y0; y < y0 + hh; ++y)
        for (std::size_t x = x0; x < x0 + ww; ++x) d.labels[i * hw + y * s.width + x] = static_cast<int>(c);
    }
  }
  return d;
}

// Datasets on disk reuse the checkpoint container: tensors "images" and "labels".
template <typename T>
void save_dataset(const std::filesystem::path& p, const Dataset<T>& d) {
  Checkpoint<T> ck;
  ck.tensors.emplace_back("images", d.images);
  Tensor<T> l(Shape{d.labels.size()});
  for (std::size_t i = 0; i < d.labels.size(); ++i) l[i] = static_cast<T>(d.labels[i]);
  ck.tensors.emplace_back("labels", std::move(l));
  ck.meta = {{"classes", d.classes}, {"dense", d.dense}};
  save_checkpoint(p, ck);
}

template <typename T>
Dataset<T> load_dataset(const std::filesystem::path& p) {
  const auto ck = load_checkpoint<T>(p);
  Dataset<T> d;
  d.images = ck.at("images");
  for (T v : ck.at("labels").data()) d.labels.push_back(static_cast<int>(v));
  try {
    d.classes = ck.meta.at("classes").template get<std::size_t>();
    d.dense = ck.meta.at("dense").template get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
  d.validate();
  return d;
}

}  // namespace das
