#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <random>
#include <vector>

#include <json.hpp>

#include "das/cell/genotype.hpp"
#include "das/core/io.hpp"

namespace das {

// frames[n, t] is the source image after the cumulative transform of frame t (t = 0..T-1
// holds applications 1..T).
template <typename T>
struct VideoBatch {
  Tensor<T> frames;  // [N,T,C,H,W]
  std::vector<AffineTransform> per_frame_transform;
  Tensor<T> source;  // [N,C,H,W]
  // False when the generating cell has no single geometric map (undo is then refused).
  bool exact_geometry = true;

  std::size_t num_frames() const { return per_frame_transform.size(); }

  void validate() const {
    DAS_CHECK(frames.rank() == 5, DimensionError, "video frames must be [N,T,C,H,W]");
    DAS_CHECK(frames.dim(1) == per_frame_transform.size(), DimensionError,
              "frame count does not match the number of cumulative transforms");
  }
};

namespace detail {

template <typename T>
Tensor<T> as_batch(const Tensor<T>& images) {
  if (images.rank() == 4) return images;
  DAS_CHECK(images.rank() == 3, DimensionError, "expected [C,H,W] or [N,C,H,W], got " + shape_str(images.shape()));
  Shape s = images.shape();
  s.insert(s.begin(), 1);
  return images.reshaped(s);
}

// Writes frame t of every sample into the [N,T,...] buffer.
template <typename T>
void put_frame(Tensor<T>& video, const Tensor<T>& frame, std::size_t t) {
  const std::size_t n = video.dim(0), nt = video.dim(1), inner = frame.size() / n;
  for (std::size_t i = 0; i < n; ++i)
    std::copy(frame.ptr() + i * inner, frame.ptr() + (i + 1) * inner, video.ptr() + (i * nt + t) * inner);
}

}  // namespace detail

// Discrete path. A geometrically consistent pure-affine genotype warps the source once per
// frame by step^t; otherwise the cell is applied t times.
template <typename T>
VideoBatch<T> make_video(const Tensor<T>& images, const Genotype& g, std::size_t num_frames,
                         FillPolicy fill = FillPolicy::zeros) {
  DAS_CHECK(num_frames >= 1, ConfigError, "a video needs at least one frame");
  g.validate();
  VideoBatch<T> v;
  v.source = detail::as_batch(images);
  Shape s = v.source.shape();
  s.insert(s.begin() + 1, num_frames);
  v.frames = Tensor<T>(s);
  const auto geo = g.geometry();
  v.exact_geometry = geo.has_value();
  const AffineTransform step = geo.value_or(AffineTransform::identity());
  const bool single_warp = geo.has_value() && g.is_pure_affine();
  AffineTransform cum;
  Tensor<T> cur = v.source;
  for (std::size_t t = 0; t < num_frames; ++t) {
    cum = compose(cum, step);
    v.per_frame_transform.push_back(cum);
    if (single_warp) {
      detail::put_frame(v.frames, warp(cum, v.source, fill), t);
    } else {
      cur = genotype_forward(g, cur, fill);
      detail::put_frame(v.frames, cur, t);
    }
  }
  return v;
}

// T copies of each image: the replica video.
template <typename T>
VideoBatch<T> replica_video(const Tensor<T>& images, std::size_t num_frames) {
  Genotype id;
  id.edges = {{0, 1, TransformOp(TransformKind::Identity), 1.0}};
  return make_video(images, id, num_frames);
}

namespace ops {

// Relaxed path used during search: frame t is the cell applied t times. Returns [N,T,C,H,W].
template <typename T>
Var<T> make_video_relaxed(const CellSpec& cell, CellParams<T>& params, const Var<T>& x, std::size_t num_frames,
                          bool train_tau, FillPolicy fill = FillPolicy::zeros) {
  DAS_CHECK(num_frames >= 1, ConfigError, "a video needs at least one frame");
  std::vector<Var<T>> w;
  for (auto& p : params.tau) w.push_back(softmax(x.tape->param(p, train_tau)));
  std::vector<Var<T>> frames;
  Var<T> cur = x;
  for (std::size_t t = 0; t < num_frames; ++t) {
    cur = cell_forward_weighted(cell, cur, w, fill);
    frames.push_back(cur);
  }
  return stack_axis1(frames);
}

}  // namespace ops

// Each sample's frames in a seeded random order; contents are untouched.
template <typename T>
Tensor<T> reshuffle_frames(const Tensor<T>& frames, std::mt19937_64& rng) {
  DAS_CHECK(frames.rank() >= 2, DimensionError, "reshuffle expects [N,T,...]");
  const std::size_t n = frames.dim(0), nt = frames.dim(1), inner = frames.size() / (n * nt);
  Tensor<T> out(frames.shape());
  std::vector<std::size_t> perm(nt);
  for (std::size_t i = 0; i < n; ++i) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t t = 0; t < nt; ++t)
      std::copy(frames.ptr() + (i * nt + perm[t]) * inner, frames.ptr() + (i * nt + perm[t] + 1) * inner,
                out.ptr() + (i * nt + t) * inner);
  }
  return out;
}

// frame_000.ppm ... for sample `n`, plus transforms.json with the cumulative maps.
template <typename T>
void dump_video(const std::filesystem::path& dir, const VideoBatch<T>& v, std::size_t n = 0) {
  v.validate();
  std::filesystem::create_directories(dir);
  const std::size_t nt = v.frames.dim(1), c = v.frames.dim(2), h = v.frames.dim(3), w = v.frames.dim(4);
  DAS_CHECK(c == 1 || c == 3, DimensionError, "dump_video expects 1 or 3 channels");
  DAS_CHECK(n < v.frames.dim(0), ContractError, "dump_video: sample index out of range");
  nlohmann::ordered_json side;
  side["frames"] = nt;
  side["exact_geometry"] = v.exact_geometry;
  side["transforms"] = nlohmann::ordered_json::array();
  for (std::size_t t = 0; t < nt; ++t) {
    // gray frames are replicated to three channels so every frame is a PPM
    const std::size_t plane = h * w;
    Tensor<T> f(Shape{3, h, w});
    const T* src = v.frames.ptr() + (n * nt + t) * c * plane;
    for (std::size_t ch = 0; ch < 3; ++ch) std::copy(src + (c == 3 ? ch : 0) * plane, src + ((c == 3 ? ch : 0) + 1) * plane, f.ptr() + ch * plane);
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03zu.ppm", t);
    io::write_pnm(dir / name, f);
    side["transforms"].push_back(v.per_frame_transform[t].m);
  }
  std::ofstream(dir / "transforms.json") << side.dump(2) << '\n';
}

}  // namespace das
