#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "das/data/dataset.hpp"

namespace das {

// CIFAR-10 binary batches: records of one label byte and 3072 pixel bytes (R, G, B planes,
// row-major 32x32).
inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarRecord = 1 + 3 * kCifarSide * kCifarSide;

template <typename T>
Dataset<T> load_cifar10_binary(const std::filesystem::path& p, std::size_t take = std::numeric_limits<std::size_t>::max()) {
  std::error_code ec;
  const auto bytes = std::filesystem::file_size(p, ec);
  DAS_CHECK(!ec, ConfigError, "cannot read " + p.string());
  DAS_CHECK(bytes % kCifarRecord == 0, FormatError,
            p.string() + ": size " + std::to_string(bytes) + " is not a multiple of " + std::to_string(kCifarRecord));
  const std::size_t n = std::min<std::size_t>(bytes / kCifarRecord, take);
  std::ifstream is(p, std::ios::binary);
  Dataset<T> d;
  d.classes = 10;
  d.images = Tensor<T>(Shape{n, 3, kCifarSide, kCifarSide});
  std::vector<unsigned char> rec(kCifarRecord);
  constexpr std::size_t px = kCifarRecord - 1;
  for (std::size_t i = 0; i < n; ++i) {
    is.read(reinterpret_cast<char*>(rec.data()), static_cast<std::streamsize>(kCifarRecord));
    DAS_CHECK(is.gcount() == static_cast<std::streamsize>(kCifarRecord), FormatError, p.string() + ": truncated record");
    DAS_CHECK(rec[0] < 10, FormatError, p.string() + ": label " + std::to_string(rec[0]) + " out of range");
    d.labels.push_back(rec[0]);
    for (std::size_t j = 0; j < px; ++j) d.images[i * px + j] = static_cast<T>(rec[1 + j]) / T(255);
  }
  return d;
}

// Concatenates several batches, stopping after `take` images.
template <typename T>
Dataset<T> load_cifar10_files(const std::vector<std::filesystem::path>& files, std::size_t take) {
  std::vector<Dataset<T>> parts;
  std::size_t n = 0;
  for (const auto& f : files) {
    if (n >= take) break;
    parts.push_back(load_cifar10_binary<T>(f, take - n));
    n += parts.back().size();
  }
  Dataset<T> d;
  d.classes = 10;
  d.images = Tensor<T>(Shape{n, 3, kCifarSide, kCifarSide});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.images.ptr(), p.images.ptr() + p.images.size(), d.images.ptr() + off);
    off += p.images.size();
    d.labels.insert(d.labels.end(), p.labels.begin(), p.labels.end());
  }
  return d;
}

// Inverse of the loader; values are rounded to the nearest byte.
template <typename T>
void write_cifar10_binary(const std::filesystem::path& p, const Dataset<T>& d) {
  d.validate();
  DAS_CHECK(d.images.shape() == (Shape{d.size(), 3, kCifarSide, kCifarSide}), DimensionError,
            "CIFAR records hold 3x32x32 images, got " + shape_str(d.images.shape()));
  DAS_CHECK(!d.dense && d.classes <= 256, ConfigError, "CIFAR records hold one byte label per image");
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  DAS_CHECK(os.good(), ConfigError, "cannot write " + p.string());
  constexpr std::size_t px = kCifarRecord - 1;
  std::vector<unsigned char> rec(kCifarRecord);
  for (std::size_t i = 0; i < d.size(); ++i) {
    rec[0] = static_cast<unsigned char>(d.labels[i]);
    for (std::size_t j = 0; j < px; ++j) {
      const double v = std::round(static_cast<double>(d.images[i * px + j]) * 255.0);
      rec[1 + j] = static_cast<unsigned char>(std::clamp(v, 0.0, 255.0));
    }
    os.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(kCifarRecord));
  }
}

}  // namespace das
