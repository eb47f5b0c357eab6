#pragma once

#include <algorithm>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "das/core/tensor.hpp"

namespace das {

// Images [N,C,H,W] with one label per image, or one per pixel (N·H·W, −1 = ignore) when dense.
template <typename T>
struct Dataset {
  Tensor<T> images;
  std::vector<int> labels;
  std::size_t classes = 0;
  bool dense = false;

  std::size_t size() const { return images.rank() == 0 ? 0 : images.dim(0); }
  std::size_t labels_per_sample() const { return dense ? images.dim(2) * images.dim(3) : 1; }

  void validate() const {
    DAS_CHECK(images.rank() == 4, DimensionError, "dataset images must be [N,C,H,W], got " + shape_str(images.shape()));
    DAS_CHECK(labels.size() == size() * labels_per_sample(), DimensionError,
              "dataset has " + std::to_string(labels.size()) + " labels for " + std::to_string(size()) + " images");
    DAS_CHECK(classes >= 1, ConfigError, "dataset needs at least one class");
    for (int l : labels)
      DAS_CHECK((l >= 0 && static_cast<std::size_t>(l) < classes) || (dense && l == -1), ContractError,
                "label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
  }

  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset out;
    out.classes = classes;
    out.dense = dense;
    Shape s = images.shape();
    s[0] = idx.size();
    out.images = Tensor<T>(s);
    const std::size_t inner = size() ? images.size() / size() : 0, per = labels_per_sample();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      DAS_CHECK(idx[i] < size(), ContractError, "subset index out of range");
      std::copy(images.ptr() + idx[i] * inner, images.ptr() + (idx[i] + 1) * inner, out.images.ptr() + i * inner);
      out.labels.insert(out.labels.end(), labels.begin() + static_cast<long>(idx[i] * per),
                        labels.begin() + static_cast<long>((idx[i] + 1) * per));
    }
    return out;
  }

  Dataset slice(std::size_t begin, std::size_t end) const {
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    return subset(idx);
  }
};

template <typename T>
struct Split {
  Dataset<T> first;
  Dataset<T> second;
};

// Seeded permutation cut in half; the halves are disjoint and cover the set.
template <typename T>
Split<T> split_half(const Dataset<T>& d, std::mt19937_64& rng) {
  DAS_CHECK(d.size() >= 2, ContractError, "cannot split a dataset of " + std::to_string(d.size()) + " samples");
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  const std::size_t h = d.size() / 2;
  return {d.subset({idx.begin(), idx.begin() + static_cast<long>(h)}), d.subset({idx.begin() + static_cast<long>(h), idx.end()})};
}

}  // namespace das
