#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "das/core/tape.hpp"

namespace das {

// train: weights trainable, batch statistics folded into running stats.
// arch:  weights frozen, batch statistics used but not recorded (the tau step).
// eval:  weights frozen, running statistics.
enum class RunMode { train, arch, eval };

// Anything the search loop can drive. Inputs are [N*T, C, H, W] with the T frames of each
// sample contiguous; outputs are [N*T, K] logits or [N*T, K, H, W] maps.
template <typename T>
class Model {
 public:
  virtual ~Model() = default;
  virtual std::vector<Parameter<T>*> parameters() = 0;
  virtual Var<T> forward(const Var<T>& x, std::size_t frames, RunMode mode) = 0;
  virtual bool dense_output() const { return false; }
  // Non-trainable state that still belongs in a checkpoint (running statistics).
  virtual std::vector<std::pair<std::string, Tensor<T>*>> buffers() { return {}; }

  std::size_t param_count() {
    std::size_t n = 0;
    for (auto* p : parameters()) n += p->value.size();
    return n;
  }
};

template <typename T>
std::uint64_t parameter_hash(const std::vector<Parameter<T>*>& ps) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto* p : ps) h = (h ^ content_hash(p->value)) * 1099511628211ull;
  return h;
}

}  // namespace das
