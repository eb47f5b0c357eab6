#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "das/core/tensor.hpp"

namespace das {

template <typename T>
class Tape;

// A trainable buffer that outlives individual tapes. The optimizer reads `grad`.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
};

// Handle to a value recorded on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return tape->value(*this).shape(); }
  bool requires_grad() const { return tape->requires_grad(*this); }
};

// Append-only record of differentiable operations. Reverse-mode, first order.
// backward() visits nodes in exact reverse insertion order.
template <typename T>
class Tape {
 public:
  // Receives the gradient of the node's output; accumulates into inputs via grad_ptr().
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> v) { return push(std::move(v), false); }

  Var<T> leaf(Tensor<T> v, bool requires_grad = true) { return push(std::move(v), requires_grad); }

  // Binds a parameter; a trainable binding is written back to p.grad by backward().
  Var<T> param(Parameter<T>& p, bool trainable = true) {
    for (const auto& [id, ptr] : bound_)
      if (ptr == &p) return Var<T>{this, id};
    Var<T> v = push(p.value, trainable);
    if (trainable) bound_.emplace_back(v.id, &p);
    return v;
  }

  // Records an op. When no input requires grad the result is a constant and no node is kept.
  Var<T> record(Tensor<T> out, const std::vector<Var<T>>& inputs, BackwardFn fn) {
    bool any = false;
    for (const auto& in : inputs) {
      check_owner(in);
      any = any || entries_[in.id].requires_grad;
    }
    Var<T> v = push(std::move(out), any);
    if (any) nodes_.push_back(Node{v.id, std::move(fn)});
    return v;
  }

  void check_owner(const Var<T>& v) const {
    DAS_CHECK(v.tape == this, ContractError, "variable belongs to a different tape");
    DAS_CHECK(v.id < entries_.size(), ContractError, "dangling variable id");
  }

  const Tensor<T>& value(const Var<T>& v) const {
    check_owner(v);
    return entries_[v.id].value;
  }

  bool requires_grad(const Var<T>& v) const {
    check_owner(v);
    return entries_[v.id].requires_grad;
  }

  // Gradient accumulation buffer, allocated lazily; nullptr when v needs no gradient.
  T* grad_ptr(const Var<T>& v) {
    Entry& e = entries_[v.id];
    if (!e.requires_grad) return nullptr;
    if (!sized(e)) e.grad = Tensor<T>(e.value.shape());
    return e.grad.ptr();
  }

  const Tensor<T>& grad(const Var<T>& v) const {
    check_owner(v);
    return entries_[v.id].grad;
  }

  bool has_grad(const Var<T>& v) const {
    check_owner(v);
    return sized(entries_[v.id]);
  }

  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_values() const { return entries_.size(); }

  void backward(const Var<T>& loss) {
    check_owner(loss);
    DAS_CHECK(entries_[loss.id].value.size() == 1, ContractError,
              "backward() requires a scalar loss, got shape " + shape_str(entries_[loss.id].value.shape()));
    if (T* g = grad_ptr(loss)) g[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      const Entry& out = entries_[it->output];
      if (out.grad.empty()) continue;
      it->backward(*this, out.grad);
    }
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      Entry& e = entries_[i];
      if (e.requires_grad && !sized(e)) e.grad = Tensor<T>(e.value.shape());
    }
    for (auto& [id, p] : bound_) p->grad = entries_[id].grad;
  }

 private:
  struct Entry {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
  };
  struct Node {
    std::size_t output;
    BackwardFn backward;
  };

  // Scalars have an empty shape, so the buffer length is checked as well.
  static bool sized(const Entry& e) { return e.grad.shape() == e.value.shape() && e.grad.size() == e.value.size(); }

  Var<T> push(Tensor<T> v, bool requires_grad) {
    entries_.push_back(Entry{std::move(v), {}, requires_grad});
    return Var<T>{this, entries_.size() - 1};
  }

  std::vector<Entry> entries_;
  std::vector<Node> nodes_;
  std::vector<std::pair<std::size_t, Parameter<T>*>> bound_;
};

}  // namespace das
