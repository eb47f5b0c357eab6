#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "das/core/tape.hpp"

namespace das {

namespace detail {

template <typename T>
void check_finite_grad(const Parameter<T>& p) {
  for (T g : p.grad.data())
    DAS_CHECK(std::isfinite(g), NumericError, "non-finite gradient in parameter '" + p.name + "'");
}

}  // namespace detail

// v <- momentum·v + grad + wd·p ;  p <- p - lr·v. Velocity persists across steps.
template <typename T>
class Sgd {
 public:
  Sgd(T lr, T momentum = T(0), T weight_decay = T(0)) : lr_(lr), momentum_(momentum), wd_(weight_decay) {
    DAS_CHECK(lr > T(0), ConfigError, "SGD learning rate must be positive");
    DAS_CHECK(momentum >= T(0) && momentum < T(1), ConfigError, "SGD momentum must lie in [0, 1)");
  }

  void set_lr(T lr) {
    DAS_CHECK(lr > T(0), ConfigError, "SGD learning rate must be positive");
    lr_ = lr;
  }
  T lr() const { return lr_; }

  void step(const std::vector<Parameter<T>*>& params) {
    for (Parameter<T>* p : params) detail::check_finite_grad(*p);
    for (Parameter<T>* p : params) {
      auto& v = velocity_[p];
      if (v.size() != p->value.size()) v.assign(p->value.size(), T(0));
      if (p->grad.size() != p->value.size()) continue;
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = momentum_ * v[i] + p->grad[i] + wd_ * p->value[i];
        p->value[i] -= lr_ * v[i];
      }
    }
  }

 private:
  T lr_, momentum_, wd_;
  std::unordered_map<const Parameter<T>*, std::vector<T>> velocity_;
};

// Adaptive-moment optimizer with L2 weight decay folded into the gradient.
template <typename T>
class Adam {
 public:
  Adam(T lr, T weight_decay = T(0), T beta1 = T(0.5), T beta2 = T(0.999), T eps = T(1e-8))
      : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
    DAS_CHECK(lr >= T(0), ConfigError, "Adam learning rate must be non-negative");
  }

  void step(const std::vector<Parameter<T>*>& params) {
    for (Parameter<T>* p : params) detail::check_finite_grad(*p);
    if (lr_ == T(0)) return;
    ++t_;
    const T c1 = T(1) - std::pow(b1_, static_cast<T>(t_));
    const T c2 = T(1) - std::pow(b2_, static_cast<T>(t_));
    for (Parameter<T>* p : params) {
      auto& [m, v] = moments_[p];
      if (m.size() != p->value.size()) {
        m.assign(p->value.size(), T(0));
        v.assign(p->value.size(), T(0));
      }
      for (std::size_t i = 0; i < m.size(); ++i) {
        const T g = p->grad[i] + wd_ * p->value[i];
        m[i] = b1_ * m[i] + (T(1) - b1_) * g;
        v[i] = b2_ * v[i] + (T(1) - b2_) * g * g;
        p->value[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

 private:
  T lr_, wd_, b1_, b2_, eps_;
  long t_ = 0;
  std::unordered_map<const Parameter<T>*, std::pair<std::vector<T>, std::vector<T>>> moments_;
};

enum class LrSchedule { step_decay, poly };

inline LrSchedule parse_lr_schedule(std::string_view s) {
  if (s == "step-decay" || s == "step_decay" || s == "step") return LrSchedule::step_decay;
  if (s == "poly") return LrSchedule::poly;
  throw ConfigError("unknown learning-rate schedule '" + std::string(s) + "'");
}

inline std::string to_string(LrSchedule s) { return s == LrSchedule::poly ? "poly" : "step-decay"; }

// step-decay: base·0.1^floor(3·epoch/total); poly: base·(1 - epoch/total)^0.9.
inline double lr_schedule(LrSchedule kind, double base, long epoch, long total) {
  DAS_CHECK(total > 0 && epoch >= 0 && epoch < total, ContractError,
            "lr_schedule: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(total) + ")");
  switch (kind) {
    case LrSchedule::step_decay:
      return base * std::pow(0.1, static_cast<double>((3 * epoch) / total));
    case LrSchedule::poly:
      return base * std::pow(1.0 - static_cast<double>(epoch) / static_cast<double>(total), 0.9);
  }
  throw ConfigError("unknown learning-rate schedule");
}

inline double lr_schedule(std::string_view kind, double base, long epoch, long total) {
  return lr_schedule(parse_lr_schedule(kind), base, epoch, total);
}

}  // namespace das
