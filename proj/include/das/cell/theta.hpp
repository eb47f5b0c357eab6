#pragma once

#include <cmath>
#include <vector>

#include "das/core/tensor.hpp"

namespace das {

// Samples of the identity branch x_I and a transformed branch x_T, plus the ideal feature m*.
template <typename T>
struct ThetaOracle {
  std::vector<Tensor<T>> samples_x_I;
  std::vector<Tensor<T>> samples_x_T;
  Tensor<T> m_star;

  void validate() const {
    DAS_CHECK(!samples_x_I.empty(), ContractError, "theta oracle needs at least one sample");
    DAS_CHECK(samples_x_I.size() == samples_x_T.size(), DimensionError, "x_I and x_T sample counts differ");
    for (std::size_t s = 0; s < samples_x_I.size(); ++s)
      DAS_CHECK(samples_x_I[s].shape() == m_star.shape() && samples_x_T[s].shape() == m_star.shape(), DimensionError,
                "theta oracle sample " + std::to_string(s) + " does not match the shape of m*");
  }
};

struct ThetaMoments {
  double var_I = 0;  // var(x_I - m*)
  double var_T = 0;  // var(x_T - m*)
  double cov = 0;    // cov(x_T - m*, x_I - m*)
};

// Population moments over every element of every sample.
template <typename T>
ThetaMoments theta_moments(const ThetaOracle<T>& o) {
  o.validate();
  double n = 0, mi = 0, mt = 0;
  for (std::size_t s = 0; s < o.samples_x_I.size(); ++s)
    for (std::size_t i = 0; i < o.m_star.size(); ++i) {
      mi += static_cast<double>(o.samples_x_I[s][i]) - o.m_star[i];
      mt += static_cast<double>(o.samples_x_T[s][i]) - o.m_star[i];
      n += 1;
    }
  mi /= n;
  mt /= n;
  ThetaMoments m;
  for (std::size_t s = 0; s < o.samples_x_I.size(); ++s)
    for (std::size_t i = 0; i < o.m_star.size(); ++i) {
      const double di = static_cast<double>(o.samples_x_I[s][i]) - o.m_star[i] - mi;
      const double dt = static_cast<double>(o.samples_x_T[s][i]) - o.m_star[i] - mt;
      m.var_I += di * di;
      m.var_T += dt * dt;
      m.cov += di * dt;
    }
  m.var_I /= n;
  m.var_T /= n;
  m.cov /= n;
  return m;
}

struct ThetaStar {
  double theta_I = 0;
  double theta_T = 0;
  double z = 0;
};

// Minimizer of var(θ_T·x_T + θ_I·x_I − m*) subject to θ_I + θ_T = 1.
template <typename T>
ThetaStar theta_star(const ThetaOracle<T>& o) {
  const ThetaMoments m = theta_moments(o);
  ThetaStar r;
  r.z = m.var_T + m.var_I - 2 * m.cov;
  DAS_CHECK(r.z > 1e-12, DegenerateInputError,
            "theta*: x_T and x_I differ from m* by the same fluctuation (z = " + std::to_string(r.z) + ")");
  r.theta_T = (m.var_I - m.cov) / r.z;
  // 1 - θ_T rather than the symmetric formula so that the pair sums to 1 exactly
  r.theta_I = 1.0 - r.theta_T;
  return r;
}

// var(θ_T·x_T + (1−θ_T)·x_I − m*), evaluated directly from the samples.
template <typename T>
double mixture_variance(const ThetaOracle<T>& o, double theta_T) {
  o.validate();
  const double theta_I = 1.0 - theta_T;
  double n = 0, mean = 0, sq = 0;
  for (std::size_t s = 0; s < o.samples_x_I.size(); ++s)
    for (std::size_t i = 0; i < o.m_star.size(); ++i) {
      const double d = theta_T * o.samples_x_T[s][i] + theta_I * o.samples_x_I[s][i] - o.m_star[i];
      mean += d;
      sq += d * d;
      n += 1;
    }
  mean /= n;
  return sq / n - mean * mean;
}

}  // namespace das
