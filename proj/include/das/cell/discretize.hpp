#pragma once

#include <functional>
#include <vector>

#include "das/cell/genotype.hpp"

namespace das {

template <typename T>
using EdgeWeights = std::vector<std::vector<T>>;

// Weights of one edge with candidate k removed and the rest rescaled to sum to 1.
// If k carried all the mass the edge contributes nothing.
template <typename T>
std::vector<T> mask_candidate(const std::vector<T>& w, std::size_t k) {
  std::vector<T> out(w);
  out[k] = T(0);
  double s = 0;
  for (std::size_t i = 0; i < w.size(); ++i)
    if (i != k) s += static_cast<double>(w[i]);
  for (std::size_t i = 0; i < w.size(); ++i)
    if (i != k) out[i] = s > 0 ? static_cast<T>(static_cast<double>(w[i]) / s) : T(0);
  return out;
}

struct PerturbationReport {
  double base_metric = 0;
  // drops[e][k] = base_metric - metric with candidate k of edge e masked
  std::vector<std::vector<double>> drops;
  std::vector<std::size_t> choice;
};

// Per edge, masks each candidate in turn (other edges untouched) and keeps the one whose
// removal hurts `evaluate` the most. Ties go to the lower index.
template <typename T>
PerturbationReport perturbation_select(const CellSpec& cell, const EdgeWeights<T>& weights,
                                       const std::function<double(const EdgeWeights<T>&)>& evaluate) {
  DAS_CHECK(weights.size() == cell.edges.size(), DimensionError, "one weight vector per edge required");
  PerturbationReport rep;
  rep.base_metric = evaluate(weights);
  for (std::size_t e = 0; e < cell.edges.size(); ++e) {
    const std::size_t K = weights[e].size();
    DAS_CHECK(K == cell.edges[e].candidates.size(), DimensionError, "weight vector length mismatch on an edge");
    rep.drops.emplace_back(K, 0.0);
    std::size_t best = 0;
    if (K > 1) {
      for (std::size_t k = 0; k < K; ++k) {
        EdgeWeights<T> masked = weights;
        masked[e] = mask_candidate(weights[e], k);
        rep.drops[e][k] = rep.base_metric - evaluate(masked);
        if (rep.drops[e][k] > rep.drops[e][best]) best = k;
      }
    }
    rep.choice.push_back(best);
  }
  return rep;
}

template <typename T>
Genotype discretize_by_perturbation(const CellSpec& cell, const EdgeWeights<T>& weights,
                                    const std::function<double(const EdgeWeights<T>&)>& evaluate, SearchSpace space,
                                    PerturbationReport* report = nullptr) {
  auto rep = perturbation_select(cell, weights, evaluate);
  Genotype g = Genotype::from_choice(cell, rep.choice, space);
  for (std::size_t e = 0; e < g.edges.size(); ++e) g.edges[e].weight = static_cast<double>(weights[e][rep.choice[e]]);
  if (report) *report = std::move(rep);
  return g;
}

// Largest tau per edge; lower index on ties.
template <typename T>
std::vector<std::size_t> argmax_tau(const CellParams<T>& params) {
  std::vector<std::size_t> out;
  for (const auto& p : params.tau) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < p.value.size(); ++k)
      if (p.value[k] > p.value[best]) best = k;
    out.push_back(best);
  }
  return out;
}

template <typename T>
Genotype argmax_tau_baseline(const CellSpec& cell, const CellParams<T>& params, SearchSpace space) {
  const auto choice = argmax_tau(params);
  Genotype g = Genotype::from_choice(cell, choice, space);
  const auto w = mixture_weights(params);
  for (std::size_t e = 0; e < g.edges.size(); ++e) g.edges[e].weight = static_cast<double>(w[e][choice[e]]);
  return g;
}

}  // namespace das
