#pragma once

#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

#include "das/core/ops.hpp"
#include "das/transforms/apply.hpp"

namespace das {

struct CellEdge {
  std::size_t from = 0;
  std::size_t to = 0;
  std::vector<TransformOp> candidates;
};

// How the cell's output node is formed.
enum class CellOutput {
  last_node,             // the final intermediate node
  mean_of_intermediates  // in-degree-normalized sum of every intermediate node
};

// DAG of image-valued nodes. Nodes [0, num_input_nodes) are inputs, all bound to the same
// image; every later node averages the mixed outputs of its incoming edges.
struct CellSpec {
  std::size_t num_input_nodes = 1;
  std::size_t num_intermediate = 0;
  std::vector<CellEdge> edges;
  CellOutput output = CellOutput::last_node;
  std::string topology = "custom";

  std::size_t num_nodes() const { return num_input_nodes + num_intermediate; }

  // Straight chain of `n_edges` mixed edges: x -> n1 -> ... -> n_edges.
  static CellSpec chain(std::size_t n_edges, const std::vector<TransformOp>& cands) {
    CellSpec c;
    c.num_input_nodes = 1;
    c.num_intermediate = n_edges;
    c.topology = "chain" + std::to_string(n_edges);
    for (std::size_t i = 0; i < n_edges; ++i) c.edges.push_back({i, i + 1, cands});
    c.validate();
    return c;
  }

  // Every intermediate node receives one edge from each input and each earlier intermediate.
  static CellSpec dense_dag(std::size_t n_inputs, std::size_t n_intermediate, const std::vector<TransformOp>& cands,
                            CellOutput out) {
    CellSpec c;
    c.num_input_nodes = n_inputs;
    c.num_intermediate = n_intermediate;
    c.output = out;
    c.topology = "dag" + std::to_string(n_inputs) + "x" + std::to_string(n_intermediate);
    for (std::size_t j = n_inputs; j < n_inputs + n_intermediate; ++j)
      for (std::size_t i = 0; i < j; ++i) c.edges.push_back({i, j, cands});
    c.validate();
    return c;
  }

  // 1 input, 10-edge chain over the 5-op space: 5^10 discrete cells.
  static CellSpec affine5() {
    CellSpec c = chain(10, candidates(SearchSpace::affine5));
    c.topology = "affine5-chain10";
    return c;
  }

  // 2 inputs, 4 intermediates fully connected (2+3+4+5 = 14 edges) over 13 ops: 13^14 cells.
  static CellSpec full13() {
    CellSpec c = dense_dag(2, 4, candidates(SearchSpace::full13), CellOutput::mean_of_intermediates);
    c.topology = "full13-dag2x4";
    return c;
  }

  void validate() const {
    DAS_CHECK(num_input_nodes == 1 || num_input_nodes == 2, ConfigError, "a cell has one or two input nodes");
    DAS_CHECK(num_intermediate >= 1, ConfigError, "a cell needs at least one intermediate node");
    std::vector<bool> reached(num_nodes(), false);
    for (std::size_t i = 0; i < num_input_nodes; ++i) reached[i] = true;
    std::size_t prev_to = 0;
    for (const auto& e : edges) {
      DAS_CHECK(e.to < num_nodes() && e.from < e.to, ConfigError,
                "edge (" + std::to_string(e.from) + "," + std::to_string(e.to) + ") violates DAG order");
      DAS_CHECK(e.to >= num_input_nodes, ConfigError, "edges may not point into an input node");
      DAS_CHECK(e.to >= prev_to, ConfigError, "edges must be listed in topological order");
      prev_to = e.to;
      DAS_CHECK(!e.candidates.empty(), ConfigError, "edge with an empty candidate list");
      bool has_identity = false;
      for (const auto& op : e.candidates) {
        op.validate();
        has_identity = has_identity || op.kind == TransformKind::Identity;
      }
      DAS_CHECK(has_identity, ConfigError, "every candidate list must contain Identity");
      if (reached[e.from]) reached[e.to] = true;
    }
    for (std::size_t j = num_input_nodes; j < num_nodes(); ++j) {
      bool has_in = false;
      for (const auto& e : edges) has_in = has_in || e.to == j;
      DAS_CHECK(has_in, ConfigError, "node " + std::to_string(j) + " has no incoming edge");
    }
    if (output == CellOutput::last_node)
      DAS_CHECK(reached[num_nodes() - 1], ConfigError, "output node unreachable from the inputs");
    else
      for (std::size_t j = num_input_nodes; j < num_nodes(); ++j)
        DAS_CHECK(reached[j], ConfigError, "intermediate node " + std::to_string(j) + " unreachable");
  }

  // log(number of discrete cells) = Σ log|candidates|.
  double log_cardinality() const {
    double s = 0;
    for (const auto& e : edges) s += std::log(static_cast<double>(e.candidates.size()));
    return s;
  }

  // "k^E" when every edge has k candidates, otherwise the product written out.
  std::string cardinality_str() const {
    bool uniform = true;
    for (const auto& e : edges) uniform = uniform && e.candidates.size() == edges.front().candidates.size();
    std::ostringstream os;
    if (uniform && !edges.empty()) {
      os << edges.front().candidates.size() << '^' << edges.size();
    } else {
      for (std::size_t i = 0; i < edges.size(); ++i) os << (i ? "*" : "") << edges[i].candidates.size();
    }
    return os.str();
  }
};

// Per-edge architecture logits. Zero-initialized, i.e. a uniform mixture.
template <typename T>
struct CellParams {
  std::vector<Parameter<T>> tau;

  CellParams() = default;
  explicit CellParams(const CellSpec& cell) {
    for (std::size_t e = 0; e < cell.edges.size(); ++e)
      tau.emplace_back("tau" + std::to_string(e), Tensor<T>(Shape{cell.edges[e].candidates.size()}));
  }

  std::vector<Parameter<T>*> pointers() {
    std::vector<Parameter<T>*> out;
    for (auto& p : tau) out.push_back(&p);
    return out;
  }
};

// softmax over one edge's logits, temperature 1.
template <typename T>
std::vector<T> softmax_weights(const Tensor<T>& tau) {
  std::vector<T> w(tau.size());
  const T mx = *std::max_element(tau.data().begin(), tau.data().end());
  T z = 0;
  for (std::size_t i = 0; i < w.size(); ++i) z += (w[i] = std::exp(tau[i] - mx));
  for (auto& v : w) v /= z;
  return w;
}

template <typename T>
std::vector<std::vector<T>> mixture_weights(const CellParams<T>& params) {
  std::vector<std::vector<T>> out;
  for (const auto& p : params.tau) out.push_back(softmax_weights(p.value));
  return out;
}

namespace ops {

// Σ_t w_t · t(x) over the edge's candidates. Zero-weight candidates are skipped when the
// weights are constants, which leaves the value unchanged.
template <typename T>
Var<T> mixed_edge(const CellEdge& edge, const Var<T>& x, const Var<T>& weights, FillPolicy fill = FillPolicy::zeros) {
  DAS_CHECK(!edge.candidates.empty(), ConfigError, "mixed edge with an empty candidate list");
  DAS_CHECK(weights.shape() == Shape{edge.candidates.size()}, DimensionError,
            "edge weight vector length does not match the candidate list");
  const bool prune = !weights.requires_grad();
  std::vector<Var<T>> outs;
  std::vector<T> kept_w;
  std::vector<std::size_t> kept;
  for (std::size_t k = 0; k < edge.candidates.size(); ++k) {
    if (prune && weights.value()[k] == T(0)) continue;
    outs.push_back(apply(edge.candidates[k], x, fill));
    kept.push_back(k);
  }
  if (prune) {
    if (outs.empty()) return affine_scalar(x, T(0));
    for (std::size_t k : kept) kept_w.push_back(weights.value()[k]);
    if (kept.size() == 1 && kept_w[0] == T(1)) return outs.front();
    return weighted_sum(outs, x.tape->constant(Tensor<T>(Shape{kept.size()}, kept_w)));
  }
  return weighted_sum(outs, weights);
}

// Softmax mixture driven by the edge's logits.
template <typename T>
Var<T> mixed_edge_forward(const CellEdge& edge, const Var<T>& x, const Var<T>& tau,
                          FillPolicy fill = FillPolicy::zeros) {
  DAS_CHECK(!edge.candidates.empty(), ConfigError, "mixed edge with an empty candidate list");
  return mixed_edge(edge, x, softmax(tau), fill);
}

// Cell output for explicit per-edge mixture weights.
template <typename T>
Var<T> cell_forward_weighted(const CellSpec& cell, const Var<T>& x, const std::vector<Var<T>>& weights,
                             FillPolicy fill = FillPolicy::zeros) {
  DAS_CHECK(weights.size() == cell.edges.size(), DimensionError, "one weight vector per edge required");
  std::vector<std::vector<Var<T>>> incoming(cell.num_nodes());
  std::vector<Var<T>> node(cell.num_nodes());
  for (std::size_t i = 0; i < cell.num_input_nodes; ++i) node[i] = x;
  std::size_t e = 0;
  for (std::size_t j = cell.num_input_nodes; j < cell.num_nodes(); ++j) {
    for (; e < cell.edges.size() && cell.edges[e].to == j; ++e)
      incoming[j].push_back(mixed_edge(cell.edges[e], node[cell.edges[e].from], weights[e], fill));
    node[j] = average(incoming[j]);
  }
  if (cell.output == CellOutput::last_node) return node.back();
  std::vector<Var<T>> inter(node.begin() + static_cast<std::ptrdiff_t>(cell.num_input_nodes), node.end());
  return average(inter);
}

// Relaxed cell output; trainable logits when the params are bound as trainable.
template <typename T>
Var<T> cell_forward(const CellSpec& cell, CellParams<T>& params, const Var<T>& x, bool train_tau,
                    FillPolicy fill = FillPolicy::zeros) {
  std::vector<Var<T>> w;
  for (auto& p : params.tau) w.push_back(softmax(x.tape->param(p, train_tau)));
  return cell_forward_weighted(cell, x, w, fill);
}

// Cell output for constant mixture weights (one vector per edge).
template <typename T>
Var<T> cell_forward_fixed(const CellSpec& cell, const std::vector<std::vector<T>>& weights, const Var<T>& x,
                          FillPolicy fill = FillPolicy::zeros) {
  std::vector<Var<T>> w;
  for (const auto& v : weights) w.push_back(x.tape->constant(Tensor<T>(Shape{v.size()}, v)));
  return cell_forward_weighted(cell, x, w, fill);
}

}  // namespace ops

}  // namespace das
