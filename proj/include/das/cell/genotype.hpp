#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "das/cell/cell.hpp"

namespace das {

struct GenotypeEdge {
  std::size_t from = 0;
  std::size_t to = 0;
  TransformOp op;
  double weight = 1.0;  // mixture weight of the chosen op when it was selected
};

// A discretized cell: exactly one op per edge, same topology as the CellSpec it came from.
struct Genotype {
  std::size_t num_input_nodes = 1;
  std::size_t num_intermediate = 1;
  CellOutput output = CellOutput::last_node;
  std::string topology = "custom";
  std::vector<GenotypeEdge> edges;
  SearchSpace space = SearchSpace::affine5;
  std::uint64_t seed = 0;
  std::string metric = "none";

  std::size_t num_nodes() const { return num_input_nodes + num_intermediate; }

  static Genotype from_choice(const CellSpec& cell, const std::vector<std::size_t>& choice, SearchSpace space) {
    DAS_CHECK(choice.size() == cell.edges.size(), DimensionError, "one choice per edge required");
    Genotype g;
    g.num_input_nodes = cell.num_input_nodes;
    g.num_intermediate = cell.num_intermediate;
    g.output = cell.output;
    g.topology = cell.topology;
    g.space = space;
    for (std::size_t e = 0; e < choice.size(); ++e) {
      DAS_CHECK(choice[e] < cell.edges[e].candidates.size(), ConfigError, "choice index out of range");
      g.edges.push_back({cell.edges[e].from, cell.edges[e].to, cell.edges[e].candidates[choice[e]], 1.0});
    }
    return g;
  }

  // Identity on every edge of `cell`: the replica genotype.
  static Genotype identity_like(const CellSpec& cell, SearchSpace space) {
    return from_choice(cell, std::vector<std::size_t>(cell.edges.size(), 0), space);
  }

  void validate() const {
    DAS_CHECK(num_input_nodes == 1 || num_input_nodes == 2, ConfigError, "a genotype has one or two input nodes");
    DAS_CHECK(num_intermediate >= 1, ConfigError, "a genotype needs an intermediate node");
    std::size_t prev = 0;
    for (const auto& e : edges) {
      DAS_CHECK(e.from < e.to && e.to < num_nodes() && e.to >= num_input_nodes, ConfigError,
                "genotype edge (" + std::to_string(e.from) + "," + std::to_string(e.to) + ") violates DAG order");
      DAS_CHECK(e.to >= prev, ConfigError, "genotype edges must be in topological order");
      prev = e.to;
      e.op.validate();
    }
    for (std::size_t j = num_input_nodes; j < num_nodes(); ++j) {
      bool has_in = false;
      for (const auto& e : edges) has_in = has_in || e.to == j;
      DAS_CHECK(has_in, ConfigError, "genotype node " + std::to_string(j) + " has no incoming edge");
    }
  }

  // Every op must come from the configured space's candidate list.
  void check_space(SearchSpace s) const {
    DAS_CHECK(s == space, ConfigError, "genotype was searched in " + to_string(space) + ", config says " + to_string(s));
    const auto allowed = candidates(s);
    for (const auto& e : edges)
      DAS_CHECK(std::find(allowed.begin(), allowed.end(), e.op) != allowed.end(), ConfigError,
                e.op.name() + " is not part of the " + to_string(s) + " space");
  }

  bool is_identity() const {
    for (const auto& e : edges)
      if (e.op.kind != TransformKind::Identity) return false;
    return true;
  }

  bool is_pure_affine() const {
    for (const auto& e : edges)
      if (!e.op.is_affine()) return false;
    return true;
  }

  // Net sampling map from the input to the output, treating pixel ops as geometric identity.
  // Empty when different paths through the cell disagree geometrically.
  std::optional<AffineTransform> geometry() const {
    std::vector<std::optional<AffineTransform>> node(num_nodes());
    for (std::size_t i = 0; i < num_input_nodes; ++i) node[i] = AffineTransform::identity();
    auto agree = [](std::optional<AffineTransform>& slot, const AffineTransform& t) {
      if (!slot) {
        slot = t;
        return true;
      }
      return max_abs_diff(*slot, t) < 1e-12;
    };
    std::vector<bool> ok(num_nodes(), true);
    for (const auto& e : edges) {
      if (!node[e.from] || !ok[e.from]) {
        ok[e.to] = false;
        continue;
      }
      const AffineTransform step = e.op.is_affine() ? to_affine(e.op) : AffineTransform::identity();
      if (!agree(node[e.to], compose(*node[e.from], step))) ok[e.to] = false;
    }
    if (output == CellOutput::last_node) {
      if (!ok.back() || !node.back()) return std::nullopt;
      return node.back();
    }
    std::optional<AffineTransform> out;
    for (std::size_t j = num_input_nodes; j < num_nodes(); ++j) {
      if (!ok[j] || !node[j] || !agree(out, *node[j])) return std::nullopt;
    }
    return out;
  }
};

// Discrete cell output: the chosen op per edge, nodes averaged over incoming edges.
template <typename T>
Tensor<T> genotype_forward(const Genotype& g, const Tensor<T>& x, FillPolicy fill = FillPolicy::zeros) {
  std::vector<Tensor<T>> node(g.num_nodes());
  std::vector<std::size_t> indeg(g.num_nodes(), 0);
  for (std::size_t i = 0; i < g.num_input_nodes; ++i) node[i] = x;
  for (const auto& e : g.edges) {
    Tensor<T> y = apply(e.op, node[e.from], fill);
    if (indeg[e.to]++ == 0) {
      node[e.to] = std::move(y);
    } else {
      for (std::size_t i = 0; i < y.size(); ++i) node[e.to][i] += y[i];
    }
  }
  auto finish = [&](std::size_t j) {
    if (indeg[j] > 1)
      for (auto& v : node[j].data()) v /= static_cast<T>(indeg[j]);
  };
  for (std::size_t j = g.num_input_nodes; j < g.num_nodes(); ++j) finish(j);
  if (g.output == CellOutput::last_node) return node.back();
  Tensor<T> out(x.shape());
  for (std::size_t j = g.num_input_nodes; j < g.num_nodes(); ++j)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += node[j][i];
  for (auto& v : out.data()) v /= static_cast<T>(g.num_intermediate);
  return out;
}

inline std::string to_string(CellOutput o) { return o == CellOutput::last_node ? "last_node" : "mean_of_intermediates"; }

inline CellOutput parse_cell_output(const std::string& s) {
  if (s == "last_node") return CellOutput::last_node;
  if (s == "mean_of_intermediates") return CellOutput::mean_of_intermediates;
  throw ConfigError("unknown cell output mode '" + s + "'");
}

inline nlohmann::ordered_json to_json(const Genotype& g) {
  nlohmann::ordered_json edges = nlohmann::ordered_json::array();
  for (const auto& e : g.edges)
    edges.push_back({{"from", e.from}, {"to", e.to}, {"op", e.op.name()}, {"magnitude", e.op.magnitude},
                     {"weight", e.weight}});
  nlohmann::ordered_json j;
  j["cell"] = {{"nodes", g.num_nodes()},
               {"inputs", g.num_input_nodes},
               {"output", to_string(g.output)},
               {"topology", g.topology},
               {"edges", edges}};
  j["search_space"] = to_string(g.space);
  j["meta"] = {{"seed", g.seed}, {"metric", g.metric}};
  return j;
}

inline Genotype genotype_from_json(const nlohmann::json& j) {
  try {
    Genotype g;
    const auto& c = j.at("cell");
    g.num_input_nodes = c.value("inputs", std::size_t{1});
    const std::size_t nodes = c.at("nodes").get<std::size_t>();
    DAS_CHECK(nodes > g.num_input_nodes, ConfigError, "genotype needs more nodes than inputs");
    g.num_intermediate = nodes - g.num_input_nodes;
    g.output = parse_cell_output(c.value("output", std::string("last_node")));
    g.topology = c.value("topology", std::string("custom"));
    for (const auto& e : c.at("edges"))
      g.edges.push_back({e.at("from").get<std::size_t>(), e.at("to").get<std::size_t>(),
                         TransformOp(parse_transform_kind(e.at("op").get<std::string>()), e.at("magnitude").get<double>()),
                         e.value("weight", 1.0)});
    g.space = parse_search_space(j.at("search_space").get<std::string>());
    if (j.contains("meta")) {
      g.seed = j["meta"].value("seed", std::uint64_t{0});
      g.metric = j["meta"].value("metric", std::string("none"));
    }
    g.validate();
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed genotype JSON: ") + e.what());
  }
}

inline void save_genotype(const std::filesystem::path& p, const Genotype& g) {
  std::ofstream os(p);
  DAS_CHECK(os.good(), ConfigError, "cannot write " + p.string());
  os << to_json(g).dump(2) << '\n';
}

inline Genotype load_genotype(const std::filesystem::path& p) {
  std::ifstream is(p);
  DAS_CHECK(is.good(), ConfigError, "cannot open genotype file " + p.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
  return genotype_from_json(j);
}

namespace detail {

inline std::string node_name(std::size_t i, std::size_t inputs) {
  return i < inputs ? "in" + std::to_string(i) : "n" + std::to_string(i);
}

inline std::string weight_str(double w) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << w;
  return os.str();
}

}  // namespace detail

// Relaxed cell: one DOT edge per candidate, labeled with its mixture weight.
template <typename T>
std::string to_dot(const CellSpec& cell, const std::vector<std::vector<T>>& weights) {
  std::ostringstream os;
  os << "digraph cell {\n  rankdir=LR;\n";
  for (std::size_t e = 0; e < cell.edges.size(); ++e)
    for (std::size_t k = 0; k < cell.edges[e].candidates.size(); ++k)
      os << "  " << detail::node_name(cell.edges[e].from, cell.num_input_nodes) << " -> "
         << detail::node_name(cell.edges[e].to, cell.num_input_nodes) << " [label=\""
         << cell.edges[e].candidates[k].name() << ' ' << detail::weight_str(static_cast<double>(weights[e][k]))
         << "\"];\n";
  os << "}\n";
  return os.str();
}

inline std::string to_dot(const Genotype& g) {
  std::ostringstream os;
  os << "digraph genotype {\n  rankdir=LR;\n";
  for (const auto& e : g.edges)
    os << "  " << detail::node_name(e.from, g.num_input_nodes) << " -> " << detail::node_name(e.to, g.num_input_nodes)
       << " [label=\"" << e.op.name() << ' ' << detail::weight_str(e.weight) << "\"];\n";
  if (g.output == CellOutput::mean_of_intermediates)
    for (std::size_t j = g.num_input_nodes; j < g.num_nodes(); ++j)
      os << "  " << detail::node_name(j, g.num_input_nodes) << " -> out;\n";
  os << "}\n";
  return os.str();
}

}  // namespace das
