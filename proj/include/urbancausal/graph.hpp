#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "urbancausal/error.hpp"

namespace urbancausal {

/// Binary adjacency; entry (i, j) = 1 encodes the edge i -> j.
using Adjacency = Eigen::MatrixXi;

struct CausalGraph {
  Adjacency adjacency;
  std::vector<std::string> factor_names;
  bool finalized = false;

  CausalGraph() = default;
  CausalGraph(Adjacency adj, std::vector<std::string> names) : adjacency(std::move(adj)), factor_names(std::move(names)) {
    if (adjacency.rows() != adjacency.cols() || static_cast<std::size_t>(adjacency.rows()) != factor_names.size())
      throw Error(ErrorKind::DimensionMismatch, "adjacency must be d x d with d factor names");
  }

  static CausalGraph empty(std::vector<std::string> names) {
    const auto d = static_cast<Eigen::Index>(names.size());
    return CausalGraph(Adjacency::Zero(d, d), std::move(names));
  }

  std::size_t size() const { return factor_names.size(); }
  bool has_edge(std::size_t from, std::size_t to) const {
    return adjacency(static_cast<Eigen::Index>(from), static_cast<Eigen::Index>(to)) != 0;
  }
  void set_edge(std::size_t from, std::size_t to, bool on = true) {
    adjacency(static_cast<Eigen::Index>(from), static_cast<Eigen::Index>(to)) = on ? 1 : 0;
  }

  std::size_t index_of(std::string_view name) const {
    for (std::size_t i = 0; i < factor_names.size(); ++i)
      if (factor_names[i] == name) return i;
    throw Error(ErrorKind::UnknownFactor, std::string(name));
  }

  std::vector<std::size_t> parents(std::size_t j) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i)
      if (has_edge(i, j)) out.push_back(i);
    return out;
  }

  std::vector<std::pair<std::size_t, std::size_t>> edges() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = 0; i < size(); ++i)
      for (std::size_t j = 0; j < size(); ++j)
        if (has_edge(i, j)) out.emplace_back(i, j);
    return out;
  }

  std::size_t edge_count() const { return static_cast<std::size_t>((adjacency.array() != 0).count()); }
};

/// exp(A) by scaling and squaring a truncated Taylor series. The argument
/// is scaled until its 1-norm is at most 1/2 and the series runs until the
/// next term is below 1e-18 relative to the partial sum.
inline Eigen::MatrixXd matrix_exponential(const Eigen::MatrixXd& a) {
  const auto d = a.rows();
  const double norm = a.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  const Eigen::MatrixXd scaled = a / std::ldexp(1.0, squarings);

  Eigen::MatrixXd result = Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd term = Eigen::MatrixXd::Identity(d, d);
  for (int k = 1; k < 64; ++k) {
    term = term * scaled / static_cast<double>(k);
    result += term;
    if (term.cwiseAbs().maxCoeff() <= 1e-18 * std::max(1.0, result.cwiseAbs().maxCoeff())) break;
  }
  for (int s = 0; s < squarings; ++s) result = result * result;
  return result;
}

/// trace(exp(U)) - d. For a binary U the series of diagonal terms is a sum
/// of closed-walk counts, so the value is exactly 0 on DAGs and strictly
/// positive otherwise.
inline double acyclicity_penalty(const Adjacency& adjacency) {
  if (adjacency.rows() != adjacency.cols()) throw Error(ErrorKind::ShapeMismatch, "adjacency must be square");
  if (adjacency.rows() == 0) return 0.0;
  const Eigen::MatrixXd e = matrix_exponential(adjacency.cast<double>());
  return std::max(0.0, e.trace() - static_cast<double>(adjacency.rows()));
}

/// Kahn's algorithm; smallest index first among ready nodes. nullopt on a cycle.
inline std::optional<std::vector<std::size_t>> topological_order(const Adjacency& adj) {
  const auto d = static_cast<std::size_t>(adj.rows());
  std::vector<int> indegree(d, 0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      if (adj(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) != 0) ++indegree[j];
  std::set<std::size_t> ready;
  for (std::size_t j = 0; j < d; ++j)
    if (indegree[j] == 0) ready.insert(j);
  std::vector<std::size_t> order;
  order.reserve(d);
  while (!ready.empty()) {
    const std::size_t u = *ready.begin();
    ready.erase(ready.begin());
    order.push_back(u);
    for (std::size_t v = 0; v < d; ++v)
      if (adj(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v)) != 0 && --indegree[v] == 0) ready.insert(v);
  }
  if (order.size() != d) return std::nullopt;
  return order;
}

inline bool is_acyclic(const Adjacency& adj) { return topological_order(adj).has_value(); }

/// Marks a graph as a DAG after checking the penalty is exactly zero.
inline CausalGraph finalize(CausalGraph g) {
  for (Eigen::Index i = 0; i < g.adjacency.rows(); ++i)
    if (g.adjacency(i, i) != 0) throw Error(ErrorKind::CyclicGraph, "self-loop on '" + g.factor_names[static_cast<std::size_t>(i)] + "'");
  if (acyclicity_penalty(g.adjacency) != 0.0) throw Error(ErrorKind::CyclicGraph, "graph has a directed cycle");
  g.finalized = true;
  return g;
}

/// Causal-order stratification: level 0 holds the parentless nodes, level k
/// the nodes whose parents all sit in earlier levels.
inline std::vector<std::vector<std::string>> causal_order(const CausalGraph& g) {
  const std::size_t d = g.size();
  std::vector<int> level(d, -1);
  std::size_t assigned = 0;
  std::vector<std::vector<std::string>> out;
  for (int current = 0; assigned < d; ++current) {
    std::vector<std::size_t> this_level;
    for (std::size_t j = 0; j < d; ++j) {
      if (level[j] >= 0) continue;
      bool ready = true;
      for (std::size_t i = 0; i < d && ready; ++i)
        if (g.has_edge(i, j) && (level[i] < 0 || level[i] >= current)) ready = false;
      if (ready) this_level.push_back(j);
    }
    if (this_level.empty()) throw Error(ErrorKind::CyclicGraph, "graph has a directed cycle");
    out.emplace_back();
    for (auto j : this_level) {
      level[j] = current;
      out.back().push_back(g.factor_names[j]);
    }
    assigned += this_level.size();
  }
  return out;
}

/// Nodes with a directed path into `node`, never stepping through `blocked`.
inline std::vector<bool> ancestor_mask(const CausalGraph& g, std::size_t node,
                                       std::optional<std::size_t> blocked = std::nullopt) {
  const std::size_t d = g.size();
  std::vector<bool> seen(d, false);
  std::vector<std::size_t> stack{node};
  while (!stack.empty()) {
    const std::size_t v = stack.back();
    stack.pop_back();
    for (std::size_t u = 0; u < d; ++u) {
      if (!g.has_edge(u, v) || seen[u] || u == node) continue;
      if (blocked && u == *blocked) continue;
      seen[u] = true;
      stack.push_back(u);
    }
  }
  return seen;
}

inline std::vector<std::size_t> ancestor_indices(const CausalGraph& g, std::size_t node) {
  const auto mask = ancestor_mask(g, node);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) out.push_back(i);
  return out;
}

inline std::set<std::string> ancestors(const CausalGraph& g, std::string_view node) {
  std::set<std::string> out;
  for (auto i : ancestor_indices(g, g.index_of(node))) out.insert(g.factor_names[i]);
  return out;
}

inline Adjacency skeleton(const Adjacency& a) {
  Adjacency s = a + a.transpose();
  return s.unaryExpr([](int v) { return v != 0 ? 1 : 0; });
}

/// Same skeleton and same unshielded colliders.
inline bool markov_equivalent(const Adjacency& a, const Adjacency& b) {
  if (a.rows() != b.rows() || skeleton(a) != skeleton(b)) return false;
  const auto d = a.rows();
  const Adjacency sk = skeleton(a);
  for (Eigen::Index c = 0; c < d; ++c)
    for (Eigen::Index x = 0; x < d; ++x)
      for (Eigen::Index y = x + 1; y < d; ++y) {
        if (x == c || y == c || sk(x, y) != 0) continue;
        const bool va = a(x, c) && a(y, c);
        const bool vb = b(x, c) && b(y, c);
        if (va != vb) return false;
      }
  return true;
}

/// Structural Hamming distance: additions + deletions + reversals.
inline std::size_t structural_hamming_distance(const Adjacency& a, const Adjacency& b) {
  std::size_t shd = 0;
  const auto d = a.rows();
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = i + 1; j < d; ++j)
      if (a(i, j) != b(i, j) || a(j, i) != b(j, i)) ++shd;
  return shd;
}

}  // namespace urbancausal
