#pragma once

// Linear-Gaussian structural equation models for synthetic benchmarks.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "urbancausal/error.hpp"
#include "urbancausal/graph.hpp"
#include "urbancausal/rng.hpp"
#include "urbancausal/table.hpp"

namespace urbancausal {

struct SemSpec {
  CausalGraph graph;
  Eigen::MatrixXd weights;  // weights(i, j) is the coefficient of i in j's equation
  Eigen::VectorXd noise_std;
  std::vector<FactorMeta> meta;
};

/// X_j = sum_{i in pa(j)} w_ij X_i + eps_j, eps_j ~ N(0, noise_std_j^2),
/// columns generated in topological order from a single seeded stream.
inline FactorTable generate_synthetic_sem(const CausalGraph& graph, const Eigen::MatrixXd& weights,
                                          std::span<const double> noise_std, std::size_t n, std::uint64_t seed,
                                          std::vector<FactorMeta> meta = {}) {
  const std::size_t d = graph.size();
  if (static_cast<std::size_t>(weights.rows()) != d || static_cast<std::size_t>(weights.cols()) != d ||
      noise_std.size() != d)
    throw Error(ErrorKind::DimensionMismatch, "weights must be d x d and noise_std length d");
  if (!meta.empty() && meta.size() != d) throw Error(ErrorKind::DimensionMismatch, "meta length must equal d");
  const auto order = topological_order(graph.adjacency);
  if (!order) throw Error(ErrorKind::CyclicGraph, "SEM graph must be acyclic");
  for (std::size_t i = 0; i < d; ++i) {
    if (noise_std[i] < 0) throw Error(ErrorKind::Validation, "noise_std must be non-negative");
    for (std::size_t j = 0; j < d; ++j)
      if (!graph.has_edge(i, j) && weights(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) != 0.0)
        throw Error(ErrorKind::DimensionMismatch, "non-zero weight off the edge support");
  }

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  FactorTable t;
  t.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t j : *order) {
    const auto jj = static_cast<Eigen::Index>(j);
    for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(n); ++r) t.values(r, jj) = noise_std[j] * normal(rng);
    for (std::size_t i : graph.parents(j))
      t.values.col(jj) += weights(static_cast<Eigen::Index>(i), jj) * t.values.col(static_cast<Eigen::Index>(i));
  }
  if (meta.empty())
    for (const auto& name : graph.factor_names) meta.push_back({name, Dimension::Citizens, ""});
  t.meta = std::move(meta);
  t.region_ids.reserve(n);
  for (std::size_t r = 0; r < n; ++r) t.region_ids.push_back("r" + std::to_string(r));
  return t;
}

inline FactorTable generate_synthetic_sem(const SemSpec& spec, std::size_t n, std::uint64_t seed) {
  return generate_synthetic_sem(spec.graph, spec.weights,
                                std::span<const double>(spec.noise_std.data(), static_cast<std::size_t>(spec.noise_std.size())),
                                n, seed, spec.meta);
}

struct PresetOptions {
  double weight = 0.8;
  double noise = 0.5;
  double confounder_weight = 1.0;  // confounded-triple: X -> T and X -> Y
  std::uint64_t seed = 0;          // paper16-random: structure and weight draw
};

namespace detail {

inline SemSpec make_spec(std::vector<std::string> names, const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                         double weight, double noise) {
  const auto d = static_cast<Eigen::Index>(names.size());
  SemSpec s;
  s.graph = CausalGraph::empty(names);
  s.weights = Eigen::MatrixXd::Zero(d, d);
  for (auto [i, j] : edges) {
    s.graph.set_edge(i, j);
    s.weights(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = weight;
  }
  s.noise_std = Eigen::VectorXd::Constant(d, noise);
  for (const auto& name : names) s.meta.push_back({name, Dimension::Citizens, ""});
  return s;
}

}  // namespace detail

/// Named benchmark structures: chain3, diamond4, confounded-triple and
/// paper16-random (a random tiered DAG over the 16-factor schema where edges
/// only point from Citizens to Locations to Mobility, or within a tier in
/// schema order).
inline SemSpec sem_preset(std::string_view name, const PresetOptions& opt = {}) {
  if (name == "chain3") {
    auto s = detail::make_spec({"A", "B", "C"}, {{0, 1}, {1, 2}}, opt.weight, opt.noise);
    s.meta[1].dimension = Dimension::Locations;
    s.meta[2].dimension = Dimension::Mobility;
    return s;
  }
  if (name == "diamond4") {
    auto s = detail::make_spec({"A", "B", "C", "D"}, {{0, 1}, {0, 2}, {1, 3}, {2, 3}}, opt.weight, opt.noise);
    s.meta[1].dimension = s.meta[2].dimension = Dimension::Locations;
    s.meta[3].dimension = Dimension::Mobility;
    return s;
  }
  if (name == "confounded-triple") {
    auto s = detail::make_spec({"X", "T", "Y"}, {{0, 1}, {0, 2}, {1, 2}}, opt.weight, opt.noise);
    s.weights(0, 1) = opt.confounder_weight;
    s.weights(0, 2) = opt.confounder_weight;
    s.meta[1].dimension = Dimension::Locations;
    s.meta[2].dimension = Dimension::Mobility;
    return s;
  }
  if (name == "paper16-random") {
    auto meta = urban_schema();
    std::vector<std::string> names;
    for (const auto& m : meta) names.push_back(m.name);
    Rng rng(derive_seed(opt.seed, {16}));
    std::bernoulli_distribution across(0.3), within(0.1), sign(0.5);
    std::uniform_real_distribution<double> magnitude(0.3, 1.0);
    SemSpec s = detail::make_spec(names, {}, 0.0, opt.noise);
    s.meta = meta;
    for (std::size_t i = 0; i < meta.size(); ++i)
      for (std::size_t j = i + 1; j < meta.size(); ++j) {
        const bool same_tier = meta[i].dimension == meta[j].dimension;
        if (!(same_tier ? within(rng) : across(rng))) continue;
        s.graph.set_edge(i, j);
        s.weights(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            (sign(rng) ? 1.0 : -1.0) * magnitude(rng);
      }
    return s;
  }
  throw Error(ErrorKind::InvalidGraphSpec, "unknown preset '" + std::string(name) + "'");
}

}  // namespace urbancausal
