#pragma once

// Synthetic tables shared by the unit and acceptance suites.

#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "urbancausal/sem.hpp"
#include "urbancausal/table.hpp"

namespace fixture {

using namespace urbancausal;

struct Benchmark {
  FactorTable table;
  CausalGraph truth;
};

/// Sixteen factors in three tiers. Citizens c1..c3 drive locations l1..l3,
/// which together with the root l4 drive the outcome Y. Eight distractors
/// d1..d8 hang off the citizens, so they correlate with Y without lying on
/// any path into it.
inline Benchmark selection_benchmark(std::size_t n, std::uint64_t seed) {
  std::vector<FactorMeta> meta;
  for (int i = 1; i <= 3; ++i) meta.push_back({"c" + std::to_string(i), Dimension::Citizens, ""});
  for (int i = 1; i <= 4; ++i) meta.push_back({"l" + std::to_string(i), Dimension::Locations, ""});
  for (int i = 1; i <= 8; ++i) meta.push_back({"d" + std::to_string(i), Dimension::Locations, ""});
  meta.push_back({"Y", Dimension::Mobility, ""});
  std::vector<std::string> names;
  for (const auto& m : meta) names.push_back(m.name);

  const Eigen::Index d = 16, y = 15;
  auto g = CausalGraph::empty(names);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(d, d);
  auto edge = [&](Eigen::Index from, Eigen::Index to, double weight) {
    g.set_edge(static_cast<std::size_t>(from), static_cast<std::size_t>(to));
    w(from, to) = weight;
  };
  for (Eigen::Index c = 0; c < 3; ++c) edge(c, 3 + c, 0.8);
  for (Eigen::Index l = 3; l < 7; ++l) edge(l, y, 1.0);
  for (Eigen::Index k = 0; k < 8; ++k) edge(k % 3, 7 + k, 0.9);
  std::vector<double> noise(16, 1.0);
  noise[6] = 1.3;
  noise[15] = 0.5;
  for (std::size_t k = 7; k < 15; ++k) noise[k] = 0.6;
  Benchmark b{generate_synthetic_sem(g, w, noise, n, seed, meta), {}};
  b.truth = finalize(g);
  return b;
}

/// X drives both T* and Y; Y = 2 * level(T*) - 4 X + noise, so the raw T/Y
/// correlation is negative while the causal effect per level is +2.
inline FactorTable sign_flip_table(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal;
  FactorTable t;
  t.values.resize(static_cast<Eigen::Index>(n), 3);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = normal(rng);
    t.values(static_cast<Eigen::Index>(i), 0) = x;
    t.values(static_cast<Eigen::Index>(i), 1) = x + 0.5 * normal(rng);
  }
  const auto lv = quantile_levels(std::span<const double>(t.values.col(1).data(), n), 4);
  for (std::size_t i = 0; i < n; ++i)
    t.values(static_cast<Eigen::Index>(i), 2) = 2.0 * lv.levels[i] - 4.0 * t.values(static_cast<Eigen::Index>(i), 0) + normal(rng);
  t.meta = {{"X", Dimension::Citizens, ""}, {"T", Dimension::Locations, ""}, {"Y", Dimension::Mobility, ""}};
  for (std::size_t i = 0; i < n; ++i) t.region_ids.push_back("r" + std::to_string(i));
  return t;
}

}  // namespace fixture
