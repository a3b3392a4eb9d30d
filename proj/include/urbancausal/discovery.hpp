#pragma once

// Actor-critic search over DAGs: each episode samples a batch of adjacency
// matrices from the policy, rewards them with -BIC - lambda * h(U), and takes
// one clipped policy-gradient step against a moving-average baseline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "urbancausal/bic.hpp"
#include "urbancausal/error.hpp"
#include "urbancausal/graph.hpp"
#include "urbancausal/policy.hpp"
#include "urbancausal/rng.hpp"
#include "urbancausal/table.hpp"

namespace urbancausal {

struct TrainConfig {
  int episodes = 2000;
  int batch_size = 64;
  double learning_rate = 3e-4;
  std::optional<double> lambda_acyc;  // default 10 * n
  int minibatch_rows = 128;
  int hidden_width = 16;
  double baseline_decay = 0.99;
  double grad_clip = 5.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (episodes < 1 || batch_size < 1 || minibatch_rows < 1 || hidden_width < 1 || !(learning_rate > 0) ||
        !(grad_clip > 0) || !(baseline_decay >= 0 && baseline_decay < 1) || (lambda_acyc && !(*lambda_acyc > 0)))
      throw Error(ErrorKind::Validation, "invalid discovery configuration");
  }
};

struct EpisodeStats {
  int episode = 0;
  double mean_reward = 0.0;
  double best_score = 0.0;
};

struct DiscoveryResult {
  CausalGraph best_graph;
  double best_score = 0.0;
  std::vector<EpisodeStats> reward_history;
  int episodes_run = 0;
};

inline double default_lambda_acyc(std::size_t rows) { return 10.0 * static_cast<double>(rows); }

inline double episode_reward(const Adjacency& adj, const BicScorer& scorer, double lambda_acyc) {
  const double rho = acyclicity_penalty(adj);
  return -scorer.score(adj) - lambda_acyc * rho;
}

inline double episode_reward(const CausalGraph& graph, const FactorTable& table, double lambda_acyc) {
  return episode_reward(graph.adjacency, BicScorer(table), lambda_acyc);
}

/// Rows fed to the encoder: min(m, n) rows drawn without replacement, kept
/// in ascending row order.
inline Eigen::MatrixXd encoder_state(const FactorTable& table, int minibatch_rows, Rng& rng) {
  const std::size_t n = table.rows();
  const std::size_t m = std::min<std::size_t>(n, static_cast<std::size_t>(minibatch_rows));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (m < n) {
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(m);
    std::sort(idx.begin(), idx.end());
  }
  Eigen::MatrixXd state(static_cast<Eigen::Index>(m), table.values.cols());
  for (std::size_t r = 0; r < m; ++r) state.row(static_cast<Eigen::Index>(r)) = table.values.row(static_cast<Eigen::Index>(idx[r]));
  return state;
}

inline DiscoveryResult train_discovery(const FactorTable& table, const TrainConfig& config) {
  config.validate();
  const std::size_t d = table.cols();
  if (d > 64) throw Error(ErrorKind::TooManyFactors, "discovery supports at most 64 factors");
  const BicScorer scorer(table);
  const double lambda = config.lambda_acyc.value_or(default_lambda_acyc(table.rows()));

  Rng rng(config.seed);
  const Eigen::MatrixXd state = encoder_state(table, config.minibatch_rows, rng);
  PolicyParams params = init_policy(state.rows(), config.hidden_width, rng);

  // The tracker starts from the empty graph so the result never scores worse.
  Adjacency best = Adjacency::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  double best_reward = -scorer.score(best);
  bool baseline_ready = false;

  DiscoveryResult result;
  result.reward_history.reserve(static_cast<std::size_t>(config.episodes));
  std::vector<Adjacency> batch(static_cast<std::size_t>(config.batch_size));
  std::vector<double> rewards(batch.size()), advantages(batch.size());

  for (int ep = 0; ep < config.episodes; ++ep) {
    const Eigen::MatrixXd logits = decode_edge_logits(encode(state, params), params);
    double mean_reward = 0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      batch[b] = sample_graph(logits, rng).adjacency;
      const double rho = acyclicity_penalty(batch[b]);
      rewards[b] = -scorer.score(batch[b]) - lambda * rho;
      mean_reward += rewards[b];
      if (rho == 0.0 && rewards[b] > best_reward) {
        best_reward = rewards[b];
        best = batch[b];
      }
    }
    mean_reward /= static_cast<double>(batch.size());
    if (!baseline_ready) {
      params.baseline = mean_reward;
      baseline_ready = true;
    }
    for (std::size_t b = 0; b < batch.size(); ++b) advantages[b] = rewards[b] - params.baseline;

    PolicyParams grad = surrogate_gradient(state, params, batch, advantages);
    const double norm = std::sqrt(grad.squared_norm());
    const double scale = norm > config.grad_clip ? config.grad_clip / norm : 1.0;
    params.add_scaled(grad, -config.learning_rate * scale);
    params.baseline = config.baseline_decay * params.baseline + (1.0 - config.baseline_decay) * mean_reward;
    if (!params.all_finite()) throw Error(ErrorKind::NonFiniteLoss, "policy parameters diverged at episode " + std::to_string(ep));

    result.reward_history.push_back({ep, mean_reward, -best_reward});
  }

  if (!is_acyclic(best)) throw Error(ErrorKind::NoAcyclicSample, "no acyclic graph was sampled");
  result.best_graph = finalize(CausalGraph(best, table.names()));
  result.best_score = scorer.score(best);
  result.episodes_run = config.episodes;
  return result;
}

struct ExhaustiveResult {
  CausalGraph graph;
  double score = 0.0;
  std::size_t dags_enumerated = 0;
};

/// Brute-force BIC minimum over every DAG on d <= 5 factors. Scores within
/// 1e-9 (relative) count as ties and resolve to the lexicographically
/// smallest row-major adjacency bit string.
inline ExhaustiveResult exhaustive_search(const FactorTable& table) {
  const std::size_t d = table.cols();
  if (d > 5) throw Error(ErrorKind::TooManyFactors, "exhaustive search supports d <= 5, got " + std::to_string(d));
  const BicScorer scorer(table);
  const auto dd = static_cast<Eigen::Index>(d);

  std::vector<std::pair<Eigen::Index, Eigen::Index>> slots;  // off-diagonal cells, row-major
  for (Eigen::Index i = 0; i < dd; ++i)
    for (Eigen::Index j = 0; j < dd; ++j)
      if (i != j) slots.emplace_back(i, j);
  const std::size_t bits = slots.size();

  ExhaustiveResult out;
  Adjacency best = Adjacency::Zero(dd, dd);
  double best_score = std::numeric_limits<double>::infinity();
  Adjacency adj(dd, dd);
  // Counting upward with slot 0 as the most significant bit visits
  // adjacency bit strings in lexicographic order.
  for (std::uint64_t code = 0; code < (std::uint64_t{1} << bits); ++code) {
    adj.setZero();
    for (std::size_t s = 0; s < bits; ++s)
      if ((code >> (bits - 1 - s)) & 1U) adj(slots[s].first, slots[s].second) = 1;
    if (!is_acyclic(adj)) continue;
    ++out.dags_enumerated;
    const double s = scorer.score(adj);
    if (out.dags_enumerated == 1 || s < best_score - 1e-9 * std::max(1.0, std::fabs(best_score))) {
      best_score = s;
      best = adj;
    }
  }
  out.graph = finalize(CausalGraph(best, table.names()));
  out.score = best_score;
  return out;
}

}  // namespace urbancausal
