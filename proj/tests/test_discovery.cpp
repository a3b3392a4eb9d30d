#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "urbancausal/discovery.hpp"
#include "urbancausal/sem.hpp"

using namespace urbancausal;

namespace {

PolicyParams random_params(Eigen::Index m, Eigen::Index h, std::uint64_t seed) {
  Rng rng(seed);
  auto p = init_policy(m, h, rng);
  // larger decoder so the logits are not all near zero
  p.decoder *= 10.0;
  p.bias = 0.3;
  return p;
}

Eigen::MatrixXd random_state(Eigen::Index m, Eigen::Index d, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd s(m, d);
  for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = normal(rng);
  return s;
}

FactorTable chain_data(std::uint64_t seed) { return standardize(generate_synthetic_sem(sem_preset("chain3"), 1000, seed)); }

}  // namespace

TEST(Encoder, AttentionDisabledGivesProjection) {
  PolicyParams p;
  p.embed = Eigen::MatrixXd::Identity(2, 2);
  p.query = p.key = Eigen::MatrixXd::Identity(2, 2);
  p.value = p.feed_forward = p.decoder = Eigen::MatrixXd::Zero(2, 2);
  Eigen::MatrixXd state(2, 2);
  state << 1, 2, 3, 4;
  EXPECT_LT((encode(state, p) - state.transpose()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Encoder, PermutationEquivariant) {
  const auto p = random_params(6, 4, 1);
  const auto state = random_state(6, 5, 2);
  Eigen::VectorXi perm(5);
  perm << 3, 0, 4, 1, 2;
  Eigen::MatrixXd permuted(6, 5);
  for (int j = 0; j < 5; ++j) permuted.col(j) = state.col(perm(j));
  const auto e = encode(state, p);
  const auto ep = encode(permuted, p);
  for (int j = 0; j < 5; ++j) EXPECT_LT((ep.row(j) - e.row(perm(j))).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Encoder, ShapeMismatch) {
  const auto p = random_params(6, 4, 1);
  try {
    encode(random_state(5, 3, 1), p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
}

TEST(Decoder, ZeroParamsGiveHalfProbability) {
  auto p = random_params(4, 3, 3);
  p.decoder.setZero();
  p.bias = 0;
  const auto prob = edge_probabilities(decode_edge_logits(encode(random_state(4, 4, 1), p), p));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_EQ(prob(i, j), i == j ? 0.0 : 0.5);
}

TEST(Decoder, DiagonalMaskedAndDeterministic) {
  const auto p = random_params(4, 3, 5);
  const auto emb = encode(random_state(4, 6, 2), p);
  const auto a = decode_edge_logits(emb, p);
  const auto b = decode_edge_logits(emb, p);
  EXPECT_TRUE((a.array() == b.array()).all());
  for (int i = 0; i < 6; ++i) EXPECT_EQ(edge_probabilities(a)(i, i), 0.0);
  // bilinear form off the diagonal
  EXPECT_NEAR(a(1, 4), emb.row(1).dot(p.decoder * emb.row(4).transpose()) + p.bias, 1e-12);
}

TEST(SampleGraph, SaturatedLogits) {
  Eigen::MatrixXd low = Eigen::MatrixXd::Constant(4, 4, -1e6), high = Eigen::MatrixXd::Constant(4, 4, 1e6);
  low.diagonal().setConstant(-std::numeric_limits<double>::infinity());
  high.diagonal().setConstant(-std::numeric_limits<double>::infinity());
  const auto empty = sample_graph(low, std::uint64_t{1});
  EXPECT_EQ(empty.adjacency.sum(), 0);
  EXPECT_NEAR(empty.log_prob, 0.0, 1e-12);
  const auto full = sample_graph(high, std::uint64_t{1});
  EXPECT_EQ(full.adjacency.sum(), 12);
  EXPECT_EQ(full.adjacency.diagonal().sum(), 0);
}

TEST(SampleGraph, BinomialFrequencies) {
  Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(3, 3);
  logits.diagonal().setConstant(-std::numeric_limits<double>::infinity());
  Rng rng(11);
  Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(3, 3);
  for (int s = 0; s < 10000; ++s) counts += sample_graph(logits, rng).adjacency;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      if (i == j) {
        EXPECT_EQ(counts(i, j), 0);
        continue;
      }
      EXPECT_GE(counts(i, j), 4800);
      EXPECT_LE(counts(i, j), 5200);
    }
}

TEST(SampleGraph, LogProbMatchesProductOfBernoullis) {
  const auto p = random_params(5, 3, 7);
  const auto logits = decode_edge_logits(encode(random_state(5, 4, 7), p), p);
  const auto s = sample_graph(logits, std::uint64_t{9});
  double lp = 0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      if (i != j) {
        const double q = 1.0 / (1.0 + std::exp(-logits(i, j)));
        lp += std::log(s.adjacency(i, j) ? q : 1 - q);
      }
  EXPECT_NEAR(s.log_prob, lp, 1e-10);
}

TEST(SurrogateGradient, MatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Eigen::Index m = 7, d = 4, h = 3;
    const auto state = random_state(m, d, seed + 20);
    PolicyParams p = random_params(m, h, seed);
    const auto logits = decode_edge_logits(encode(state, p), p);
    Rng rng(seed + 40);
    std::vector<Adjacency> batch;
    std::vector<double> adv;
    std::normal_distribution<double> normal;
    for (int b = 0; b < 6; ++b) {
      batch.push_back(sample_graph(logits, rng).adjacency);
      adv.push_back(normal(rng));
    }
    const auto analytic = surrogate_gradient(state, p, batch, adv).flatten();
    auto f = [&](const std::vector<double>& flat) {
      PolicyParams q = p;
      q.assign(flat);
      return surrogate_loss(state, q, batch, adv);
    };
    const auto numeric = oracle::finite_difference(f, p.flatten(), 1e-6);
    EXPECT_LT(oracle::relative_error(analytic, numeric), 1e-4) << "seed " << seed;
  }
}

TEST(EpisodeReward, Examples) {
  const auto t = chain_data(1);
  const auto empty = CausalGraph::empty(t.names());
  EXPECT_EQ(episode_reward(empty, t, 100.0), 0.0);
  auto chain = empty;
  chain.set_edge(0, 1);
  chain.set_edge(1, 2);
  EXPECT_EQ(episode_reward(chain, t, 1e4), -bic_score(chain, t));

  const auto two = standardize(generate_synthetic_sem(sem_preset("chain3"), 500, 2));
  FactorTable ab = two;
  ab.values = two.values.leftCols(2).eval();
  ab.meta.resize(2);
  auto cyc = CausalGraph::empty(ab.names());
  cyc.set_edge(0, 1);
  cyc.set_edge(1, 0);
  const double lambda = default_lambda_acyc(ab.rows());
  EXPECT_EQ(lambda, 5000.0);
  EXPECT_NEAR(episode_reward(cyc, ab, lambda), -bic_score(cyc, ab) - lambda * (2 * std::cosh(1.0) - 2), 1e-6);
}

TEST(EncoderState, MinibatchRows) {
  const auto t = chain_data(3);
  Rng rng(1);
  EXPECT_EQ(encoder_state(t, 128, rng).rows(), 128);
  const auto small = subset_rows(t, std::vector<std::size_t>{0, 1, 2, 3, 4});
  const auto s = encoder_state(small, 128, rng);
  EXPECT_EQ(s, small.values);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.episodes = 0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.learning_rate = -1;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.lambda_acyc = 0.0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(TrainDiscovery, ChainMatchesExhaustiveOptimum) {
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto t = chain_data(100 + seed);
    const auto oracle_best = exhaustive_search(t);
    TrainConfig cfg;
    cfg.episodes = 300;
    cfg.batch_size = 32;
    cfg.seed = seed;
    const auto r = train_discovery(t, cfg);
    EXPECT_TRUE(r.best_graph.finalized);
    EXPECT_EQ(r.best_score, bic_score(r.best_graph, t));
    if (std::fabs(r.best_score - oracle_best.score) <= 1e-6 * std::fabs(oracle_best.score)) ++hits;
  }
  EXPECT_GE(hits, 4);
}

TEST(TrainDiscovery, IndependentColumnsGiveEmptyGraph) {
  const auto g = CausalGraph::empty({"a", "b", "c", "d"});
  const auto t = standardize(
      generate_synthetic_sem(g, Eigen::MatrixXd::Zero(4, 4), std::vector<double>{1, 1, 1, 1}, 1000, 5));
  const auto oracle_best = exhaustive_search(t);
  ASSERT_EQ(oracle_best.graph.edge_count(), 0u);
  TrainConfig cfg;
  cfg.episodes = 200;
  cfg.batch_size = 32;
  const auto r = train_discovery(t, cfg);
  EXPECT_EQ(r.best_graph.edge_count(), 0u);
  EXPECT_EQ(r.best_score, 0.0);
}

TEST(TrainDiscovery, DeterministicAndBoundedByEmpty) {
  const auto t = standardize(generate_synthetic_sem(sem_preset("diamond4"), 400, 6));
  TrainConfig cfg;
  cfg.episodes = 100;
  cfg.batch_size = 16;
  cfg.seed = 21;
  const auto a = train_discovery(t, cfg);
  const auto b = train_discovery(t, cfg);
  EXPECT_EQ(a.best_graph.adjacency, b.best_graph.adjacency);
  EXPECT_EQ(a.best_score, b.best_score);
  ASSERT_EQ(a.reward_history.size(), b.reward_history.size());
  for (std::size_t i = 0; i < a.reward_history.size(); ++i)
    EXPECT_EQ(a.reward_history[i].mean_reward, b.reward_history[i].mean_reward);
  EXPECT_EQ(a.episodes_run, 100);
  EXPECT_LE(a.best_score, 0.0);
  EXPECT_TRUE(is_acyclic(a.best_graph.adjacency));
  for (std::size_t i = 1; i < a.reward_history.size(); ++i)
    EXPECT_LE(a.reward_history[i].best_score, a.reward_history[i - 1].best_score);
}

TEST(TrainDiscovery, MeanRewardImproves) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto t = chain_data(200 + seed);
    TrainConfig cfg;
    cfg.episodes = 500;
    cfg.batch_size = 32;
    cfg.seed = seed;
    const auto r = train_discovery(t, cfg);
    const std::size_t tenth = r.reward_history.size() / 10;
    double first = 0, last = 0;
    for (std::size_t i = 0; i < tenth; ++i) {
      first += r.reward_history[i].mean_reward;
      last += r.reward_history[r.reward_history.size() - 1 - i].mean_reward;
    }
    EXPECT_GE(last, first) << "seed " << seed;
  }
}
