#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "urbancausal/effects.hpp"
#include "urbancausal/ordinal.hpp"
#include "urbancausal/sem.hpp"

using namespace urbancausal;

namespace {

CausalGraph graph_of(std::vector<std::string> names, std::initializer_list<std::pair<std::size_t, std::size_t>> edges) {
  auto g = CausalGraph::empty(std::move(names));
  for (auto [i, j] : edges) g.set_edge(i, j);
  return g;
}

TreatmentAssignment assignment(std::vector<int> levels, int k) {
  TreatmentAssignment t;
  t.levels = std::move(levels);
  t.k = k;
  return t;
}

Eigen::MatrixXd normal_matrix(Eigen::Index n, Eigen::Index c, Rng& rng) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd x(n, c);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
  return x;
}

FactorTable table_from(const Eigen::MatrixXd& values, std::vector<std::string> names) {
  FactorTable t;
  t.values = values;
  for (auto& n : names) t.meta.push_back({n, Dimension::Citizens, ""});
  for (Eigen::Index i = 0; i < values.rows(); ++i) t.region_ids.push_back(std::to_string(i));
  return t;
}

}  // namespace

TEST(Confounders, Examples) {
  using Set = std::set<std::string>;
  const auto triangle = graph_of({"X", "T", "Y"}, {{0, 1}, {0, 2}, {1, 2}});
  EXPECT_EQ(confounders_of(triangle, "T", "Y"), Set{"X"});
  const auto chain = graph_of({"A", "T", "Y"}, {{0, 1}, {1, 2}});
  EXPECT_EQ(confounders_of(chain, "T", "Y"), Set{});
  const auto indirect = graph_of({"A", "B", "T", "Y"}, {{0, 1}, {1, 2}, {0, 3}, {2, 3}});
  EXPECT_EQ(confounders_of(indirect, "T", "Y"), Set{"A"});
  try {
    confounders_of(chain, "A", "Y");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NotAnEdge);
  }
}

TEST(Confounders, MatchesPathEnumeration) {
  // C confounds T -> Y iff C reaches T, and C reaches Y by a directed path avoiding T
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto g = sem_preset("paper16-random", {.seed = seed}).graph;
    for (auto [t, y] : g.edges()) {
      const auto got = confounders_of(g, t, y);
      std::vector<std::size_t> want;
      for (std::size_t c = 0; c < g.size(); ++c) {
        if (c == t || c == y) continue;
        std::function<bool(std::size_t, std::size_t, bool)> reaches = [&](std::size_t from, std::size_t to, bool avoid_t) {
          if (from == to) return true;
          for (std::size_t nxt = 0; nxt < g.size(); ++nxt)
            if (g.has_edge(from, nxt) && !(avoid_t && nxt == t) && reaches(nxt, to, avoid_t)) return true;
          return false;
        };
        if (reaches(c, t, false) && reaches(c, y, true)) want.push_back(c);
      }
      EXPECT_EQ(got, want);
    }
  }
}

TEST(OrdinalGradient, MatchesFiniteDifferences) {
  Rng rng(3);
  const Eigen::MatrixXd x = normal_matrix(300, 3, rng);
  Eigen::Vector3d w(0.8, -0.5, 0.2);
  const auto levels = sample_ordinal_levels(x, w, Eigen::Vector3d(-1, 0, 1.2), rng);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd raw(6);
    for (Eigen::Index i = 0; i < 6; ++i) raw(i) = u(rng);
    const auto ev = ordinal::evaluate(x, levels.levels, 4, raw);
    auto f = [&](const std::vector<double>& v) {
      return ordinal::evaluate(x, levels.levels, 4, Eigen::Map<const Eigen::VectorXd>(v.data(), 6)).loglik;
    };
    const auto numeric = oracle::finite_difference(f, std::vector<double>(raw.data(), raw.data() + 6), 1e-6);
    EXPECT_LT(oracle::relative_error(std::vector<double>(ev.gradient.data(), ev.gradient.data() + 6), numeric), 1e-4);
  }
}

TEST(OrdinalRegression, NoConfoundersGivesEmpiricalLogits) {
  std::vector<int> lv;
  for (int l = 1; l <= 4; ++l) lv.insert(lv.end(), 500, l);
  const auto model = fit_ordinal_regression(Eigen::MatrixXd(2000, 0), assignment(lv, 4));
  ASSERT_EQ(model.theta.size(), 3);
  EXPECT_NEAR(model.theta(0), -std::log(3.0), 1e-6);
  EXPECT_NEAR(model.theta(1), 0.0, 1e-6);
  EXPECT_NEAR(model.theta(2), std::log(3.0), 1e-6);
  EXPECT_TRUE(model.converged);
  EXPECT_LE(model.final_loglik, 0.0);
}

TEST(OrdinalRegression, RecoversGeneratorParameters) {
  Rng rng(8);
  const Eigen::MatrixXd x = normal_matrix(20000, 2, rng);
  const Eigen::Vector2d w(1.5, 0.0);
  const Eigen::Vector3d theta(-1, 0, 1);
  const auto levels = sample_ordinal_levels(x, w, theta, rng);
  OrdinalFitOptions opt;
  opt.record_trace = true;
  const auto model = fit_ordinal_regression(x, levels, opt);
  EXPECT_TRUE(model.converged);
  EXPECT_NEAR(model.w(0), 1.5, 0.1);
  EXPECT_LT(std::fabs(model.w(1)), 0.05);
  for (int d = 0; d < 3; ++d) EXPECT_NEAR(model.theta(d), theta(d), 0.1);
  for (std::size_t i = 1; i < model.loglik_trace.size(); ++i) EXPECT_GE(model.loglik_trace[i], model.loglik_trace[i - 1]);
  for (int d = 1; d < 3; ++d) EXPECT_GT(model.theta(d), model.theta(d - 1));
}

TEST(OrdinalRegression, ThresholdsMonotoneUnderReparameterization) {
  Rng rng(1);
  std::uniform_real_distribution<double> u(-20, 20);
  for (int trial = 0; trial < 1000; ++trial) {
    Eigen::VectorXd raw(5);
    for (Eigen::Index i = 0; i < 5; ++i) raw(i) = u(rng);
    const auto theta = ordinal::thresholds_from_raw(raw, 1);
    for (Eigen::Index d = 1; d < theta.size(); ++d) EXPECT_GE(theta(d), theta(d - 1));
  }
}

TEST(OrdinalRegression, EmptyLevelIsDegenerate) {
  try {
    fit_ordinal_regression(Eigen::MatrixXd::Zero(4, 1), assignment({1, 1, 2, 4}, 4));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Degenerate);
  }
}

TEST(PropensityScore, Examples) {
  OrdinalModel m;
  m.w = Eigen::Vector2d(0, 0);
  const std::vector<double> x{4.0, -2.0};
  EXPECT_EQ(propensity_score(m, x), 0.0);
  m.w = Eigen::Vector2d(2, -1);
  EXPECT_EQ(propensity_score(m, std::vector<double>{1, 3}), -1.0);
  const std::vector<double> a{0.3, 1.7}, b{-2.0, 0.5}, sum{-1.7, 2.2}, zero{0, 0};
  EXPECT_NEAR(propensity_score(m, sum), propensity_score(m, a) + propensity_score(m, b) - propensity_score(m, zero), 1e-12);
  try {
    propensity_score(m, std::vector<double>{1.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DimensionMismatch);
  }
}

TEST(MatchPairs, HandExample) {
  const std::vector<double> scores{0.10, 0.12, 0.90};
  const auto pairs = match_pairs(scores, assignment({1, 2, 4}, 4));
  ASSERT_EQ(pairs.pairs.size(), 3u);
  EXPECT_EQ(pairs.pairs[0].j, 1u);
  EXPECT_NEAR(pairs.pairs[0].distance, 0.02, 1e-12);
  EXPECT_EQ(pairs.pairs[1].j, 0u);
  EXPECT_NEAR(pairs.pairs[1].distance, 0.02, 1e-12);
  EXPECT_EQ(pairs.pairs[2].j, 0u);
  EXPECT_NEAR(pairs.pairs[2].distance, 0.8 / 3.0, 1e-12);
}

TEST(MatchPairs, TwoRegionsAndTies) {
  const auto two = match_pairs(std::vector<double>{5.0, -7.0}, assignment({1, 2}, 2));
  EXPECT_EQ(two.pairs[0].j, 1u);
  EXPECT_EQ(two.pairs[1].j, 0u);
  const auto tied = match_pairs(std::vector<double>{1.0, 1.0, 1.0}, assignment({1, 1, 2}, 2));
  EXPECT_EQ(tied.pairs[2].j, 0u);
  try {
    match_pairs(std::vector<double>{1.0, 2.0}, assignment({3, 3}, 4));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SingleLevel);
  }
}

TEST(MatchPairs, ArgminAgainstBruteForce) {
  Rng rng(12);
  std::uniform_real_distribution<double> u(-3, 3);
  std::uniform_int_distribution<int> lv(1, 4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s(40);
    std::vector<int> l(40);
    for (auto& v : s) v = u(rng);
    for (auto& v : l) v = lv(rng);
    l[0] = 1;
    l[1] = 2;
    const auto pairs = match_pairs(s, assignment(l, 4));
    for (const auto& p : pairs.pairs) {
      EXPECT_NE(l[p.i], l[p.j]);
      EXPECT_GE(p.distance, 0.0);
      for (std::size_t j = 0; j < 40; ++j) {
        if (l[j] == l[p.i]) continue;
        const double dj = std::fabs(s[p.i] - s[j]) / std::abs(l[p.i] - l[j]);
        EXPECT_GE(dj, p.distance);
        EXPECT_EQ(dj, match_distance(s[j], s[p.i], l[j], l[p.i]));
      }
    }
  }
}

TEST(EstimateAte, OnePairAndFlatOutcome) {
  MatchedPairs one;
  one.pairs = {{0, 1, 0.0}};
  const auto r = estimate_ate(one, std::vector<double>{5, 3}, assignment({3, 1}, 4));
  EXPECT_EQ(r.ate, 1.0);
  EXPECT_EQ(r.n_pairs, 1u);

  const std::vector<double> scores{0.1, 0.4, 0.2, 0.9};
  const auto lv = assignment({1, 2, 3, 4}, 4);
  const auto flat = estimate_ate(match_pairs(scores, lv), std::vector<double>(4, 7.0), lv);
  EXPECT_EQ(flat.ate, 0.0);
  EXPECT_FALSE(flat.significant);
  EXPECT_EQ(flat.p_value, 1.0);
}

TEST(EstimateAte, PValueAgreesWithTTest) {
  // ITEs are known here, so compare with a t statistic computed by hand
  MatchedPairs pairs;
  for (std::size_t i = 0; i < 5; ++i) pairs.pairs.push_back({i, i + 5, 0.0});
  const std::vector<double> y{1, 2.5, 0.4, 3, 1.1, 0, 0, 0, 0, 0};
  const auto lv = assignment({2, 2, 2, 2, 2, 1, 1, 1, 1, 1}, 2);
  const auto r = estimate_ate(pairs, y, lv);
  EXPECT_NEAR(r.ate, 1.6, 1e-12);
  double ss = 0;
  for (int i = 0; i < 5; ++i) ss += (y[i] - 1.6) * (y[i] - 1.6);
  const double tstat = 1.6 / std::sqrt(ss / 4.0 / 5.0);
  // closed-form Student t CDF for 4 degrees of freedom
  const double q = tstat / std::sqrt(1 + tstat * tstat / 4);
  const double cdf = 0.5 + 0.375 * q * (1 - tstat * tstat / (12 * (1 + tstat * tstat / 4)));
  EXPECT_NEAR(r.p_value, 2 * (1 - cdf), 1e-10);
  EXPECT_TRUE(r.significant);
}

TEST(EstimateAte, IteAntisymmetryAndOutcomeAffineMaps) {
  Rng rng(4);
  const Eigen::MatrixXd x = normal_matrix(400, 2, rng);
  std::vector<double> y(400);
  std::normal_distribution<double> normal;
  for (auto& v : y) v = normal(rng);
  const auto lv = sample_ordinal_levels(x, Eigen::Vector2d(1, -1), Eigen::Vector3d(-1, 0, 1), rng);
  const Eigen::VectorXd s = x * Eigen::Vector2d(1, -1);
  auto pairs = match_pairs(std::span<const double>(s.data(), 400), lv);
  const auto base = estimate_ate(pairs, y, lv);

  auto swapped = pairs;
  for (auto& p : swapped.pairs) std::swap(p.i, p.j);
  EXPECT_NEAR(estimate_ate(swapped, y, lv).ate, base.ate, 1e-12);

  std::vector<double> shifted = y, scaled = y;
  for (auto& v : shifted) v += 17.5;
  for (auto& v : scaled) v *= -3.0;
  EXPECT_NEAR(estimate_ate(pairs, shifted, lv).ate, base.ate, 1e-9);
  EXPECT_NEAR(estimate_ate(pairs, scaled, lv).ate, -3.0 * base.ate, 1e-9);
}

TEST(EstimateAte, RecoversKnownEffectUnderConfounding) {
  Rng rng(21);
  const std::size_t n = 2000;
  std::normal_distribution<double> normal;
  Eigen::MatrixXd values(static_cast<Eigen::Index>(n), 3);
  for (std::size_t i = 0; i < n; ++i) {
    const double c = normal(rng);
    values(static_cast<Eigen::Index>(i), 0) = c;
    values(static_cast<Eigen::Index>(i), 1) = c + 0.7 * normal(rng);
  }
  const auto lv = quantile_levels(std::span<const double>(values.col(1).data(), n), 4);
  for (std::size_t i = 0; i < n; ++i)
    values(static_cast<Eigen::Index>(i), 2) = 2.0 * lv.levels[i] + 1.5 * values(static_cast<Eigen::Index>(i), 0) + normal(rng);
  const auto table = table_from(values, {"X", "T", "Y"});
  const auto r = estimate_confounded_edge(table, 1, 2, {0}, {});
  EXPECT_GE(r.ate, 1.7);
  EXPECT_LE(r.ate, 2.3);
  EXPECT_TRUE(r.significant);

  double top = 0, bottom = 0;
  for (std::size_t i = 0; i < n; ++i) (lv.levels[i] > 2 ? top : bottom) += values(static_cast<Eigen::Index>(i), 2);
  const double naive = (top - bottom) / (n / 2.0) / 2.0;
  EXPECT_GT(std::fabs(naive - 2.0), std::fabs(r.ate - 2.0));
}

TEST(BalanceReport, IndependentConfounderAlreadyBalanced) {
  Rng rng(5);
  const Eigen::MatrixXd x = normal_matrix(2000, 1, rng);
  std::vector<double> t(2000);
  std::normal_distribution<double> normal;
  for (auto& v : t) v = normal(rng);
  const auto lv = quantile_levels(t, 4);
  const Eigen::VectorXd s = x.col(0);
  const auto rep = balance_report(x, lv, match_pairs(std::span<const double>(s.data(), 2000), lv));
  EXPECT_LT(rep.entries[0].rel_diff_before, 0.1);
}

TEST(BalanceReport, MatchingReducesImbalanceAcrossSeeds) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed + 50);
    const Eigen::MatrixXd x = normal_matrix(2000, 2, rng);
    const Eigen::Vector2d w(3.0, -1.0);
    const Eigen::VectorXd latent = x * w;
    std::vector<double> tstar(2000);
    std::uniform_real_distribution<double> u(1e-12, 1.0 - 1e-12);
    for (std::size_t i = 0; i < 2000; ++i) {
      const double q = u(rng);
      tstar[i] = latent(static_cast<Eigen::Index>(i)) + std::log(q / (1 - q));
    }
    const auto lv = quantile_levels(tstar, 4);
    const auto model = fit_ordinal_regression(x, lv);
    const Eigen::VectorXd s = propensity_scores(model, x);
    const auto rep = balance_report(x, lv, match_pairs(std::span<const double>(s.data(), 2000), lv), {"a", "b"});
    for (const auto& e : rep.entries) {
      EXPECT_LT(e.rel_diff_after, e.rel_diff_before) << e.confounder << " seed " << seed;
      EXPECT_GE(e.rel_diff_after, 0.0);
    }
  }
}

TEST(BalanceReport, ClonePairsHaveZeroAfter) {
  Eigen::MatrixXd x(6, 1);
  x << 1.0, 1.0, -2.0, -2.0, 3.0, 3.0;
  const auto lv = assignment({1, 3, 2, 4, 3, 4}, 4);
  MatchedPairs pairs;
  pairs.pairs = {{0, 1, 0}, {1, 0, 0}, {2, 3, 0}, {3, 2, 0}, {4, 5, 0}, {5, 4, 0}};
  const auto rep = balance_report(x, lv, pairs);
  EXPECT_EQ(rep.entries[0].rel_diff_after, 0.0);
  EXPECT_GT(rep.entries[0].rel_diff_before, 0.0);
  EXPECT_THROW(balance_report(Eigen::MatrixXd::Ones(6, 1), lv, pairs), Error);
}

TEST(EstimateAllEffects, EdgelessGraph) {
  const auto t = generate_synthetic_sem(sem_preset("chain3"), 100, 1);
  EXPECT_TRUE(estimate_all_effects(CausalGraph::empty(t.names()), t).effects.empty());
}

TEST(EstimateAllEffects, ExactLineUnconfounded) {
  Eigen::MatrixXd v(50, 2);
  for (int i = 0; i < 50; ++i) {
    v(i, 0) = 0.1 * i - 1;
    v(i, 1) = 3 * v(i, 0);
  }
  const auto t = table_from(v, {"T", "Y"});
  const auto r = estimate_all_effects(graph_of({"T", "Y"}, {{0, 1}}), t);
  ASSERT_EQ(r.effects.size(), 1u);
  EXPECT_NEAR(r.effects[0].ate, 3.0, 1e-12);
  EXPECT_TRUE(r.effects[0].significant);
  EXPECT_FALSE(r.effects[0].confounded);
  EXPECT_TRUE(r.balance.empty());
}

TEST(EstimateAllEffects, SignFlippingConfounder) {
  Rng rng(30);
  const std::size_t n = 2000;
  std::normal_distribution<double> normal;
  Eigen::MatrixXd v(static_cast<Eigen::Index>(n), 3);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = normal(rng);
    v(static_cast<Eigen::Index>(i), 0) = x;
    v(static_cast<Eigen::Index>(i), 1) = x + 0.5 * normal(rng);
  }
  const auto lv = quantile_levels(std::span<const double>(v.col(1).data(), n), 4);
  for (std::size_t i = 0; i < n; ++i)
    v(static_cast<Eigen::Index>(i), 2) = 2.0 * lv.levels[i] - 4.0 * v(static_cast<Eigen::Index>(i), 0) + normal(rng);
  const auto t = table_from(v, {"X", "T", "Y"});
  ASSERT_LT(correlation_matrix(t).r(1, 2), 0.0);

  const auto g = graph_of({"X", "T", "Y"}, {{0, 1}, {0, 2}, {1, 2}});
  const auto r = estimate_all_effects(g, t);
  ASSERT_EQ(r.effects.size(), 3u);
  const auto& ty = r.effects[2];
  EXPECT_EQ(ty.treatment, "T");
  EXPECT_EQ(ty.outcome, "Y");
  EXPECT_TRUE(ty.confounded);
  EXPECT_EQ(ty.confounders, std::vector<std::string>{"X"});
  EXPECT_GT(ty.ate, 0.0);
  EXPECT_EQ(ty.n_pairs, n);
  EXPECT_EQ(r.balance.size(), 1u);
  const auto sig = significance_matrix(g, r.effects);
  EXPECT_EQ(sig(1, 2), 1);
  EXPECT_EQ(sig(0, 2), -1);
}

TEST(EstimateAllEffects, PerEdgeFailureIsRecorded) {
  Rng rng(2);
  Eigen::MatrixXd v = normal_matrix(20, 4, rng);
  v.col(0).setConstant(2.0);
  const auto t = table_from(v, {"X", "T", "Y", "W"});
  const auto r = estimate_all_effects(graph_of({"X", "T", "Y", "W"}, {{0, 1}, {0, 2}, {1, 2}, {3, 2}}), t);
  ASSERT_EQ(r.effects.size(), 4u);
  for (int e = 0; e < 3; ++e) EXPECT_NE(r.effects[e].error.find("ZeroVariance"), std::string::npos) << r.effects[e].error;
  EXPECT_EQ(r.effects[2].treatment, "T");
  EXPECT_TRUE(r.effects[3].error.empty());
  EXPECT_EQ(r.effects[3].n_pairs, 0u);
}
