#pragma once

// Deconfounded effect estimation on the edges of a causal graph: quantile
// treatment levels, ordinal-regression propensity scores, nearest-neighbour
// matching across levels and a one-sample t-test on the individual effects.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "urbancausal/error.hpp"
#include "urbancausal/graph.hpp"
#include "urbancausal/ordinal.hpp"
#include "urbancausal/stats.hpp"
#include "urbancausal/table.hpp"

namespace urbancausal {

/// Common ancestors of treatment and outcome, where the route to the outcome
/// must avoid the treatment node.
inline std::vector<std::size_t> confounders_of(const CausalGraph& g, std::size_t treatment, std::size_t outcome) {
  if (treatment >= g.size() || outcome >= g.size()) throw Error(ErrorKind::UnknownFactor, "factor index out of range");
  if (!g.has_edge(treatment, outcome))
    throw Error(ErrorKind::NotAnEdge, g.factor_names[treatment] + " -> " + g.factor_names[outcome]);
  const auto of_treatment = ancestor_mask(g, treatment);
  const auto of_outcome = ancestor_mask(g, outcome, treatment);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (i != treatment && i != outcome && of_treatment[i] && of_outcome[i]) out.push_back(i);
  return out;
}

inline std::set<std::string> confounders_of(const CausalGraph& g, std::string_view treatment, std::string_view outcome) {
  std::set<std::string> out;
  for (auto i : confounders_of(g, g.index_of(treatment), g.index_of(outcome))) out.insert(g.factor_names[i]);
  return out;
}

struct MatchedPair {
  std::size_t i = 0;
  std::size_t j = 0;
  double distance = 0.0;
};

struct MatchedPairs {
  std::vector<MatchedPair> pairs;
  std::vector<int> levels;
  std::vector<double> scores;
};

/// |e_i - e_j| / |T_i - T_j|; infinite when the levels coincide.
inline double match_distance(double score_i, double score_j, int level_i, int level_j) {
  if (level_i == level_j) return std::numeric_limits<double>::infinity();
  return std::fabs(score_i - score_j) / std::fabs(static_cast<double>(level_i - level_j));
}

/// Every region is matched, with replacement, to its closest region at a
/// different treatment level; ties go to the smaller index.
inline MatchedPairs match_pairs(std::span<const double> scores, const TreatmentAssignment& levels) {
  const std::size_t n = scores.size();
  if (levels.size() != n) throw Error(ErrorKind::LengthMismatch, "scores and levels differ in length");
  if (n < 2) throw Error(ErrorKind::TooFewRows, "matching needs at least 2 regions");
  const auto& t = levels.levels;
  if (std::all_of(t.begin(), t.end(), [&](int l) { return l == t.front(); }))
    throw Error(ErrorKind::SingleLevel, "all regions share one treatment level");

  MatchedPairs out;
  out.levels = t;
  out.scores.assign(scores.begin(), scores.end());
  out.pairs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = n;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (t[j] == t[i]) continue;
      const double dist = match_distance(scores[i], scores[j], t[i], t[j]);
      if (dist < best_d || best == n) {
        best_d = dist;
        best = j;
      }
    }
    out.pairs.push_back({i, best, best_d});
  }
  return out;
}

struct AteResult {
  std::string treatment;
  std::string outcome;
  double ate = 0.0;
  double p_value = 1.0;
  std::size_t n_pairs = 0;
  bool significant = false;
  bool confounded = false;
  std::vector<std::string> confounders;
  std::string error;  // non-empty when this edge failed
};

/// ITE = (Y_i - Y_j) / (T_i - T_j) per pair, ATE its mean, p-value from a
/// two-sided one-sample t-test with n_pairs - 1 degrees of freedom.
inline AteResult estimate_ate(const MatchedPairs& pairs, std::span<const double> outcome, const TreatmentAssignment& levels,
                              double alpha = 0.05) {
  if (outcome.size() != levels.size()) throw Error(ErrorKind::LengthMismatch, "outcome and levels differ in length");
  if (pairs.pairs.empty()) throw Error(ErrorKind::TooFewRows, "no matched pairs");
  const auto& t = levels.levels;
  std::vector<double> ite;
  ite.reserve(pairs.pairs.size());
  for (const auto& p : pairs.pairs)
    ite.push_back((outcome[p.i] - outcome[p.j]) / static_cast<double>(t[p.i] - t[p.j]));

  AteResult r;
  r.n_pairs = ite.size();
  r.ate = stats::mean(ite);
  double ss = 0;
  for (double v : ite) ss += (v - r.ate) * (v - r.ate);
  const double m = static_cast<double>(ite.size());
  const double var = ite.size() > 1 ? ss / (m - 1.0) : 0.0;
  if (!(var > 1e-24 * std::max(1.0, r.ate * r.ate))) {
    r.p_value = r.ate != 0.0 ? 0.0 : 1.0;
  } else {
    r.p_value = stats::two_sided_t_p_value(r.ate / std::sqrt(var / m), m - 1.0);
  }
  r.significant = r.p_value < alpha;
  return r;
}

struct BalanceEntry {
  std::string confounder;
  double rel_diff_before = 0.0;
  double rel_diff_after = 0.0;
};

struct BalanceReport {
  std::string treatment;
  std::string outcome;
  std::vector<BalanceEntry> entries;
};

/// Standardized mean differences per confounder. Before matching: regions
/// above level K/2 against the rest. After matching: the higher-level member
/// of each pair against the lower-level member. Both use the population
/// standard deviation over all regions.
inline BalanceReport balance_report(const Eigen::MatrixXd& x, const TreatmentAssignment& levels, const MatchedPairs& pairs,
                                    const std::vector<std::string>& names = {}) {
  if (x.cols() < 1) throw Error(ErrorKind::Validation, "balance needs at least one confounder");
  if (static_cast<std::size_t>(x.rows()) != levels.size()) throw Error(ErrorKind::LengthMismatch, "rows and levels differ");
  const int half = levels.k / 2;
  BalanceReport rep;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const auto col = x.col(c);
    const double mean_all = col.mean();
    const double sd = std::sqrt((col.array() - mean_all).square().mean());
    const std::string name = static_cast<std::size_t>(c) < names.size() ? names[static_cast<std::size_t>(c)] : std::to_string(c);
    if (!(sd > 0)) throw Error(ErrorKind::ZeroVariance, name);

    double top = 0, bottom = 0;
    std::size_t n_top = 0, n_bottom = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      if (levels.levels[static_cast<std::size_t>(i)] > half) {
        top += col(i);
        ++n_top;
      } else {
        bottom += col(i);
        ++n_bottom;
      }
    }
    BalanceEntry e;
    e.confounder = name;
    if (n_top > 0 && n_bottom > 0)
      e.rel_diff_before = std::fabs(top / static_cast<double>(n_top) - bottom / static_cast<double>(n_bottom)) / sd;

    double higher = 0, lower = 0;
    for (const auto& p : pairs.pairs) {
      const bool i_high = levels.levels[p.i] > levels.levels[p.j];
      higher += col(static_cast<Eigen::Index>(i_high ? p.i : p.j));
      lower += col(static_cast<Eigen::Index>(i_high ? p.j : p.i));
    }
    if (!pairs.pairs.empty())
      e.rel_diff_after = std::fabs(higher - lower) / static_cast<double>(pairs.pairs.size()) / sd;
    rep.entries.push_back(e);
  }
  return rep;
}

struct EffectsOptions {
  int k = 4;
  double alpha = 0.05;
};

struct EffectsResult {
  std::vector<AteResult> effects;
  std::vector<BalanceReport> balance;
};

/// Matched-pair pipeline for one edge with at least one confounder.
inline AteResult estimate_confounded_edge(const FactorTable& table, std::size_t treatment, std::size_t outcome,
                                          const std::vector<std::size_t>& confounders, const EffectsOptions& opt,
                                          BalanceReport* balance = nullptr) {
  const auto n = static_cast<Eigen::Index>(table.rows());
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(confounders.size()));
  std::vector<std::string> names;
  for (std::size_t c = 0; c < confounders.size(); ++c) {
    auto col = table.values.col(static_cast<Eigen::Index>(confounders[c]));
    const double m = col.mean();
    const double sd = std::sqrt((col.array() - m).square().mean());
    if (!(sd > 0)) throw Error(ErrorKind::ZeroVariance, table.meta[confounders[c]].name);
    x.col(static_cast<Eigen::Index>(c)) = (col.array() - m) / sd;
    names.push_back(table.meta[confounders[c]].name);
  }
  const auto t_col = table.column(treatment);
  const auto y_col = table.column(outcome);
  const TreatmentAssignment levels = quantile_levels(t_col, opt.k, treatment);
  const OrdinalModel model = fit_ordinal_regression(x, levels);
  const Eigen::VectorXd scores = propensity_scores(model, x);
  const MatchedPairs pairs = match_pairs(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())), levels);
  AteResult r = estimate_ate(pairs, y_col, levels, opt.alpha);
  r.confounded = true;
  r.confounders = names;
  if (balance) {
    *balance = balance_report(x, levels, pairs, names);
    balance->treatment = table.meta[treatment].name;
    balance->outcome = table.meta[outcome].name;
  }
  return r;
}

/// Unconfounded edge: OLS slope of outcome on the raw treatment column,
/// tested through the Pearson correlation.
inline AteResult estimate_unconfounded_edge(const FactorTable& table, std::size_t treatment, std::size_t outcome,
                                            const EffectsOptions& opt) {
  const auto t = table.values.col(static_cast<Eigen::Index>(treatment));
  const auto y = table.values.col(static_cast<Eigen::Index>(outcome));
  const Eigen::VectorXd tc = t.array() - t.mean();
  const Eigen::VectorXd yc = y.array() - y.mean();
  const double stt = tc.squaredNorm(), syy = yc.squaredNorm();
  if (!(stt > 0)) throw Error(ErrorKind::ZeroVariance, table.meta[treatment].name);
  AteResult r;
  r.ate = tc.dot(yc) / stt;
  const double corr = syy > 0 ? std::clamp(tc.dot(yc) / std::sqrt(stt * syy), -1.0, 1.0) : 0.0;
  r.p_value = syy > 0 ? stats::pearson_p_value(corr, table.rows()) : 1.0;
  r.significant = r.p_value < opt.alpha;
  return r;
}

/// One AteResult per edge (row-major edge order) plus a balance report per
/// confounded edge. Per-edge failures are recorded in AteResult::error.
/// `edge_filter`, when set, restricts which edges are estimated.
inline EffectsResult estimate_all_effects(const CausalGraph& graph, const FactorTable& table, const EffectsOptions& opt = {},
                                          const std::function<bool(std::size_t, std::size_t)>& edge_filter = {}) {
  if (graph.size() != table.cols()) throw Error(ErrorKind::DimensionMismatch, "graph and table disagree on factor count");
  if (!is_acyclic(graph.adjacency)) throw Error(ErrorKind::CyclicGraph, "effects need a DAG");
  EffectsResult out;
  for (auto [t, y] : graph.edges()) {
    if (edge_filter && !edge_filter(t, y)) continue;
    AteResult r;
    try {
      const auto conf = confounders_of(graph, t, y);
      if (conf.empty()) {
        r = estimate_unconfounded_edge(table, t, y, opt);
      } else {
        BalanceReport bal;
        r = estimate_confounded_edge(table, t, y, conf, opt, &bal);
        out.balance.push_back(std::move(bal));
      }
    } catch (const Error& e) {
      r = AteResult{};
      r.error = e.what();
    }
    r.treatment = graph.factor_names[t];
    r.outcome = graph.factor_names[y];
    out.effects.push_back(std::move(r));
  }
  return out;
}

/// d x d matrix with +1 / -1 for significant positive / negative effects, 0 otherwise.
inline Eigen::MatrixXi significance_matrix(const CausalGraph& graph, const std::vector<AteResult>& effects) {
  const auto d = static_cast<Eigen::Index>(graph.size());
  Eigen::MatrixXi m = Eigen::MatrixXi::Zero(d, d);
  for (const auto& e : effects) {
    if (!e.error.empty() || !e.significant || e.ate == 0.0) continue;
    m(static_cast<Eigen::Index>(graph.index_of(e.treatment)), static_cast<Eigen::Index>(graph.index_of(e.outcome))) =
        e.ate > 0 ? 1 : -1;
  }
  return m;
}

}  // namespace urbancausal
