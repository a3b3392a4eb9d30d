#pragma once

// Input selection for mobility prediction and the small-training-size
// experiment grid.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "urbancausal/effects.hpp"
#include "urbancausal/error.hpp"
#include "urbancausal/graph.hpp"
#include "urbancausal/linear.hpp"
#include "urbancausal/mlp.hpp"
#include "urbancausal/rng.hpp"
#include "urbancausal/table.hpp"

namespace urbancausal {

enum class StrategyKind { AllL1, CorrelationP, CausalAncestor, CausalSignificance };

constexpr std::string_view to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::AllL1: return "AllL1";
    case StrategyKind::CorrelationP: return "CorrelationP";
    case StrategyKind::CausalAncestor: return "CausalAncestor";
    case StrategyKind::CausalSignificance: return "CausalSignificance";
  }
  return "";
}

inline StrategyKind parse_strategy(std::string_view s) {
  for (auto k : {StrategyKind::AllL1, StrategyKind::CorrelationP, StrategyKind::CausalAncestor, StrategyKind::CausalSignificance})
    if (s == to_string(k)) return k;
  throw Error(ErrorKind::Validation, "unknown strategy '" + std::string(s) + "'");
}

enum class PredictorKind { Linear, Mlp };

constexpr std::string_view to_string(PredictorKind k) { return k == PredictorKind::Linear ? "linear" : "mlp"; }

inline PredictorKind parse_predictor(std::string_view s) {
  if (s == "linear") return PredictorKind::Linear;
  if (s == "mlp") return PredictorKind::Mlp;
  throw Error(ErrorKind::Validation, "unknown predictor '" + std::string(s) + "'");
}

struct SelectionStrategy {
  StrategyKind kind = StrategyKind::CausalSignificance;
  double alpha = 0.05;
  double l1_lambda = 0.0;

  void validate() const {
    if (!(alpha > 0 && alpha < 1)) throw Error(ErrorKind::Validation, "alpha must lie in (0, 1)");
    if (l1_lambda < 0) throw Error(ErrorKind::Validation, "l1_lambda must be non-negative");
  }
};

struct Selection {
  std::vector<std::size_t> features;  // ascending column indices
  bool empty() const { return features.empty(); }
};

/// Keeps only the edges whose estimated effect has p < alpha.
inline CausalGraph prune_insignificant(const CausalGraph& graph, const std::vector<AteResult>& effects, double alpha) {
  CausalGraph pruned = CausalGraph::empty(graph.factor_names);
  pruned.finalized = graph.finalized;
  for (const auto& e : effects) {
    if (!e.error.empty() || !(e.p_value < alpha)) continue;
    const auto t = graph.index_of(e.treatment);
    const auto y = graph.index_of(e.outcome);
    if (graph.has_edge(t, y)) pruned.set_edge(t, y);
  }
  return pruned;
}

/// `correlation_p` is the p-value matrix of `table`; computed on demand when null.
inline Selection select_features(const SelectionStrategy& strategy, const FactorTable& table, const CausalGraph& graph,
                                 const std::vector<AteResult>& effects, std::size_t outcome,
                                 const Eigen::MatrixXd* correlation_p = nullptr) {
  strategy.validate();
  if (outcome >= table.cols()) throw Error(ErrorKind::UnknownFactor, "outcome index out of range");
  if (table.meta[outcome].dimension != Dimension::Mobility)
    throw Error(ErrorKind::Validation, "outcome '" + table.meta[outcome].name + "' is not a Mobility factor");
  if (graph.size() != table.cols()) throw Error(ErrorKind::DimensionMismatch, "graph and table disagree on factor count");
  Selection s;
  switch (strategy.kind) {
    case StrategyKind::AllL1:
      for (std::size_t j = 0; j < table.cols(); ++j)
        if (table.meta[j].dimension != Dimension::Mobility) s.features.push_back(j);
      break;
    case StrategyKind::CorrelationP: {
      Eigen::MatrixXd p;
      if (!correlation_p) p = correlation_matrix(table).p;
      const Eigen::MatrixXd& pm = correlation_p ? *correlation_p : p;
      for (std::size_t j = 0; j < table.cols(); ++j)
        if (j != outcome && pm(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(outcome)) < strategy.alpha)
          s.features.push_back(j);
      break;
    }
    case StrategyKind::CausalAncestor:
      s.features = ancestor_indices(graph, outcome);
      break;
    case StrategyKind::CausalSignificance:
      s.features = ancestor_indices(prune_insignificant(graph, effects, strategy.alpha), outcome);
      break;
  }
  return s;
}

struct Metrics {
  double rmse = 0.0;
  double mae = 0.0;
};

inline Metrics evaluate(std::span<const double> predictions, std::span<const double> targets) {
  if (predictions.size() != targets.size()) throw Error(ErrorKind::LengthMismatch, "predictions and targets differ in length");
  if (predictions.empty()) throw Error(ErrorKind::TooFewRows, "nothing to evaluate");
  double se = 0, ae = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double e = predictions[i] - targets[i];
    se += e * e;
    ae += std::fabs(e);
  }
  const double m = static_cast<double>(predictions.size());
  return {std::sqrt(se / m), ae / m};
}

inline Metrics evaluate(const Eigen::VectorXd& predictions, const Eigen::VectorXd& targets) {
  return evaluate(std::span<const double>(predictions.data(), static_cast<std::size_t>(predictions.size())),
                  std::span<const double>(targets.data(), static_cast<std::size_t>(targets.size())));
}

/// Thirteen geometrically spaced lasso strengths from 1e-4 to 1.
inline std::vector<double> default_l1_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 12; ++i) g.push_back(std::pow(10.0, -4.0 + i / 3.0));
  return g;
}

struct ExperimentConfig {
  std::vector<std::string> outcomes;
  std::vector<SelectionStrategy> strategies;
  std::vector<PredictorKind> predictors{PredictorKind::Linear};
  std::vector<double> fractions{0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
  int repeats = 5;
  std::uint64_t seed = 0;
  EffectsOptions effects;
  MlpConfig mlp;
  std::vector<double> l1_grid = default_l1_grid();
  double validation_fraction = 0.25;  // share of training rows used to pick the lasso strength
  /// Receives the exact rows that selection and effect estimation read.
  std::function<void(const FactorTable&)> selection_probe;

  void validate() const {
    if (repeats < 1) throw Error(ErrorKind::Validation, "repeats must be at least 1");
    for (double f : fractions)
      if (!(f > 0 && f < 1)) throw Error(ErrorKind::Validation, "fractions must lie in (0, 1)");
    if (l1_grid.empty()) throw Error(ErrorKind::Validation, "empty lasso grid");
    if (!(validation_fraction > 0 && validation_fraction < 1)) throw Error(ErrorKind::Validation, "validation_fraction must lie in (0, 1)");
    for (const auto& s : strategies) s.validate();
    mlp.validate();
  }
};

struct ReportRow {
  std::string outcome;
  StrategyKind strategy = StrategyKind::AllL1;
  PredictorKind predictor = PredictorKind::Linear;
  double fraction = 0.0;
  int repeat = 0;
  double rmse = std::numeric_limits<double>::quiet_NaN();
  double mae = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> selected_features;
  bool empty_selection = false;
  double l1_lambda = 0.0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::string error;
};

struct ExperimentReport {
  std::vector<ReportRow> rows;
};

struct TrainTestSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Uniform random split; ceil(fraction * n) training rows, both sides sorted.
inline TrainTestSplit random_split(std::size_t n, double fraction, std::uint64_t seed) {
  const auto n_train = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  if (n_train < 1 || n_train >= n) throw Error(ErrorKind::TooFewRows, "split leaves an empty side");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  TrainTestSplit s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

namespace detail {

struct Scaler {
  Eigen::RowVectorXd mean, sd;

  static Scaler fit(const Eigen::MatrixXd& x) {
    Scaler s;
    s.mean = x.colwise().mean();
    s.sd = ((x.rowwise() - s.mean).array().square().colwise().mean()).sqrt().matrix();
    for (Eigen::Index j = 0; j < s.sd.size(); ++j)
      if (!(s.sd(j) > 0)) s.sd(j) = 1.0;
    return s;
  }
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
    return ((x.rowwise() - mean).array().rowwise() / sd.array()).matrix();
  }
};

inline Eigen::MatrixXd gather(const Eigen::MatrixXd& values, std::span<const std::size_t> rows,
                              std::span<const std::size_t> cols) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols.size(); ++c)
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          values(static_cast<Eigen::Index>(rows[r]), static_cast<Eigen::Index>(cols[c]));
  return out;
}

inline Eigen::VectorXd gather(const Eigen::MatrixXd& values, std::span<const std::size_t> rows, std::size_t col) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    out(static_cast<Eigen::Index>(r)) = values(static_cast<Eigen::Index>(rows[r]), static_cast<Eigen::Index>(col));
  return out;
}

/// Lasso strength with the lowest validation RMSE (ties to the larger value).
inline double choose_l1_lambda(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const std::vector<double>& grid,
                               double validation_fraction, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (n < 4) return grid.front();
  const auto split = random_split(n, 1.0 - validation_fraction, seed);
  std::vector<std::size_t> all(static_cast<std::size_t>(x.cols()));
  std::iota(all.begin(), all.end(), std::size_t{0});
  const Eigen::MatrixXd xf = gather(x, split.train, all), xv = gather(x, split.test, all);
  const Eigen::VectorXd yf = gather(Eigen::MatrixXd(y), split.train, std::size_t{0}),
                        yv = gather(Eigen::MatrixXd(y), split.test, std::size_t{0});
  double best = grid.front(), best_rmse = std::numeric_limits<double>::infinity();
  for (double lambda : grid) {
    const double r = evaluate(fit_linear(xf, yf, lambda).predict(xv), yv).rmse;
    if (r <= best_rmse) {
      best_rmse = r;
      best = lambda;
    }
  }
  return best;
}

struct FittedPredictor {
  Eigen::VectorXd test_predictions;
  double l1_lambda = 0.0;
};

inline FittedPredictor fit_and_predict(PredictorKind predictor, const SelectionStrategy& strategy, const Eigen::MatrixXd& x_train,
                                       const Eigen::VectorXd& y_train, const Eigen::MatrixXd& x_test,
                                       const ExperimentConfig& cfg, std::uint64_t seed) {
  FittedPredictor out;
  const Scaler scaler = Scaler::fit(x_train);
  Eigen::MatrixXd xtr = scaler.apply(x_train), xte = scaler.apply(x_test);

  double lambda = strategy.l1_lambda;
  if (strategy.kind == StrategyKind::AllL1 && xtr.cols() > 0)
    lambda = choose_l1_lambda(xtr, y_train, cfg.l1_grid, cfg.validation_fraction, derive_seed(seed, {1}));
  out.l1_lambda = lambda;

  if (predictor == PredictorKind::Linear || xtr.cols() == 0) {
    out.test_predictions = fit_linear(xtr, y_train, lambda).predict(xte);
    return out;
  }
  if (lambda > 0) {  // MLP inputs restricted to the lasso support
    const LinearModel lasso = fit_linear(xtr, y_train, lambda);
    std::vector<Eigen::Index> keep;
    for (Eigen::Index j = 0; j < lasso.weights.size(); ++j)
      if (lasso.weights(j) != 0.0) keep.push_back(j);
    if (keep.empty()) {
      out.test_predictions = Eigen::VectorXd::Constant(xte.rows(), y_train.mean());
      return out;
    }
    Eigen::MatrixXd a(xtr.rows(), static_cast<Eigen::Index>(keep.size())), b(xte.rows(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t c = 0; c < keep.size(); ++c) {
      a.col(static_cast<Eigen::Index>(c)) = xtr.col(keep[c]);
      b.col(static_cast<Eigen::Index>(c)) = xte.col(keep[c]);
    }
    xtr = std::move(a);
    xte = std::move(b);
  }
  const double y_mean = y_train.mean();
  double y_sd = std::sqrt((y_train.array() - y_mean).square().mean());
  if (!(y_sd > 0)) y_sd = 1.0;
  MlpConfig mc = cfg.mlp;
  mc.seed = derive_seed(seed, {2});
  const auto fit = fit_mlp(xtr, (y_train.array() - y_mean) / y_sd, mc);
  out.test_predictions = (fit.model.predict(xte).array() * y_sd + y_mean).matrix();
  return out;
}

/// Effects for the edges that can lie on a path into `outcome`.
inline std::vector<AteResult> effects_toward(const CausalGraph& graph, const FactorTable& train, std::size_t outcome,
                                             const EffectsOptions& opt) {
  auto relevant = ancestor_mask(graph, outcome);
  relevant[outcome] = true;
  return estimate_all_effects(graph, train, opt, [&](std::size_t, std::size_t y) { return relevant[y]; }).effects;
}

}  // namespace detail

/// Runs every (outcome, strategy, predictor, fraction, repeat) cell. Splits
/// are shared across outcomes, strategies and predictors for a given
/// (fraction, repeat); correlation p-values and causal effects are
/// recomputed on the training rows of each split.
inline ExperimentReport run_experiment(const FactorTable& table, const CausalGraph& graph, const ExperimentConfig& cfg) {
  cfg.validate();
  if (graph.size() != table.cols()) throw Error(ErrorKind::DimensionMismatch, "graph and table disagree on factor count");
  std::vector<std::size_t> outcomes;
  for (const auto& name : cfg.outcomes) outcomes.push_back(table.index_of(name));

  ExperimentReport report;
  std::vector<std::size_t> all_cols(table.cols());
  std::iota(all_cols.begin(), all_cols.end(), std::size_t{0});
  for (std::size_t fi = 0; fi < cfg.fractions.size(); ++fi) {
    for (int rep = 0; rep < cfg.repeats; ++rep) {
      const double fraction = cfg.fractions[fi];
      const std::uint64_t split_seed = derive_seed(cfg.seed, {fi, static_cast<std::uint64_t>(rep)});
      std::string split_error;
      TrainTestSplit split;
      FactorTable train;
      Eigen::MatrixXd corr_p;
      try {
        split = random_split(table.rows(), fraction, split_seed);
        train = subset_rows(table, split.train);
        if (cfg.selection_probe) cfg.selection_probe(train);
        corr_p = correlation_matrix(train).p;
      } catch (const Error& e) {
        split_error = e.what();
      }

      for (std::size_t oi = 0; oi < outcomes.size(); ++oi) {
        const std::size_t outcome = outcomes[oi];
        std::vector<AteResult> effects;
        std::string outcome_error = split_error;
        if (outcome_error.empty()) {
          try {
            effects = detail::effects_toward(graph, train, outcome, cfg.effects);
          } catch (const Error& e) {
            outcome_error = e.what();
          }
        }
        for (std::size_t si = 0; si < cfg.strategies.size(); ++si) {
          for (std::size_t pi = 0; pi < cfg.predictors.size(); ++pi) {
            ReportRow row;
            row.outcome = table.meta[outcome].name;
            row.strategy = cfg.strategies[si].kind;
            row.predictor = cfg.predictors[pi];
            row.fraction = fraction;
            row.repeat = rep;
            row.n_train = split.train.size();
            row.n_test = split.test.size();
            row.error = outcome_error;
            if (row.error.empty()) {
              try {
                const Selection sel = select_features(cfg.strategies[si], train, graph, effects, outcome, &corr_p);
                for (auto j : sel.features) row.selected_features.push_back(table.meta[j].name);
                row.empty_selection = sel.empty();
                const auto fitted = detail::fit_and_predict(
                    cfg.predictors[pi], cfg.strategies[si], detail::gather(table.values, split.train, sel.features),
                    detail::gather(table.values, split.train, outcome), detail::gather(table.values, split.test, sel.features),
                    cfg, derive_seed(split_seed, {oi, si, pi}));
                const Metrics m = evaluate(fitted.test_predictions, detail::gather(table.values, split.test, outcome));
                row.rmse = m.rmse;
                row.mae = m.mae;
                row.l1_lambda = fitted.l1_lambda;
              } catch (const Error& e) {
                row.error = e.what();
              }
            }
            report.rows.push_back(std::move(row));
          }
        }
      }
    }
  }
  return report;
}

struct SummaryRow {
  std::string outcome;
  StrategyKind strategy = StrategyKind::AllL1;
  PredictorKind predictor = PredictorKind::Linear;
  std::optional<double> fraction;  // nullopt: pooled over all fractions
  std::size_t count = 0;
  double rmse_mean = 0, rmse_std = 0, mae_mean = 0, mae_std = 0;
};

/// Means and sample standard deviations per (outcome, strategy, predictor),
/// pooled and per fraction. Failed cells are skipped.
inline std::vector<SummaryRow> summarize(const ExperimentReport& report) {
  using Key = std::tuple<std::string, int, int, double, bool>;
  std::map<Key, std::vector<std::pair<double, double>>> groups;
  std::vector<Key> order;
  for (const auto& r : report.rows) {
    if (!r.error.empty()) continue;
    for (bool pooled : {true, false}) {
      Key k{r.outcome, static_cast<int>(r.strategy), static_cast<int>(r.predictor), pooled ? -1.0 : r.fraction, pooled};
      auto [it, inserted] = groups.try_emplace(k);
      if (inserted) order.push_back(k);
      it->second.emplace_back(r.rmse, r.mae);
    }
  }
  std::vector<SummaryRow> out;
  for (const auto& k : order) {
    const auto& v = groups[k];
    SummaryRow s;
    s.outcome = std::get<0>(k);
    s.strategy = static_cast<StrategyKind>(std::get<1>(k));
    s.predictor = static_cast<PredictorKind>(std::get<2>(k));
    if (!std::get<4>(k)) s.fraction = std::get<3>(k);
    s.count = v.size();
    for (auto [rm, ma] : v) {
      s.rmse_mean += rm;
      s.mae_mean += ma;
    }
    const double n = static_cast<double>(v.size());
    s.rmse_mean /= n;
    s.mae_mean /= n;
    if (v.size() > 1) {
      for (auto [rm, ma] : v) {
        s.rmse_std += (rm - s.rmse_mean) * (rm - s.rmse_mean);
        s.mae_std += (ma - s.mae_mean) * (ma - s.mae_mean);
      }
      s.rmse_std = std::sqrt(s.rmse_std / (n - 1));
      s.mae_std = std::sqrt(s.mae_std / (n - 1));
    }
    out.push_back(s);
  }
  std::stable_sort(out.begin(), out.end(), [](const SummaryRow& a, const SummaryRow& b) {
    return std::tie(a.outcome, a.strategy, a.predictor) < std::tie(b.outcome, b.strategy, b.predictor);
  });
  return out;
}

struct CurvePoint {
  int epoch = 0;
  double dev_rmse = 0.0;
  double test_rmse = 0.0;
};

/// Overfitting curve on a 20/20/60 train/dev/test split: features selected
/// on the training rows, MLP dev and test RMSE recorded after every epoch.
inline std::vector<CurvePoint> epoch_curve(const FactorTable& table, const CausalGraph& graph, const std::string& outcome_name,
                                           const SelectionStrategy& strategy, const MlpConfig& mlp, const EffectsOptions& eff,
                                           std::uint64_t seed) {
  const std::size_t outcome = table.index_of(outcome_name);
  const std::size_t n = table.rows();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {0xC0FFEE}));
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(n) - 1e-9));
  const auto n_dev = static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(n) - 1e-9));
  if (n_train + n_dev >= n) throw Error(ErrorKind::TooFewRows, "table too small for a 20/20/60 split");
  std::vector<std::size_t> train(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> dev(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                               idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev));
  std::vector<std::size_t> test(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev), idx.end());
  for (auto* v : {&train, &dev, &test}) std::sort(v->begin(), v->end());

  const FactorTable train_view = subset_rows(table, train);
  const auto effects = detail::effects_toward(graph, train_view, outcome, eff);
  const Selection sel = select_features(strategy, train_view, graph, effects, outcome);
  if (sel.empty()) throw Error(ErrorKind::Validation, "empty selection; no curve to trace");

  const auto scaler = detail::Scaler::fit(detail::gather(table.values, train, sel.features));
  const Eigen::MatrixXd x_train = scaler.apply(detail::gather(table.values, train, sel.features));
  const Eigen::MatrixXd x_dev = scaler.apply(detail::gather(table.values, dev, sel.features));
  const Eigen::MatrixXd x_test = scaler.apply(detail::gather(table.values, test, sel.features));
  const Eigen::VectorXd y_train = detail::gather(table.values, train, outcome);
  const Eigen::VectorXd y_dev = detail::gather(table.values, dev, outcome);
  const Eigen::VectorXd y_test = detail::gather(table.values, test, outcome);
  const double y_mean = y_train.mean();
  double y_sd = std::sqrt((y_train.array() - y_mean).square().mean());
  if (!(y_sd > 0)) y_sd = 1.0;

  std::vector<CurvePoint> curve;
  MlpConfig mc = mlp;
  mc.seed = derive_seed(seed, {3});
  fit_mlp(x_train, (y_train.array() - y_mean) / y_sd, mc, [&](int epoch, const Mlp& model) {
    const Eigen::VectorXd pd = (model.predict(x_dev).array() * y_sd + y_mean).matrix();
    const Eigen::VectorXd pt = (model.predict(x_test).array() * y_sd + y_mean).matrix();
    curve.push_back({epoch + 1, evaluate(pd, y_dev).rmse, evaluate(pt, y_test).rmse});
  });
  return curve;
}

}  // namespace urbancausal
