#pragma once

// Proportional-odds model  P(T <= k | x) = sigmoid(theta_k - w'x).
//
// Optimized over the unconstrained vector  [w, theta_1, log(theta_2 - theta_1),
// ..., log(theta_{K-1} - theta_{K-2})],  which keeps thresholds strictly
// increasing at every iterate.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "urbancausal/error.hpp"
#include "urbancausal/rng.hpp"
#include "urbancausal/stats.hpp"
#include "urbancausal/table.hpp"

namespace urbancausal {

struct OrdinalModel {
  Eigen::VectorXd w;
  Eigen::VectorXd theta;  // K-1 thresholds
  bool converged = false;
  double final_loglik = 0.0;  // summed over rows
  int iterations = 0;
  std::vector<double> loglik_trace;  // per iteration, when requested
};

struct OrdinalFitOptions {
  double grad_tol = 1e-6;
  int max_iter = 10000;
  bool record_trace = false;
};

namespace ordinal {

inline Eigen::VectorXd thresholds_from_raw(const Eigen::VectorXd& raw, Eigen::Index c) {
  const Eigen::Index kk = raw.size() - c;
  Eigen::VectorXd theta(kk);
  if (kk == 0) return theta;
  theta(0) = raw(c);
  for (Eigen::Index k = 1; k < kk; ++k) theta(k) = theta(k - 1) + std::exp(raw(c + k));
  return theta;
}

inline Eigen::VectorXd raw_from_params(const Eigen::VectorXd& w, const Eigen::VectorXd& theta) {
  Eigen::VectorXd raw(w.size() + theta.size());
  raw.head(w.size()) = w;
  if (theta.size() > 0) raw(w.size()) = theta(0);
  for (Eigen::Index k = 1; k < theta.size(); ++k) raw(w.size() + k) = std::log(theta(k) - theta(k - 1));
  return raw;
}

struct Evaluation {
  double loglik = 0.0;       // sum over rows
  Eigen::VectorXd gradient;  // w.r.t. raw parameters, of the summed log-likelihood
};

/// Log-likelihood of levels in 1..K and its gradient in raw coordinates.
inline Evaluation evaluate(const Eigen::MatrixXd& x, std::span<const int> levels, int k, const Eigen::VectorXd& raw) {
  const Eigen::Index c = x.cols();
  const Eigen::VectorXd w = raw.head(c);
  const Eigen::VectorXd theta = thresholds_from_raw(raw, c);
  const Eigen::VectorXd eta = c > 0 ? Eigen::VectorXd(x * w) : Eigen::VectorXd::Zero(x.rows());

  Evaluation ev;
  Eigen::VectorXd g_theta = Eigen::VectorXd::Zero(k - 1);
  Eigen::VectorXd g_eta(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int t = levels[static_cast<std::size_t>(i)];
    double ga = 0, gb = 0;
    if (t == 1) {
      const double a = theta(0) - eta(i);
      ev.loglik += stats::log_sigmoid(a);
      ga = stats::sigmoid(-a);
    } else if (t == k) {
      const double b = theta(k - 2) - eta(i);
      ev.loglik += stats::log_sigmoid(-b);
      gb = -stats::sigmoid(b);
    } else {
      // ln(sigmoid(a) - sigmoid(b)) = ln sigmoid(a) + ln sigmoid(-b) + ln(1 - e^(b-a))
      const double a = theta(t - 1) - eta(i);
      const double b = theta(t - 2) - eta(i);
      ev.loglik += stats::log_sigmoid(a) + stats::log_sigmoid(-b) + std::log(-std::expm1(b - a));
      const double cross = 1.0 / std::expm1(a - b);
      ga = stats::sigmoid(-a) + cross;
      gb = -stats::sigmoid(b) - cross;
    }
    if (t < k) g_theta(t - 1) += ga;
    if (t > 1) g_theta(t - 2) += gb;
    g_eta(i) = -(ga + gb);
  }

  ev.gradient.resize(raw.size());
  if (c > 0) ev.gradient.head(c) = x.transpose() * g_eta;
  // theta_k = raw_c + sum_{l=1..k} exp(raw_{c+l})
  double tail = 0;
  for (Eigen::Index kk = k - 2; kk >= 0; --kk) {
    tail += g_theta(kk);
    if (kk == 0)
      ev.gradient(c) = tail;
    else
      ev.gradient(c + kk) = tail * std::exp(raw(c + kk));
  }
  return ev;
}

}  // namespace ordinal

/// Maximum-likelihood fit by gradient ascent on the mean log-likelihood with
/// Barzilai-Borwein trial steps and Armijo backtracking, so the objective
/// never decreases between iterates. Starts from w = 0 and thresholds at the
/// logits of the empirical cumulative level frequencies.
inline OrdinalModel fit_ordinal_regression(const Eigen::MatrixXd& x, const TreatmentAssignment& levels,
                                           const OrdinalFitOptions& opt = {}) {
  const int k = levels.k;
  if (static_cast<std::size_t>(x.rows()) != levels.size())
    throw Error(ErrorKind::DimensionMismatch, "confounder rows do not match treatment length");
  if (k < 2) throw Error(ErrorKind::Degenerate, "need at least two treatment levels");
  const auto counts = levels.counts();
  for (std::size_t l = 0; l < counts.size(); ++l)
    if (counts[l] == 0) throw Error(ErrorKind::Degenerate, "treatment level " + std::to_string(l + 1) + " is empty");
  for (int l : levels.levels)
    if (l < 1 || l > k) throw Error(ErrorKind::Degenerate, "treatment level out of range");

  const double n = static_cast<double>(x.rows());
  const Eigen::Index c = x.cols();
  Eigen::VectorXd theta0(k - 1);
  double cum = 0;
  for (int l = 0; l < k - 1; ++l) {
    cum += static_cast<double>(counts[static_cast<std::size_t>(l)]) / n;
    theta0(l) = std::log(cum / (1.0 - cum));
  }
  Eigen::VectorXd raw = ordinal::raw_from_params(Eigen::VectorXd::Zero(c), theta0);

  OrdinalModel model;
  auto ev = ordinal::evaluate(x, levels.levels, k, raw);
  double f = ev.loglik / n;
  Eigen::VectorXd g = ev.gradient / n;
  double step = 1.0;
  int it = 0;
  for (; it < opt.max_iter; ++it) {
    if (opt.record_trace) model.loglik_trace.push_back(ev.loglik);
    if (g.norm() < opt.grad_tol) {
      model.converged = true;
      break;
    }
    double alpha = step;
    Eigen::VectorXd next;
    ordinal::Evaluation next_ev;
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      next = raw + alpha * g;
      next_ev = ordinal::evaluate(x, levels.levels, k, next);
      if (std::isfinite(next_ev.loglik) && next_ev.loglik / n >= f + 1e-4 * alpha * g.squaredNorm()) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;  // no ascent step representable at this precision
    const Eigen::VectorXd s = next - raw;
    const Eigen::VectorXd g_next = next_ev.gradient / n;
    const double sy = -s.dot(g_next - g);
    step = sy > 0 ? std::clamp(s.squaredNorm() / sy, 1e-10, 1e10) : std::min(1e10, 2.0 * alpha);
    raw = next;
    ev = std::move(next_ev);
    f = ev.loglik / n;
    g = g_next;
  }
  if (!model.converged && g.norm() < opt.grad_tol) model.converged = true;
  model.w = raw.head(c);
  model.theta = ordinal::thresholds_from_raw(raw, c);
  model.final_loglik = ev.loglik;
  model.iterations = it;
  return model;
}

inline double propensity_score(const OrdinalModel& model, std::span<const double> x) {
  if (static_cast<Eigen::Index>(x.size()) != model.w.size())
    throw Error(ErrorKind::DimensionMismatch, "confounder vector length does not match model");
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += model.w(static_cast<Eigen::Index>(i)) * x[i];
  return s;
}

inline Eigen::VectorXd propensity_scores(const OrdinalModel& model, const Eigen::MatrixXd& x) {
  if (x.cols() != model.w.size()) throw Error(ErrorKind::DimensionMismatch, "confounder width does not match model");
  if (x.cols() == 0) return Eigen::VectorXd::Zero(x.rows());
  return x * model.w;
}

/// Draws levels from the model itself: latent w'x + logistic noise, cut at
/// the thresholds.
inline TreatmentAssignment sample_ordinal_levels(const Eigen::MatrixXd& x, const Eigen::VectorXd& w,
                                                 const Eigen::VectorXd& theta, Rng& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  TreatmentAssignment t;
  t.k = static_cast<int>(theta.size()) + 1;
  t.levels.resize(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double u = uniform(rng);
    u = std::clamp(u, 1e-300, 1.0 - 1e-16);
    const double latent = (x.cols() > 0 ? x.row(i).dot(w) : 0.0) + std::log(u / (1.0 - u));
    int level = 1;
    while (level < t.k && latent > theta(level - 1)) ++level;
    t.levels[static_cast<std::size_t>(i)] = level;
  }
  return t;
}

}  // namespace urbancausal
