#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <mutex>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "urbancausal/error.hpp"
#include "urbancausal/graph.hpp"
#include "urbancausal/table.hpp"

namespace urbancausal {

/// Gaussian BIC of a linear SEM with per-node free variance:
///
///   S(G) = sum_j  n * ln(RSS_j / TSS_j) + |pa(j)| * ln(n)
///
/// RSS_j is the residual sum of squares of the OLS fit (with intercept) of
/// column j on its parents and TSS_j the centered total sum of squares. On
/// standardized data TSS_j = n, so the score is the usual n ln(RSS_j/n)
/// form, and the empty graph scores exactly 0.
///
/// Residual variances come from the sample covariance, C_jj - c' C_PP^-1 c,
/// and are memoized per (node, parent set). Collinear parent sets get a 1e-8
/// ridge on C_PP.
class BicScorer {
 public:
  static constexpr double kRidge = 1e-8;
  static constexpr double kVarianceFloor = 1e-12;

  explicit BicScorer(const FactorTable& table)
      : n_(static_cast<double>(table.rows())), d_(table.cols()), cache_(table.cols()) {
    if (d_ > 64) throw Error(ErrorKind::TooManyFactors, "BIC scorer supports at most 64 factors");
    if (table.rows() < 2) throw Error(ErrorKind::TooFewRows, "BIC needs at least 2 rows");
    const Eigen::MatrixXd centered = table.values.rowwise() - table.values.colwise().mean();
    cov_ = centered.transpose() * centered / n_;
    log_n_ = std::log(n_);
  }

  std::size_t factors() const { return d_; }
  double rows() const { return n_; }

  double node_score(std::size_t j, std::uint64_t parent_mask) const {
    {
      std::lock_guard lock(mutex_);
      auto it = cache_[j].find(parent_mask);
      if (it != cache_[j].end()) return it->second;
    }
    const double s = compute_node_score(j, parent_mask);
    std::lock_guard lock(mutex_);
    cache_[j].emplace(parent_mask, s);
    return s;
  }

  /// Scores any zero-diagonal adjacency, cyclic or not.
  double score(const Adjacency& adj) const {
    if (static_cast<std::size_t>(adj.rows()) != d_ || adj.rows() != adj.cols())
      throw Error(ErrorKind::ShapeMismatch, "adjacency size does not match table");
    double total = 0;
    for (std::size_t j = 0; j < d_; ++j) total += node_score(j, parent_mask(adj, j));
    return total;
  }

  static std::uint64_t parent_mask(const Adjacency& adj, std::size_t j) {
    std::uint64_t m = 0;
    for (Eigen::Index i = 0; i < adj.rows(); ++i)
      if (adj(i, static_cast<Eigen::Index>(j)) != 0 && static_cast<std::size_t>(i) != j) m |= std::uint64_t{1} << i;
    return m;
  }

 private:
  double compute_node_score(std::size_t j, std::uint64_t mask) const {
    std::vector<Eigen::Index> parents;
    for (std::size_t i = 0; i < d_; ++i)
      if ((mask >> i) & 1U) parents.push_back(static_cast<Eigen::Index>(i));
    const auto jj = static_cast<Eigen::Index>(j);
    const double total = cov_(jj, jj);
    if (parents.empty() || !(total > 0)) return 0.0;

    const auto p = static_cast<Eigen::Index>(parents.size());
    Eigen::MatrixXd cpp(p, p);
    Eigen::VectorXd cpj(p);
    for (Eigen::Index a = 0; a < p; ++a) {
      cpj(a) = cov_(parents[static_cast<std::size_t>(a)], jj);
      for (Eigen::Index b = 0; b < p; ++b)
        cpp(a, b) = cov_(parents[static_cast<std::size_t>(a)], parents[static_cast<std::size_t>(b)]);
    }
    Eigen::LLT<Eigen::MatrixXd> llt(cpp);
    if (llt.info() != Eigen::Success || llt.matrixLLT().diagonal().minCoeff() < 1e-10) {
      cpp.diagonal().array() += kRidge;
      llt.compute(cpp);
    }
    const Eigen::VectorXd z = llt.matrixL().solve(cpj);
    const double residual = std::max(total - z.squaredNorm(), kVarianceFloor * total);
    return n_ * std::log(residual / total) + static_cast<double>(p) * log_n_;
  }

  double n_;
  std::size_t d_;
  double log_n_ = 0;
  Eigen::MatrixXd cov_;
  mutable std::mutex mutex_;
  mutable std::vector<std::unordered_map<std::uint64_t, double>> cache_;
};

inline double bic_score(const CausalGraph& graph, const FactorTable& table) {
  return BicScorer(table).score(graph.adjacency);
}

}  // namespace urbancausal
