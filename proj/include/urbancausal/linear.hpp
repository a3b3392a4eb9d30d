#pragma once

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "urbancausal/error.hpp"

namespace urbancausal {

struct LinearModel {
  Eigen::VectorXd weights;
  double intercept = 0.0;

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
    if (weights.size() == 0) return Eigen::VectorXd::Constant(x.rows(), intercept);
    return (x * weights).array() + intercept;
  }
};

inline double soft_threshold(double v, double lambda) {
  if (v > lambda) return v - lambda;
  if (v < -lambda) return v + lambda;
  return 0.0;
}

/// lambda == 0: least squares with intercept via the normal equations
/// (1e-10 ridge if the Gram matrix is singular). lambda > 0: coordinate
/// descent on (1/2n)||y - Xw - b||^2 + lambda ||w||_1 with an unpenalized
/// intercept, stopped when no coordinate moves by more than 1e-8.
inline LinearModel fit_linear(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double l1_lambda = 0.0) {
  if (x.rows() != y.size()) throw Error(ErrorKind::LengthMismatch, "X rows and y length differ");
  if (y.size() < 1) throw Error(ErrorKind::TooFewRows, "need at least one row");
  if (l1_lambda < 0) throw Error(ErrorKind::Validation, "l1_lambda must be non-negative");
  const double n = static_cast<double>(y.size());
  const double y_mean = y.mean();
  LinearModel m;
  if (x.cols() == 0) {
    m.intercept = y_mean;
    return m;
  }
  const Eigen::RowVectorXd x_mean = x.colwise().mean();
  const Eigen::MatrixXd xc = x.rowwise() - x_mean;
  const Eigen::VectorXd yc = y.array() - y_mean;

  if (l1_lambda == 0.0) {
    Eigen::MatrixXd gram = xc.transpose() * xc;
    const Eigen::VectorXd rhs = xc.transpose() * yc;
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() != Eigen::Success) {
      gram.diagonal().array() += 1e-10;
      llt.compute(gram);
    }
    if (llt.info() == Eigen::Success) {
      m.weights = llt.solve(rhs);
    } else {
      m.weights = gram.completeOrthogonalDecomposition().solve(rhs);
    }
  } else {
    const Eigen::VectorXd col_sq = xc.colwise().squaredNorm().transpose() / n;
    m.weights = Eigen::VectorXd::Zero(x.cols());
    Eigen::VectorXd resid = yc;
    for (int sweep = 0; sweep < 100000; ++sweep) {
      double max_change = 0;
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        if (!(col_sq(j) > 0)) continue;
        const double old = m.weights(j);
        const double rho = xc.col(j).dot(resid) / n + col_sq(j) * old;
        const double updated = soft_threshold(rho, l1_lambda) / col_sq(j);
        if (updated != old) {
          resid -= (updated - old) * xc.col(j);
          m.weights(j) = updated;
          max_change = std::max(max_change, std::fabs(updated - old));
        }
      }
      if (max_change < 1e-8) break;
    }
  }
  m.intercept = y_mean - x_mean.dot(m.weights);
  return m;
}

}  // namespace urbancausal
