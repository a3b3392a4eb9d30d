#pragma once

// Fully connected regressor: ReLU hidden layers, linear scalar output,
// mean-squared-error loss, full-batch gradient descent.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "urbancausal/error.hpp"
#include "urbancausal/rng.hpp"

namespace urbancausal {

struct MlpConfig {
  std::vector<int> hidden_sizes{64, 64};
  int epochs = 6000;
  double learning_rate = 0.01;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1 || !(learning_rate > 0)) throw Error(ErrorKind::Validation, "invalid MLP configuration");
    for (int h : hidden_sizes)
      if (h < 1) throw Error(ErrorKind::Validation, "hidden sizes must be positive");
  }
};

class Mlp {
 public:
  Mlp() = default;

  Mlp(Eigen::Index inputs, const std::vector<int>& hidden, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::Index fan_in = inputs;
    auto add_layer = [&](Eigen::Index out) {
      Eigen::MatrixXd w(fan_in, out);
      const double scale = std::sqrt(2.0 / static_cast<double>(std::max<Eigen::Index>(fan_in, 1)));
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = scale * normal(rng);
      weights_.push_back(std::move(w));
      biases_.push_back(Eigen::RowVectorXd::Constant(out, 0.01));  // keeps pre-activations off the ReLU kink
      fan_in = out;
    };
    for (int h : hidden) add_layer(h);
    add_layer(1);
  }

  std::size_t layers() const { return weights_.size(); }
  Eigen::Index inputs() const { return weights_.empty() ? 0 : weights_.front().rows(); }

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd a = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      Eigen::MatrixXd z = (a * weights_[l]).rowwise() + biases_[l];
      a = (l + 1 < weights_.size()) ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z;
    }
    return a.col(0);
  }

  double loss(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) const {
    return (predict(x) - y).squaredNorm() / static_cast<double>(y.size());
  }

  /// Backpropagated gradient of the MSE, flattened in parameter order.
  std::vector<double> gradient(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) const {
    std::vector<Eigen::MatrixXd> wg;
    std::vector<Eigen::RowVectorXd> bg;
    backward(x, y, wg, bg);
    Mlp g = *this;
    g.weights_ = std::move(wg);
    g.biases_ = std::move(bg);
    return g.flatten();
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      out.insert(out.end(), weights_[l].data(), weights_[l].data() + weights_[l].size());
      out.insert(out.end(), biases_[l].data(), biases_[l].data() + biases_[l].size());
    }
    return out;
  }

  void assign(std::span<const double> flat) {
    std::size_t k = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      for (Eigen::Index i = 0; i < weights_[l].size(); ++i) weights_[l].data()[i] = flat[k++];
      for (Eigen::Index i = 0; i < biases_[l].size(); ++i) biases_[l].data()[i] = flat[k++];
    }
  }

  /// One gradient-descent step; returns the loss before the step.
  double step(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double learning_rate) {
    std::vector<Eigen::MatrixXd> wg;
    std::vector<Eigen::RowVectorXd> bg;
    const double l = backward(x, y, wg, bg);
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      weights_[i] -= learning_rate * wg[i];
      biases_[i] -= learning_rate * bg[i];
    }
    return l;
  }

 private:
  double backward(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::vector<Eigen::MatrixXd>& wg,
                  std::vector<Eigen::RowVectorXd>& bg) const {
    const std::size_t layers = weights_.size();
    std::vector<Eigen::MatrixXd> acts{x};
    std::vector<Eigen::MatrixXd> pre;
    for (std::size_t l = 0; l < layers; ++l) {
      Eigen::MatrixXd z = (acts.back() * weights_[l]).rowwise() + biases_[l];
      pre.push_back(z);
      acts.push_back(l + 1 < layers ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z);
    }
    const double n = static_cast<double>(y.size());
    const Eigen::VectorXd err = acts.back().col(0) - y;
    Eigen::MatrixXd delta = (2.0 / n) * err;
    wg.assign(layers, {});
    bg.assign(layers, {});
    for (std::size_t l = layers; l-- > 0;) {
      wg[l] = acts[l].transpose() * delta;
      bg[l] = delta.colwise().sum();
      if (l > 0) {
        delta = delta * weights_[l].transpose();
        delta = (pre[l - 1].array() > 0.0).select(delta, 0.0);
      }
    }
    return err.squaredNorm() / n;
  }

  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::RowVectorXd> biases_;
};

struct MlpFit {
  Mlp model;
  std::vector<double> loss_history;  // training MSE before each step
};

/// `on_epoch(epoch, model)` runs after every step; used to trace dev/test curves.
inline MlpFit fit_mlp(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const MlpConfig& config,
                      const std::function<void(int, const Mlp&)>& on_epoch = {}) {
  config.validate();
  if (x.cols() < 1) throw Error(ErrorKind::Validation, "MLP needs at least one input feature");
  if (x.rows() != y.size() || y.size() < 1) throw Error(ErrorKind::LengthMismatch, "X rows and y length differ");
  Rng rng(config.seed);
  MlpFit fit{Mlp(x.cols(), config.hidden_sizes, rng), {}};
  fit.loss_history.reserve(static_cast<std::size_t>(config.epochs));
  for (int e = 0; e < config.epochs; ++e) {
    const double l = fit.model.step(x, y, config.learning_rate);
    if (!std::isfinite(l))
      throw Error(ErrorKind::NonFiniteLoss, "training loss became " + std::to_string(l) + " at epoch " + std::to_string(e) +
                                                " (learning rate " + std::to_string(config.learning_rate) + ")");
    fit.loss_history.push_back(l);
    if (on_epoch) on_epoch(e, fit.model);
  }
  return fit;
}

}  // namespace urbancausal
