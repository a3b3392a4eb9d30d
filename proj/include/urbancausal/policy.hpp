#pragma once

// Graph-generating policy: a single-head self-attention encoder embeds each
// factor's column of observations, and a bilinear decoder scores every
// ordered factor pair as an independent Bernoulli edge.
//
//   E      = X' W_emb                       (d x h)
//   Z      = E + softmax(E Wq (E Wk)' / sqrt(h)) E Wv
//   S      = Z + tanh(Z W_ff)
//   L_ij   = s_i' W_dec s_j + bias,  L_ii = -inf

#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "urbancausal/error.hpp"
#include "urbancausal/graph.hpp"
#include "urbancausal/rng.hpp"
#include "urbancausal/stats.hpp"

namespace urbancausal {

struct PolicyParams {
  Eigen::MatrixXd embed;  // m x h
  Eigen::MatrixXd query, key, value, feed_forward;  // h x h
  Eigen::MatrixXd decoder;  // h x h
  double bias = 0.0;
  double baseline = 0.0;  // critic; moved by moving average, not by gradient

  Eigen::Index input_rows() const { return embed.rows(); }
  Eigen::Index hidden() const { return embed.cols(); }

  static PolicyParams zeros_like(const PolicyParams& p) {
    PolicyParams z;
    z.embed = Eigen::MatrixXd::Zero(p.embed.rows(), p.embed.cols());
    const auto h = p.hidden();
    z.query = z.key = z.value = z.feed_forward = z.decoder = Eigen::MatrixXd::Zero(h, h);
    return z;
  }

  bool all_finite() const {
    return embed.allFinite() && query.allFinite() && key.allFinite() && value.allFinite() &&
           feed_forward.allFinite() && decoder.allFinite() && std::isfinite(bias) && std::isfinite(baseline);
  }

  /// Trainable parameters in a fixed order (baseline excluded).
  std::vector<double> flatten() const {
    std::vector<double> out;
    for (const auto* m : {&embed, &query, &key, &value, &feed_forward, &decoder})
      out.insert(out.end(), m->data(), m->data() + m->size());
    out.push_back(bias);
    return out;
  }

  void assign(std::span<const double> flat) {
    std::size_t k = 0;
    for (auto* m : {&embed, &query, &key, &value, &feed_forward, &decoder})
      for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = flat[k++];
    bias = flat[k++];
    if (k != flat.size()) throw Error(ErrorKind::ShapeMismatch, "flat parameter vector has wrong length");
  }

  double squared_norm() const {
    return embed.squaredNorm() + query.squaredNorm() + key.squaredNorm() + value.squaredNorm() +
           feed_forward.squaredNorm() + decoder.squaredNorm() + bias * bias;
  }

  /// this += scale * other (trainable parameters only)
  void add_scaled(const PolicyParams& other, double scale) {
    embed += scale * other.embed;
    query += scale * other.query;
    key += scale * other.key;
    value += scale * other.value;
    feed_forward += scale * other.feed_forward;
    decoder += scale * other.decoder;
    bias += scale * other.bias;
  }
};

inline PolicyParams init_policy(Eigen::Index input_rows, Eigen::Index hidden, Rng& rng) {
  if (input_rows < 1 || hidden < 1) throw Error(ErrorKind::ShapeMismatch, "policy dimensions must be positive");
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](Eigen::Index r, Eigen::Index c, double scale) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * normal(rng);
    return m;
  };
  PolicyParams p;
  const double hs = 1.0 / std::sqrt(static_cast<double>(hidden));
  p.embed = draw(input_rows, hidden, 1.0 / std::sqrt(static_cast<double>(input_rows)));
  p.query = draw(hidden, hidden, hs);
  p.key = draw(hidden, hidden, hs);
  p.value = draw(hidden, hidden, hs);
  p.feed_forward = draw(hidden, hidden, hs);
  p.decoder = draw(hidden, hidden, 0.1 * hs);
  return p;
}

/// Intermediate activations kept for the backward pass.
struct EncoderTrace {
  Eigen::MatrixXd embedded, q, k, v, attention, mixed, gate, out;
};

inline EncoderTrace encode_trace(const Eigen::MatrixXd& state_rows, const PolicyParams& p) {
  if (state_rows.rows() != p.input_rows())
    throw Error(ErrorKind::ShapeMismatch, "state has " + std::to_string(state_rows.rows()) + " rows, policy expects " +
                                              std::to_string(p.input_rows()));
  const auto h = p.hidden();
  if (p.query.rows() != h || p.query.cols() != h || p.key.rows() != h || p.value.rows() != h ||
      p.feed_forward.rows() != h || p.decoder.rows() != h || p.decoder.cols() != h)
    throw Error(ErrorKind::ShapeMismatch, "inconsistent hidden width");
  EncoderTrace t;
  t.embedded = state_rows.transpose() * p.embed;
  t.q = t.embedded * p.query;
  t.k = t.embedded * p.key;
  t.v = t.embedded * p.value;
  Eigen::MatrixXd scores = t.q * t.k.transpose() / std::sqrt(static_cast<double>(h));
  t.attention.resize(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const double mx = scores.row(i).maxCoeff();
    Eigen::RowVectorXd e = (scores.row(i).array() - mx).exp();
    t.attention.row(i) = e / e.sum();
  }
  t.mixed = t.embedded + t.attention * t.v;
  t.gate = (t.mixed * p.feed_forward).array().tanh();
  t.out = t.mixed + t.gate;
  return t;
}

/// d x h factor embeddings.
inline Eigen::MatrixXd encode(const Eigen::MatrixXd& state_rows, const PolicyParams& p) {
  return encode_trace(state_rows, p).out;
}

inline Eigen::MatrixXd decode_edge_logits(const Eigen::MatrixXd& embeddings, const PolicyParams& p) {
  if (embeddings.cols() != p.decoder.rows()) throw Error(ErrorKind::ShapeMismatch, "embedding width mismatch");
  Eigen::MatrixXd logits = (embeddings * p.decoder * embeddings.transpose()).array() + p.bias;
  logits.diagonal().setConstant(-std::numeric_limits<double>::infinity());
  return logits;
}

inline Eigen::MatrixXd edge_probabilities(const Eigen::MatrixXd& logits) {
  return logits.unaryExpr([](double l) { return stats::sigmoid(l); });
}

struct SampledGraph {
  Adjacency adjacency;
  double log_prob = 0.0;
};

/// Log-probability of an adjacency under independent Bernoulli(sigmoid(logit))
/// edges; the diagonal is excluded.
inline double graph_log_prob(const Adjacency& adj, const Eigen::MatrixXd& logits) {
  double lp = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i)
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      if (i == j) continue;
      lp += adj(i, j) ? stats::log_sigmoid(logits(i, j)) : stats::log_sigmoid(-logits(i, j));
    }
  return lp;
}

inline SampledGraph sample_graph(const Eigen::MatrixXd& logits, Rng& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  SampledGraph s;
  s.adjacency = Adjacency::Zero(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i)
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      if (i == j) continue;
      const double u = uniform(rng);
      s.adjacency(i, j) = u < stats::sigmoid(logits(i, j)) ? 1 : 0;
    }
  s.log_prob = graph_log_prob(s.adjacency, logits);
  return s;
}

inline SampledGraph sample_graph(const Eigen::MatrixXd& logits, std::uint64_t seed) {
  Rng rng(seed);
  return sample_graph(logits, rng);
}

/// REINFORCE surrogate loss  -(1/B) sum_b advantage_b * log pi(G_b).
inline double surrogate_loss(const Eigen::MatrixXd& state_rows, const PolicyParams& p, std::span<const Adjacency> batch,
                             std::span<const double> advantages) {
  const Eigen::MatrixXd logits = decode_edge_logits(encode(state_rows, p), p);
  double loss = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) loss -= advantages[b] * graph_log_prob(batch[b], logits);
  return loss / static_cast<double>(batch.size());
}

/// Analytic gradient of surrogate_loss with respect to every trainable
/// parameter, by reverse-mode differentiation through decoder and encoder.
inline PolicyParams surrogate_gradient(const Eigen::MatrixXd& state_rows, const PolicyParams& p,
                                       std::span<const Adjacency> batch, std::span<const double> advantages) {
  if (batch.size() != advantages.size() || batch.empty())
    throw Error(ErrorKind::LengthMismatch, "batch and advantages must be non-empty and equally long");
  const EncoderTrace t = encode_trace(state_rows, p);
  const Eigen::MatrixXd logits = decode_edge_logits(t.out, p);
  const Eigen::MatrixXd prob = edge_probabilities(logits);
  const auto d = logits.rows();
  const double h = static_cast<double>(p.hidden());

  // d loss / d logit_ij = -(1/B) sum_b A_b (U_b,ij - p_ij)
  Eigen::MatrixXd g_logits = Eigen::MatrixXd::Zero(d, d);
  double adv_sum = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    g_logits -= advantages[b] * batch[b].cast<double>();
    adv_sum += advantages[b];
  }
  g_logits += adv_sum * prob;
  g_logits /= static_cast<double>(batch.size());
  g_logits.diagonal().setZero();

  PolicyParams g = PolicyParams::zeros_like(p);
  g.bias = g_logits.sum();
  g.decoder = t.out.transpose() * g_logits * t.out;
  Eigen::MatrixXd g_out = g_logits * t.out * p.decoder.transpose() + g_logits.transpose() * t.out * p.decoder;

  // S = Z + tanh(Z W_ff)
  const Eigen::MatrixXd g_pre = (g_out.array() * (1.0 - t.gate.array().square())).matrix();
  g.feed_forward = t.mixed.transpose() * g_pre;
  Eigen::MatrixXd g_mixed = g_out + g_pre * p.feed_forward.transpose();

  // Z = E + A V
  Eigen::MatrixXd g_embedded = g_mixed;
  const Eigen::MatrixXd g_attention = g_mixed * t.v.transpose();
  const Eigen::MatrixXd g_v = t.attention.transpose() * g_mixed;

  // row-wise softmax
  Eigen::MatrixXd g_scores(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double dot = t.attention.row(i).dot(g_attention.row(i));
    g_scores.row(i) = t.attention.row(i).array() * (g_attention.row(i).array() - dot);
  }
  g_scores /= std::sqrt(h);
  const Eigen::MatrixXd g_q = g_scores * t.k;
  const Eigen::MatrixXd g_k = g_scores.transpose() * t.q;

  g.query = t.embedded.transpose() * g_q;
  g.key = t.embedded.transpose() * g_k;
  g.value = t.embedded.transpose() * g_v;
  g_embedded += g_q * p.query.transpose() + g_k * p.key.transpose() + g_v * p.value.transpose();
  g.embed = state_rows * g_embedded;
  return g;
}

}  // namespace urbancausal
