#pragma once

// File formats for stage artifacts: schema / graph / effects / truth JSON,
// reward-history, significance, balance, experiment and epoch-curve CSVs,
// and Graphviz DOT.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "urbancausal/discovery.hpp"
#include "urbancausal/effects.hpp"
#include "urbancausal/error.hpp"
#include "urbancausal/graph.hpp"
#include "urbancausal/prediction.hpp"
#include "urbancausal/sem.hpp"
#include "urbancausal/table.hpp"

namespace urbancausal::io {

using nlohmann::json;

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path + "'");
  out << text;
}

inline json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Validation, what + ": " + e.what());
  }
}

inline json read_json(const std::string& path) { return parse_json(read_text(path), path); }

inline void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// ---- schema ---------------------------------------------------------------

inline json schema_to_json(const std::vector<FactorMeta>& schema) {
  json factors = json::array();
  for (const auto& m : schema)
    factors.push_back({{"name", m.name}, {"dimension", std::string(to_string(m.dimension))}, {"description", m.description}});
  return {{"factors", factors}};
}

inline std::vector<FactorMeta> schema_from_json(const json& j) {
  try {
    std::vector<FactorMeta> out;
    for (const auto& f : j.at("factors"))
      out.push_back({f.at("name").get<std::string>(), parse_dimension(f.at("dimension").get<std::string>()),
                     f.value("description", std::string())});
    return out;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Validation, std::string("schema: ") + e.what());
  }
}

// ---- graph ----------------------------------------------------------------

inline json adjacency_to_json(const Adjacency& a) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < a.cols(); ++j) row.push_back(a(i, j));
    rows.push_back(row);
  }
  return rows;
}

inline Adjacency adjacency_from_json(const json& rows) {
  const auto d = static_cast<Eigen::Index>(rows.size());
  Adjacency a(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const auto& row = rows.at(static_cast<std::size_t>(i));
    if (static_cast<Eigen::Index>(row.size()) != d) throw Error(ErrorKind::InvalidGraphSpec, "adjacency must be square");
    for (Eigen::Index j = 0; j < d; ++j) {
      const int v = row.at(static_cast<std::size_t>(j)).get<int>();
      if (v != 0 && v != 1) throw Error(ErrorKind::InvalidGraphSpec, "adjacency entries must be 0 or 1");
      a(i, j) = v;
    }
  }
  return a;
}

inline json graph_to_json(const CausalGraph& g, double bic, std::uint64_t seed) {
  return {{"factor_names", g.factor_names}, {"adjacency", adjacency_to_json(g.adjacency)}, {"bic", bic}, {"seed", seed}};
}

inline CausalGraph graph_from_json(const json& j) {
  try {
    CausalGraph g(adjacency_from_json(j.at("adjacency")), j.at("factor_names").get<std::vector<std::string>>());
    return finalize(std::move(g));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidGraphSpec, e.what());
  }
}

inline std::string graph_to_dot(const CausalGraph& g) {
  std::ostringstream out;
  out << "digraph causal {\n  rankdir=TB;\n";
  for (const auto& n : g.factor_names) out << "  \"" << n << "\";\n";
  for (auto [i, j] : g.edges()) out << "  \"" << g.factor_names[i] << "\" -> \"" << g.factor_names[j] << "\";\n";
  out << "}\n";
  return out.str();
}

inline std::string reward_history_csv(const std::vector<EpisodeStats>& history) {
  std::ostringstream out;
  out << "episode,mean_reward,best_score\n";
  for (const auto& h : history)
    out << h.episode << ',' << format_double(h.mean_reward) << ',' << format_double(h.best_score) << '\n';
  return out.str();
}

// ---- SEM truth sidecar ----------------------------------------------------

inline json truth_to_json(const SemSpec& spec, std::size_t n, std::uint64_t seed) {
  json weights = json::array();
  for (Eigen::Index i = 0; i < spec.weights.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < spec.weights.cols(); ++j) row.push_back(spec.weights(i, j));
    weights.push_back(row);
  }
  std::vector<double> noise(spec.noise_std.data(), spec.noise_std.data() + spec.noise_std.size());
  return {{"factor_names", spec.graph.factor_names},
          {"adjacency", adjacency_to_json(spec.graph.adjacency)},
          {"weights", weights},
          {"noise_std", noise},
          {"n", n},
          {"seed", seed}};
}

// ---- effects --------------------------------------------------------------

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json effects_to_json(const std::vector<AteResult>& effects) {
  json arr = json::array();
  for (const auto& e : effects) {
    json j = {{"treatment", e.treatment},   {"outcome", e.outcome},         {"ate", number_or_null(e.ate)},
              {"p_value", number_or_null(e.p_value)}, {"n_pairs", e.n_pairs}, {"significant", e.significant},
              {"confounded", e.confounded}, {"confounders", e.confounders}};
    if (!e.error.empty()) j["error"] = e.error;
    arr.push_back(j);
  }
  return arr;
}

inline std::vector<AteResult> effects_from_json(const json& arr) {
  try {
    std::vector<AteResult> out;
    for (const auto& j : arr) {
      AteResult e;
      e.treatment = j.at("treatment").get<std::string>();
      e.outcome = j.at("outcome").get<std::string>();
      e.ate = j.at("ate").is_null() ? 0.0 : j.at("ate").get<double>();
      e.p_value = j.at("p_value").is_null() ? 1.0 : j.at("p_value").get<double>();
      e.n_pairs = j.at("n_pairs").get<std::size_t>();
      e.significant = j.at("significant").get<bool>();
      e.confounded = j.at("confounded").get<bool>();
      e.confounders = j.value("confounders", std::vector<std::string>{});
      e.error = j.value("error", std::string());
      out.push_back(std::move(e));
    }
    return out;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Validation, std::string("effects: ") + e.what());
  }
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += (c == '"') ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

/// Rows are causes, columns effects; cells +1 / -1 / 0.
inline std::string significance_matrix_csv(const CausalGraph& g, const Eigen::MatrixXi& m) {
  std::ostringstream out;
  out << "cause";
  for (const auto& n : g.factor_names) out << ',' << csv_field(n);
  out << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out << csv_field(g.factor_names[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << ',' << m(i, j);
    out << '\n';
  }
  return out.str();
}

inline std::string balance_csv(const std::vector<BalanceReport>& reports) {
  std::ostringstream out;
  out << "edge,confounder,rel_diff_before,rel_diff_after\n";
  for (const auto& r : reports)
    for (const auto& e : r.entries)
      out << csv_field(r.treatment + " -> " + r.outcome) << ',' << csv_field(e.confounder) << ','
          << format_double(e.rel_diff_before) << ',' << format_double(e.rel_diff_after) << '\n';
  return out.str();
}

// ---- prediction -----------------------------------------------------------

inline std::string join(const std::vector<std::string>& parts, char sep) {
  std::string s;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) s += sep;
    s += parts[i];
  }
  return s;
}

inline std::string experiment_csv(const ExperimentReport& report) {
  std::ostringstream out;
  out << "outcome,strategy,predictor,train_fraction,repeat,rmse,mae,selected_features,empty_selection,l1_lambda,n_train,n_test,"
         "error\n";
  auto num = [](double v) { return std::isfinite(v) ? format_double(v) : std::string(); };
  for (const auto& r : report.rows)
    out << csv_field(r.outcome) << ',' << to_string(r.strategy) << ',' << to_string(r.predictor) << ','
        << format_double(r.fraction) << ',' << r.repeat << ',' << num(r.rmse) << ',' << num(r.mae) << ','
        << csv_field(join(r.selected_features, ';')) << ',' << (r.empty_selection ? 1 : 0) << ','
        << format_double(r.l1_lambda) << ',' << r.n_train << ',' << r.n_test << ',' << csv_field(r.error) << '\n';
  return out.str();
}

inline json summary_to_json(const std::vector<SummaryRow>& rows) {
  json arr = json::array();
  for (const auto& s : rows) {
    json j = {{"outcome", s.outcome},
              {"strategy", std::string(to_string(s.strategy))},
              {"predictor", std::string(to_string(s.predictor))},
              {"train_fraction", s.fraction ? json(*s.fraction) : json("all")},
              {"count", s.count},
              {"rmse_mean", s.rmse_mean},
              {"rmse_std", s.rmse_std},
              {"mae_mean", s.mae_mean},
              {"mae_std", s.mae_std}};
    arr.push_back(j);
  }
  return arr;
}

inline std::string epoch_curve_csv(const std::vector<CurvePoint>& curve) {
  std::ostringstream out;
  out << "epoch,dev_rmse,test_rmse\n";
  for (const auto& c : curve) out << c.epoch << ',' << format_double(c.dev_rmse) << ',' << format_double(c.test_rmse) << '\n';
  return out.str();
}

}  // namespace urbancausal::io
