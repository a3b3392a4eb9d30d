#pragma once

// Command-line front end. Each subcommand reads a JSON run config, consumes
// the previous stage's files from the output directory and writes its own.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "urbancausal/discovery.hpp"
#include "urbancausal/effects.hpp"
#include "urbancausal/error.hpp"
#include "urbancausal/io.hpp"
#include "urbancausal/prediction.hpp"
#include "urbancausal/sem.hpp"
#include "urbancausal/table.hpp"

namespace urbancausal::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kVersion = "urbancausal 0.1.0";

/// 0 success, 1 validation, 2 missing prerequisite, 3 numerical failure.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingStageOutput:
      return 2;
    case ErrorKind::ZeroVariance:
    case ErrorKind::TooFewRows:
    case ErrorKind::NoAcyclicSample:
    case ErrorKind::Degenerate:
    case ErrorKind::SingleLevel:
    case ErrorKind::NonFiniteLoss:
      return 3;
    default:
      return 1;
  }
}

struct CurveSpec {
  std::string outcome;
  SelectionStrategy strategy;
  MlpConfig mlp;
};

struct RunConfig {
  fs::path base_dir;
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> output_dir;
  std::optional<fs::path> data_csv;
  std::optional<fs::path> schema_path;
  bool standardize = true;
  json synth;
  TrainConfig discovery;
  EffectsOptions effects;
  ExperimentConfig prediction;
  std::optional<CurveSpec> curve;
};

namespace detail {

inline void check_keys(const json& j, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw Error(ErrorKind::Validation, "'" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw Error(ErrorKind::Validation, "unknown key '" + key + "' in " + section);
  }
}

template <class T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

inline MlpConfig parse_mlp(const json& j, const std::string& section) {
  check_keys(j, section, {"hidden_sizes", "epochs", "learning_rate"});
  MlpConfig m;
  read_opt(j, "hidden_sizes", m.hidden_sizes);
  read_opt(j, "epochs", m.epochs);
  read_opt(j, "learning_rate", m.learning_rate);
  return m;
}

inline SelectionStrategy parse_strategy_spec(const json& j, double alpha) {
  SelectionStrategy s;
  s.alpha = alpha;
  if (j.is_string()) {
    s.kind = parse_strategy(j.get<std::string>());
    return s;
  }
  check_keys(j, "strategy", {"kind", "alpha", "l1_lambda"});
  s.kind = parse_strategy(j.at("kind").get<std::string>());
  read_opt(j, "alpha", s.alpha);
  read_opt(j, "l1_lambda", s.l1_lambda);
  return s;
}

inline void parse_sections(const json& root, RunConfig& cfg) {
  check_keys(root, "config", {"seed", "output_dir", "data", "preprocess", "synth", "discovery", "effects", "prediction"});
  if (root.contains("seed")) cfg.seed = root.at("seed").get<std::uint64_t>();
  if (root.contains("output_dir")) cfg.output_dir = resolve(cfg.base_dir, root.at("output_dir").get<std::string>());

  if (root.contains("data")) {
    const auto& d = root.at("data");
    check_keys(d, "data", {"csv", "schema"});
    if (d.contains("csv")) cfg.data_csv = resolve(cfg.base_dir, d.at("csv").get<std::string>());
    if (d.contains("schema")) cfg.schema_path = resolve(cfg.base_dir, d.at("schema").get<std::string>());
    for (const auto* p : {&cfg.data_csv, &cfg.schema_path})
      if (*p && !fs::exists(**p)) throw Error(ErrorKind::Validation, "path not found: " + (*p)->string());
    if (cfg.data_csv.has_value() != cfg.schema_path.has_value())
      throw Error(ErrorKind::Validation, "data needs both 'csv' and 'schema'");
  }
  if (root.contains("preprocess")) {
    const auto& p = root.at("preprocess");
    check_keys(p, "preprocess", {"standardize"});
    read_opt(p, "standardize", cfg.standardize);
  }
  if (root.contains("synth")) {
    cfg.synth = root.at("synth");
    check_keys(cfg.synth, "synth", {"preset", "graph", "n", "weight", "noise", "confounder_weight", "structure_seed"});
    if (cfg.synth.contains("graph"))
      check_keys(cfg.synth.at("graph"), "synth.graph", {"factor_names", "dimensions", "adjacency", "weights", "noise_std"});
  }
  if (root.contains("discovery")) {
    const auto& d = root.at("discovery");
    check_keys(d, "discovery", {"episodes", "batch_size", "learning_rate", "lambda_acyc", "minibatch_rows", "hidden_width",
                                "baseline_decay", "grad_clip"});
    auto& t = cfg.discovery;
    read_opt(d, "episodes", t.episodes);
    read_opt(d, "batch_size", t.batch_size);
    read_opt(d, "learning_rate", t.learning_rate);
    if (d.contains("lambda_acyc")) t.lambda_acyc = d.at("lambda_acyc").get<double>();
    read_opt(d, "minibatch_rows", t.minibatch_rows);
    read_opt(d, "hidden_width", t.hidden_width);
    read_opt(d, "baseline_decay", t.baseline_decay);
    read_opt(d, "grad_clip", t.grad_clip);
    t.validate();
  }
  if (root.contains("effects")) {
    const auto& e = root.at("effects");
    check_keys(e, "effects", {"k", "alpha"});
    read_opt(e, "k", cfg.effects.k);
    read_opt(e, "alpha", cfg.effects.alpha);
  }
  if (cfg.effects.k < 2 || !(cfg.effects.alpha > 0 && cfg.effects.alpha < 1))
    throw Error(ErrorKind::Validation, "effects needs k >= 2 and alpha in (0, 1)");

  auto& x = cfg.prediction;
  x.effects = cfg.effects;
  x.strategies = {{StrategyKind::AllL1, cfg.effects.alpha},
                  {StrategyKind::CorrelationP, cfg.effects.alpha},
                  {StrategyKind::CausalAncestor, cfg.effects.alpha},
                  {StrategyKind::CausalSignificance, cfg.effects.alpha}};
  if (root.contains("prediction")) {
    const auto& p = root.at("prediction");
    check_keys(p, "prediction", {"outcomes", "strategies", "predictors", "fractions", "repeats", "l1_grid",
                                 "validation_fraction", "mlp", "epoch_curve"});
    read_opt(p, "outcomes", x.outcomes);
    if (p.contains("strategies")) {
      x.strategies.clear();
      for (const auto& s : p.at("strategies")) x.strategies.push_back(parse_strategy_spec(s, cfg.effects.alpha));
    }
    if (p.contains("predictors")) {
      x.predictors.clear();
      for (const auto& s : p.at("predictors")) x.predictors.push_back(parse_predictor(s.get<std::string>()));
    }
    read_opt(p, "fractions", x.fractions);
    read_opt(p, "repeats", x.repeats);
    read_opt(p, "l1_grid", x.l1_grid);
    read_opt(p, "validation_fraction", x.validation_fraction);
    if (p.contains("mlp")) x.mlp = parse_mlp(p.at("mlp"), "prediction.mlp");
    if (p.contains("epoch_curve")) {
      const auto& c = p.at("epoch_curve");
      check_keys(c, "prediction.epoch_curve", {"outcome", "strategy", "mlp"});
      CurveSpec spec;
      spec.outcome = c.at("outcome").get<std::string>();
      spec.strategy = c.contains("strategy") ? parse_strategy_spec(c.at("strategy"), cfg.effects.alpha)
                                             : SelectionStrategy{StrategyKind::CausalSignificance, cfg.effects.alpha};
      spec.mlp = c.contains("mlp") ? parse_mlp(c.at("mlp"), "prediction.epoch_curve.mlp") : x.mlp;
      spec.strategy.validate();
      spec.mlp.validate();
      cfg.curve = spec;
    }
  }
  x.validate();
}

}  // namespace detail

inline RunConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::Validation, "config not found: " + path.string());
  const json root = io::read_json(path.string());
  RunConfig cfg;
  cfg.base_dir = path.parent_path();
  try {
    detail::parse_sections(root, cfg);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Validation, std::string("config: ") + e.what());
  }
  return cfg;
}

/// Builds the SEM named by the synth section: either a preset or an inline
/// graph with adjacency, weights and noise.
inline SemSpec synth_spec(const json& s, std::uint64_t seed) {
  if (s.contains("preset") == s.contains("graph"))
    throw Error(ErrorKind::InvalidGraphSpec, "synth needs exactly one of 'preset' or 'graph'");
  try {
    if (s.contains("preset")) {
      PresetOptions opt;
      detail::read_opt(s, "weight", opt.weight);
      detail::read_opt(s, "noise", opt.noise);
      detail::read_opt(s, "confounder_weight", opt.confounder_weight);
      opt.seed = s.value("structure_seed", seed);
      return sem_preset(s.at("preset").get<std::string>(), opt);
    }
    const auto& g = s.at("graph");
    const auto names = g.at("factor_names").get<std::vector<std::string>>();
    const auto d = static_cast<Eigen::Index>(names.size());
    SemSpec spec;
    spec.graph = CausalGraph(io::adjacency_from_json(g.at("adjacency")), names);
    if (spec.graph.adjacency.rows() != d) throw Error(ErrorKind::InvalidGraphSpec, "adjacency size differs from factor_names");
    if (spec.graph.adjacency.diagonal().any()) throw Error(ErrorKind::InvalidGraphSpec, "self-loop in adjacency");
    if (!is_acyclic(spec.graph.adjacency)) throw Error(ErrorKind::InvalidGraphSpec, "synth graph has a cycle");
    spec.weights = Eigen::MatrixXd::Zero(d, d);
    const auto& w = g.at("weights");
    if (static_cast<Eigen::Index>(w.size()) != d) throw Error(ErrorKind::InvalidGraphSpec, "weights must be d x d");
    for (Eigen::Index i = 0; i < d; ++i) {
      const auto row = w.at(static_cast<std::size_t>(i)).get<std::vector<double>>();
      if (static_cast<Eigen::Index>(row.size()) != d) throw Error(ErrorKind::InvalidGraphSpec, "weights must be d x d");
      for (Eigen::Index j = 0; j < d; ++j) {
        if (row[static_cast<std::size_t>(j)] != 0.0 && !spec.graph.adjacency(i, j))
          throw Error(ErrorKind::InvalidGraphSpec, "weight on a non-edge");
        spec.weights(i, j) = row[static_cast<std::size_t>(j)];
      }
    }
    const auto& noise = g.at("noise_std");
    if (noise.is_number()) {
      spec.noise_std = Eigen::VectorXd::Constant(d, noise.get<double>());
    } else {
      const auto v = noise.get<std::vector<double>>();
      if (static_cast<Eigen::Index>(v.size()) != d) throw Error(ErrorKind::InvalidGraphSpec, "noise_std length differs from d");
      spec.noise_std = Eigen::Map<const Eigen::VectorXd>(v.data(), d);
    }
    std::vector<std::string> dims(names.size(), "Citizens");
    detail::read_opt(g, "dimensions", dims);
    if (dims.size() != names.size()) throw Error(ErrorKind::InvalidGraphSpec, "dimensions length differs from d");
    for (std::size_t i = 0; i < names.size(); ++i) spec.meta.push_back({names[i], parse_dimension(dims[i]), ""});
    return spec;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidGraphSpec, e.what());
  }
}

struct Context {
  RunConfig cfg;
  fs::path out;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;

  fs::path at(const char* name) const { return out / name; }

  fs::path require(const char* name, const char* stage) {
    const auto p = at(name);
    if (!fs::exists(p)) throw Error(ErrorKind::MissingStageOutput, p.string() + " (run '" + stage + "' first)");
    inputs.push_back(p.string());
    return p;
  }

  FactorTable load_table() {
    fs::path csv, schema;
    if (cfg.data_csv) {
      csv = *cfg.data_csv;
      schema = *cfg.schema_path;
      inputs.push_back(csv.string());
      inputs.push_back(schema.string());
    } else {
      csv = require("data.csv", "synth");
      schema = require("schema.json", "synth");
    }
    auto t = load_factor_table(csv.string(), io::schema_from_json(io::read_json(schema.string())));
    return cfg.standardize ? standardize(t) : t;
  }

  CausalGraph load_graph() {
    auto g = io::graph_from_json(io::read_json(require("graph.json", "discover").string()));
    return g;
  }

  std::vector<AteResult> load_effects() { return io::effects_from_json(io::read_json(require("effects.json", "effects").string())); }
};

inline void cmd_synth(Context& c) {
  if (c.cfg.synth.is_null()) throw Error(ErrorKind::Validation, "config has no 'synth' section");
  const auto spec = synth_spec(c.cfg.synth, c.seed);
  const std::size_t n = c.cfg.synth.value("n", std::size_t{1000});
  const auto table = generate_synthetic_sem(spec, n, c.seed);
  std::ostringstream csv;
  write_factor_table(csv, table);
  io::write_text(c.at("data.csv").string(), csv.str());
  io::write_json(c.at("schema.json").string(), io::schema_to_json(spec.meta));
  io::write_json(c.at("truth.json").string(), io::truth_to_json(spec, n, c.seed));
}

inline void cmd_discover(Context& c) {
  const auto table = c.load_table();
  TrainConfig tc = c.cfg.discovery;
  tc.seed = c.seed;
  const auto r = train_discovery(table, tc);
  io::write_json(c.at("graph.json").string(), io::graph_to_json(r.best_graph, r.best_score, c.seed));
  io::write_text(c.at("graph.dot").string(), io::graph_to_dot(r.best_graph));
  io::write_text(c.at("reward_history.csv").string(), io::reward_history_csv(r.reward_history));
}

inline void cmd_effects(Context& c) {
  const auto table = c.load_table();
  const auto graph = c.load_graph();
  if (graph.factor_names != table.names()) throw Error(ErrorKind::DimensionMismatch, "graph factors differ from the table");
  const auto r = estimate_all_effects(graph, table, c.cfg.effects);
  io::write_json(c.at("effects.json").string(), io::effects_to_json(r.effects));
  io::write_text(c.at("significance_matrix.csv").string(),
                 io::significance_matrix_csv(graph, significance_matrix(graph, r.effects)));
  io::write_text(c.at("balance.csv").string(), io::balance_csv(r.balance));
}

inline void cmd_predict(Context& c) {
  const auto table = c.load_table();
  const auto graph = c.load_graph();
  // full-data effects are a stage prerequisite; selection re-estimates them on each training split
  c.load_effects();
  if (graph.factor_names != table.names()) throw Error(ErrorKind::DimensionMismatch, "graph factors differ from the table");
  ExperimentConfig x = c.cfg.prediction;
  x.seed = c.seed;
  if (x.outcomes.empty())
    for (const auto& m : table.meta)
      if (m.dimension == Dimension::Mobility) x.outcomes.push_back(m.name);
  if (x.outcomes.empty()) throw Error(ErrorKind::Validation, "no Mobility factor to predict");
  const auto report = run_experiment(table, graph, x);
  io::write_text(c.at("experiment.csv").string(), io::experiment_csv(report));
  io::write_json(c.at("experiment_summary.json").string(), io::summary_to_json(summarize(report)));
  if (c.cfg.curve) {
    const auto& cs = *c.cfg.curve;
    const auto curve = epoch_curve(table, graph, cs.outcome, cs.strategy, cs.mlp, x.effects, derive_seed(c.seed, {4}));
    io::write_text(c.at("epoch_curve.csv").string(), io::epoch_curve_csv(curve));
  }
}

namespace detail {

inline std::string md_row(const std::vector<std::string>& cells) {
  std::string s = "|";
  for (const auto& c : cells) s += " " + c + " |";
  return s + "\n";
}

inline std::string md_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::string s = md_row(header);
  s += md_row(std::vector<std::string>(header.size(), "---"));
  for (const auto& r : rows) s += md_row(r);
  return s;
}

inline std::string num(const json& v) {
  if (v.is_number()) return format_double(v.get<double>());
  if (v.is_null()) return "";
  return v.is_string() ? v.get<std::string>() : v.dump();
}

}  // namespace detail

inline void cmd_report(Context& c) {
  const auto graph = c.load_graph();
  const auto effects = c.load_effects();
  const auto balance_text = io::read_text(c.require("balance.csv", "effects").string());
  const auto summary = io::read_json(c.require("experiment_summary.json", "predict").string());

  std::ostringstream md;
  md << "# Urban causal analysis summary\n\n## Causal order\n\n";
  const auto levels = causal_order(graph);
  std::vector<std::vector<std::string>> rows;
  for (std::size_t k = 0; k < levels.size(); ++k) rows.push_back({std::to_string(k + 1), io::join(levels[k], ',')});
  md << detail::md_table({"level", "factors"}, rows) << "\n## Edge effects\n\n";

  rows.clear();
  for (const auto& e : effects)
    rows.push_back({e.treatment + " -> " + e.outcome, e.error.empty() ? format_double(e.ate) : "", e.error.empty() ? format_double(e.p_value) : "",
                    std::to_string(e.n_pairs), e.significant ? "yes" : "no", e.error});
  md << detail::md_table({"edge", "ate", "p_value", "n_pairs", "significant", "error"}, rows);

  md << "\n## Significance matrix\n\nRows are causes, columns effects.\n\n";
  const auto sig = significance_matrix(graph, effects);
  std::vector<std::string> header{"cause"};
  for (const auto& n : graph.factor_names) header.push_back(n);
  rows.clear();
  for (Eigen::Index i = 0; i < sig.rows(); ++i) {
    std::vector<std::string> r{graph.factor_names[static_cast<std::size_t>(i)]};
    for (Eigen::Index j = 0; j < sig.cols(); ++j) r.push_back(sig(i, j) > 0 ? "+" : sig(i, j) < 0 ? "-" : "");
    rows.push_back(r);
  }
  md << detail::md_table(header, rows) << "\n## Confounder balance\n\n";

  rows.clear();
  std::istringstream bal(balance_text);
  std::string line;
  std::getline(bal, line);
  while (std::getline(bal, line))
    if (!line.empty()) rows.push_back(urbancausal::detail::split_csv_line(line));
  md << detail::md_table({"edge", "confounder", "rel_diff_before", "rel_diff_after"}, rows) << "\n## Prediction grid\n\n";

  const std::vector<std::string> grid_header{"outcome", "strategy", "predictor", "train_fraction", "count",
                                             "rmse_mean", "rmse_std",  "mae_mean",  "mae_std"};
  std::ostringstream csv;
  csv << io::join(grid_header, ',') << '\n';
  rows.clear();
  for (const auto& s : summary) {
    std::vector<std::string> r;
    for (const auto& key : grid_header) r.push_back(detail::num(s.at(key)));
    rows.push_back(r);
    std::vector<std::string> fields;
    for (const auto& f : r) fields.push_back(io::csv_field(f));
    csv << io::join(fields, ',') << '\n';
  }
  md << detail::md_table(grid_header, rows);
  io::write_text(c.at("summary.md").string(), md.str());
  io::write_text(c.at("summary.csv").string(), csv.str());
}

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

/// manifest.json accumulates one entry per stage; it is the only file that
/// carries timestamps.
inline void write_manifest(const Context& c, const std::string& command, double seconds) {
  const auto path = c.at("manifest.json");
  json m = json::object();
  if (fs::exists(path)) {
    try {
      m = json::parse(io::read_text(path.string()));
    } catch (const json::exception&) {
      m = json::object();
    }
  }
  m["version"] = kVersion;
  m["stages"][command] = {{"inputs", c.inputs},
                          {"seed", c.seed},
                          {"standardize", c.cfg.standardize},
                          {"wall_time_s", seconds},
                          {"finished_at", utc_now()}};
  io::write_json(path.string(), m);
}

inline void write_error(const fs::path& out, const std::string& command, const std::string& kind, const std::string& message,
                        int code) {
  std::error_code ec;
  if (out.empty() || !fs::is_directory(out, ec)) return;
  try {
    io::write_json((out / "error.json").string(),
                   {{"command", command}, {"kind", kind}, {"message", message}, {"exit_code", code}});
  } catch (const Error&) {
  }
}

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Causal discovery, effect estimation and prediction over urban factor tables", "urbancausal"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  bool no_standardize = false;
  app.add_option("--config", config_path, "JSON run config")->required();
  app.add_option("--out", out_dir, "output directory (overrides output_dir)");
  app.add_option("--seed", seed, "master seed (overrides seed)");
  app.add_flag("--no-standardize", no_standardize, "skip z-scoring the factor table");
  const std::vector<std::pair<const char*, void (*)(Context&)>> commands{{"synth", cmd_synth},
                                                                         {"discover", cmd_discover},
                                                                         {"effects", cmd_effects},
                                                                         {"predict", cmd_predict},
                                                                         {"report", cmd_report}};
  const std::vector<std::string> help{"generate synthetic SEM data", "learn a causal graph", "estimate per-edge effects",
                                      "run the prediction grid", "merge stage outputs into a summary"};
  for (std::size_t i = 0; i < commands.size(); ++i) app.add_subcommand(commands[i].first, help[i]);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  fs::path out_path = out_dir;
  try {
    const auto start = std::chrono::steady_clock::now();
    Context c;
    c.cfg = load_config(config_path);
    if (no_standardize) c.cfg.standardize = false;
    if (out_path.empty() && c.cfg.output_dir) out_path = *c.cfg.output_dir;
    if (out_path.empty()) throw Error(ErrorKind::Validation, "no output directory: pass --out or set output_dir");
    if (seed) c.cfg.seed = seed;
    if (!c.cfg.seed) throw Error(ErrorKind::Validation, "no seed: pass --seed or set seed");
    fs::create_directories(out_path);
    c.out = out_path;
    c.seed = *c.cfg.seed;
    c.inputs.push_back(fs::path(config_path).string());
    for (const auto& [name, fn] : commands)
      if (command == name) fn(c);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_manifest(c, command, seconds);
    std::error_code ec;
    fs::remove(out_path / "error.json", ec);
    out << command << ": wrote outputs to " << out_path.string() << "\n";
    return 0;
  } catch (const Error& e) {
    const int code = exit_code(e.kind());
    write_error(out_path, command, std::string(to_string(e.kind())), e.what(), code);
    err << "error: " << e.what() << "\n";
    return code;
  } catch (const std::exception& e) {
    write_error(out_path, command, "Internal", e.what(), 1);
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace urbancausal::cli
