#pragma once

// Region x factor tables: ingestion, standardization, quantile treatment
// levels and pairwise correlation diagnostics.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>
#include <boost/tokenizer.hpp>

#include "urbancausal/error.hpp"
#include "urbancausal/stats.hpp"

namespace urbancausal {

enum class Dimension { Citizens, Locations, Mobility };

constexpr std::string_view to_string(Dimension d) {
  switch (d) {
    case Dimension::Citizens: return "Citizens";
    case Dimension::Locations: return "Locations";
    case Dimension::Mobility: return "Mobility";
  }
  return "";
}

inline Dimension parse_dimension(std::string_view s) {
  if (s == "Citizens") return Dimension::Citizens;
  if (s == "Locations") return Dimension::Locations;
  if (s == "Mobility") return Dimension::Mobility;
  throw Error(ErrorKind::Validation, "unknown dimension '" + std::string(s) + "'");
}

struct FactorMeta {
  std::string name;
  Dimension dimension = Dimension::Citizens;
  std::string description;
};

/// The 16 factors of the census-tract schema, grouped by dimension.
inline std::vector<FactorMeta> urban_schema() {
  using D = Dimension;
  return {
      {"Total population", D::Citizens, "Residents in the region"},
      {"Male rate", D::Citizens, "Share of male residents"},
      {"Female rate", D::Citizens, "Share of female residents"},
      {"Minors rate", D::Citizens, "Share of residents under 18"},
      {"Elders rate", D::Citizens, "Share of residents 65 and over"},
      {"Median age", D::Citizens, "Median resident age"},
      {"Poverty level", D::Citizens, "Share of residents below the poverty line"},
      {"Transport", D::Locations, "Transport locations"},
      {"Entertainment", D::Locations, "Entertainment locations"},
      {"Catering", D::Locations, "Catering locations"},
      {"Education", D::Locations, "Education locations"},
      {"Service", D::Locations, "Service locations"},
      {"Shopping", D::Locations, "Shopping locations"},
      {"Proportion of people traveling by public transport", D::Mobility, "Public transport commute share"},
      {"Mean travel time to work", D::Mobility, "Mean commute time"},
      {"Population mobility", D::Mobility, "Origin-destination flow volume"},
  };
}

struct FactorTable {
  Eigen::MatrixXd values;  // n x d
  std::vector<FactorMeta> meta;
  std::vector<std::string> region_ids;
  std::size_t dropped_rows = 0;

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(values.cols()); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(meta.size());
    for (const auto& m : meta) out.push_back(m.name);
    return out;
  }

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t i = 0; i < meta.size(); ++i)
      if (meta[i].name == name) return i;
    return std::nullopt;
  }

  std::size_t index_of(std::string_view name) const {
    if (auto i = find(name)) return *i;
    throw Error(ErrorKind::UnknownFactor, std::string(name));
  }

  std::vector<double> column(std::size_t j) const {
    std::vector<double> out(rows());
    Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size())) = values.col(static_cast<Eigen::Index>(j));
    return out;
  }
};

/// Checks the structural invariants; throws on the first violation.
inline void validate(const FactorTable& t) {
  if (t.meta.size() != t.cols())
    throw Error(ErrorKind::DimensionMismatch, "meta has " + std::to_string(t.meta.size()) + " entries for " +
                                                  std::to_string(t.cols()) + " columns");
  if (t.region_ids.size() != t.rows())
    throw Error(ErrorKind::DimensionMismatch, "region_ids length does not match row count");
  std::unordered_set<std::string> seen;
  for (const auto& m : t.meta)
    if (!seen.insert(m.name).second) throw Error(ErrorKind::Validation, "duplicate factor name '" + m.name + "'");
  seen.clear();
  for (const auto& r : t.region_ids)
    if (!seen.insert(r).second) throw Error(ErrorKind::Validation, "duplicate region id '" + r + "'");
  if (!t.values.allFinite()) throw Error(ErrorKind::Validation, "table contains non-finite values");
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  using Sep = boost::escaped_list_separator<char>;
  boost::tokenizer<Sep> tok(line, Sep('\\', ',', '"'));
  std::vector<std::string> out;
  for (const auto& f : tok) out.push_back(trim(f));
  return out;
}

inline bool is_missing_token(std::string_view s) {
  return s.empty() || s == "NA" || s == "na" || s == "NaN" || s == "nan" || s == "null" || s == "NULL";
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return v;
}

}  // namespace detail

/// Parses CSV text with a `region_id` column and one numeric column per
/// schema entry. Extra columns are ignored; rows with a missing or
/// non-finite cell are dropped and counted in `dropped_rows`.
inline FactorTable parse_factor_table(std::istream& in, const std::vector<FactorMeta>& schema) {
  if (schema.size() < 2) throw Error(ErrorKind::Validation, "schema needs at least 2 factors");
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::EmptyTable, "missing header row");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  const auto header = detail::split_csv_line(line);

  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < header.size(); ++i) position.emplace(header[i], i);
  auto locate = [&](const std::string& name) {
    auto it = position.find(name);
    if (it == position.end()) throw Error(ErrorKind::MissingColumn, name);
    return it->second;
  };
  const std::size_t id_col = locate("region_id");
  std::vector<std::size_t> cols;
  for (const auto& m : schema) cols.push_back(locate(m.name));

  std::vector<std::vector<double>> rows;
  std::vector<std::string> ids;
  std::size_t dropped = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv_line(line);
    std::vector<double> row(schema.size());
    bool missing = false;
    for (std::size_t j = 0; j < cols.size(); ++j) {
      if (cols[j] >= fields.size() || detail::is_missing_token(fields[cols[j]])) {
        missing = true;
        continue;
      }
      auto v = detail::parse_double(fields[cols[j]]);
      if (!v)
        throw Error(ErrorKind::NonNumericCell, "row " + std::to_string(line_no) + ", column '" + schema[j].name +
                                                   "': '" + fields[cols[j]] + "'");
      if (!std::isfinite(*v)) missing = true;
      row[j] = *v;
    }
    if (missing || id_col >= fields.size()) {
      ++dropped;
      continue;
    }
    rows.push_back(std::move(row));
    ids.push_back(fields[id_col]);
  }
  if (rows.empty()) throw Error(ErrorKind::EmptyTable, "no complete rows");
  if (rows.size() < 2) throw Error(ErrorKind::TooFewRows, "need at least 2 complete rows");

  FactorTable t;
  t.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(schema.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < schema.size(); ++j)
      t.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  t.meta = schema;
  t.region_ids = std::move(ids);
  t.dropped_rows = dropped;
  validate(t);
  return t;
}

inline FactorTable load_factor_table(const std::string& path, const std::vector<FactorMeta>& schema) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  return parse_factor_table(in, schema);
}

/// Shortest round-trip decimal form; stable across runs.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline void write_factor_table(std::ostream& out, const FactorTable& t) {
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += (c == '"') ? std::string("\\\"") : std::string(1, c);
    return q + "\"";
  };
  out << "region_id";
  for (const auto& m : t.meta) out << ',' << quote(m.name);
  out << '\n';
  for (std::size_t i = 0; i < t.rows(); ++i) {
    out << quote(t.region_ids[i]);
    for (std::size_t j = 0; j < t.cols(); ++j)
      out << ',' << format_double(t.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    out << '\n';
  }
}

/// Z-scores every column with the population (1/n) standard deviation.
inline FactorTable standardize(const FactorTable& table) {
  FactorTable out = table;
  const auto n = static_cast<double>(table.rows());
  for (Eigen::Index j = 0; j < table.values.cols(); ++j) {
    auto col = out.values.col(j);
    const double m = col.mean();
    col.array() -= m;
    const double sd = std::sqrt(col.squaredNorm() / n);
    if (!(sd > 1e-12 * std::max(1.0, std::fabs(m))))
      throw Error(ErrorKind::ZeroVariance, table.meta[static_cast<std::size_t>(j)].name);
    col /= sd;
  }
  return out;
}

inline FactorTable subset_rows(const FactorTable& table, std::span<const std::size_t> rows) {
  FactorTable out;
  out.meta = table.meta;
  out.values.resize(static_cast<Eigen::Index>(rows.size()), table.values.cols());
  out.region_ids.reserve(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.values.row(static_cast<Eigen::Index>(k)) = table.values.row(static_cast<Eigen::Index>(rows[k]));
    out.region_ids.push_back(table.region_ids[rows[k]]);
  }
  return out;
}

struct TreatmentAssignment {
  std::vector<int> levels;  // 1..k
  int k = 4;
  std::size_t factor_index = 0;

  std::size_t size() const { return levels.size(); }
  std::vector<std::size_t> counts() const {
    std::vector<std::size_t> c(static_cast<std::size_t>(k), 0);
    for (int l : levels) ++c[static_cast<std::size_t>(l - 1)];
    return c;
  }
};

/// Rank-based equal-size buckets: rank r (0-based, ascending value, ties in
/// original row order) gets level floor(r*k/n)+1, so bucket sizes differ by
/// at most one.
inline TreatmentAssignment quantile_levels(std::span<const double> values, int k, std::size_t factor_index = 0) {
  if (k < 2) throw Error(ErrorKind::Validation, "k must be at least 2");
  const std::size_t n = values.size();
  if (n < static_cast<std::size_t>(k))
    throw Error(ErrorKind::TooFewRows, std::to_string(n) + " rows for " + std::to_string(k) + " levels");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  TreatmentAssignment t;
  t.k = k;
  t.factor_index = factor_index;
  t.levels.resize(n);
  for (std::size_t r = 0; r < n; ++r)
    t.levels[order[r]] = static_cast<int>(r * static_cast<std::size_t>(k) / n) + 1;
  return t;
}

struct CorrelationResult {
  Eigen::MatrixXd r;  // Pearson coefficients
  Eigen::MatrixXd p;  // two-sided p-values, t with n-2 dof
};

inline CorrelationResult correlation_matrix(const FactorTable& table) {
  const FactorTable z = standardize(table);
  const auto n = static_cast<double>(table.rows());
  const auto d = static_cast<Eigen::Index>(table.cols());
  CorrelationResult out;
  out.r = (z.values.transpose() * z.values) / n;
  out.p.resize(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    out.r(i, i) = 1.0;
    out.p(i, i) = 0.0;
    for (Eigen::Index j = 0; j < i; ++j) {
      const double r = std::clamp(0.5 * (out.r(i, j) + out.r(j, i)), -1.0, 1.0);
      out.r(i, j) = out.r(j, i) = r;
      out.p(i, j) = out.p(j, i) = stats::pearson_p_value(r, table.rows());
    }
  }
  return out;
}

}  // namespace urbancausal
