#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "error.hpp"

namespace proxmed {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Column roles
// ---------------------------------------------------------------------------

enum class Role { outcome, treatment, mediator, covariate, treatment_proxy, outcome_proxy };

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::outcome: return "outcome";
    case Role::treatment: return "treatment";
    case Role::mediator: return "mediator";
    case Role::covariate: return "covariate";
    case Role::treatment_proxy: return "treatment_proxy";
    case Role::outcome_proxy: return "outcome_proxy";
  }
  return "?";
}

inline Role role_from_string(std::string_view s) {
  for (Role r : {Role::outcome, Role::treatment, Role::mediator, Role::covariate,
                 Role::treatment_proxy, Role::outcome_proxy}) {
    if (to_string(r) == s) return r;
  }
  throw ValidationError("unknown column role '" + std::string(s) + "'");
}

/// Column-name to role mapping. Order within a role is preserved.
struct ColumnSchema {
  std::vector<std::pair<std::string, Role>> columns;

  std::vector<std::string> names_with(Role r) const {
    std::vector<std::string> out;
    for (const auto& [name, role] : columns)
      if (role == r) out.push_back(name);
    return out;
  }

  void check() const {
    auto count = [&](Role r) { return names_with(r).size(); };
    if (count(Role::outcome) != 1) throw ValidationError("schema needs exactly one outcome column");
    if (count(Role::treatment) != 1) throw ValidationError("schema needs exactly one treatment column");
    if (count(Role::mediator) > 1)
      throw ValidationError("mediator must be scalar: schema lists " +
                            std::to_string(count(Role::mediator)) + " mediator columns");
    if (count(Role::mediator) != 1) throw ValidationError("schema needs exactly one mediator column");
    if (count(Role::treatment_proxy) < 1) throw ValidationError("schema needs at least one treatment_proxy column");
    if (count(Role::outcome_proxy) < 1) throw ValidationError("schema needs at least one outcome_proxy column");
  }

  /// Reads {"column": "role", ...}. JSON object order is not significant, so
  /// columns of one role are ordered by name.
  static ColumnSchema from_json(const nlohmann::json& j) {
    ColumnSchema s;
    for (const auto& [name, role] : j.items()) s.columns.emplace_back(name, role_from_string(role.get<std::string>()));
    s.check();
    return s;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, role] : columns) j[name] = std::string(to_string(role));
    return j;
  }

  /// Default naming convention: y, a, m, x*, z*, w*.
  static ColumnSchema infer(const std::vector<std::string>& header) {
    ColumnSchema s;
    for (const auto& h : header) {
      if (h == "y") s.columns.emplace_back(h, Role::outcome);
      else if (h == "a") s.columns.emplace_back(h, Role::treatment);
      else if (h == "m" || (h.size() > 1 && h[0] == 'm' && std::isdigit(static_cast<unsigned char>(h[1]))))
        s.columns.emplace_back(h, Role::mediator);
      else if (!h.empty() && h[0] == 'x') s.columns.emplace_back(h, Role::covariate);
      else if (!h.empty() && h[0] == 'z') s.columns.emplace_back(h, Role::treatment_proxy);
      else if (!h.empty() && h[0] == 'w') s.columns.emplace_back(h, Role::outcome_proxy);
    }
    s.check();
    return s;
  }
};

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// Observed sample (Y, A, M, X, Z, W). Immutable after construction by convention.
struct MediationDataset {
  VectorXd y, a, m;
  MatrixXd x, z, w;
  std::string y_name = "y", a_name = "a", m_name = "m";
  std::vector<std::string> x_names, z_names, w_names;

  Index n() const { return y.size(); }
  Index px() const { return x.cols(); }
  Index pz() const { return z.cols(); }
  Index pw() const { return w.cols(); }

  /// Total dimension of the four bridge parameter vectors.
  Index parameter_dimension() const { return 6 + 2 * pw() + 2 * pz() + 4 * px(); }

  MediationDataset rows(std::span<const Index> idx) const {
    MediationDataset out = *this;
    const auto k = static_cast<Index>(idx.size());
    out.y.resize(k);
    out.a.resize(k);
    out.m.resize(k);
    out.x.resize(k, px());
    out.z.resize(k, pz());
    out.w.resize(k, pw());
    for (Index r = 0; r < k; ++r) {
      const Index i = idx[static_cast<std::size_t>(r)];
      out.y(r) = y(i);
      out.a(r) = a(i);
      out.m(r) = m(i);
      out.x.row(r) = x.row(i);
      out.z.row(r) = z.row(i);
      out.w.row(r) = w.row(i);
    }
    return out;
  }

  static std::vector<std::string> default_names(char prefix, Index p) {
    std::vector<std::string> names;
    for (Index j = 0; j < p; ++j) names.push_back(std::string(1, prefix) + std::to_string(j + 1));
    return names;
  }

  void fill_default_names() {
    if (static_cast<Index>(x_names.size()) != px()) x_names = default_names('x', px());
    if (static_cast<Index>(z_names.size()) != pz()) z_names = default_names('z', pz());
    if (static_cast<Index>(w_names.size()) != pw()) w_names = default_names('w', pw());
  }
};

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

struct ValidationReport {
  struct Check {
    std::string name;
    bool passed = true;
    std::string detail;
  };
  std::vector<Check> checks;
  Index n_treated = 0;
  Index n_control = 0;

  bool ok() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
  }

  /// True when some failed check's detail starts with `detail`.
  bool has_failure(std::string_view detail) const {
    return std::any_of(checks.begin(), checks.end(),
                       [&](const Check& c) { return !c.passed && c.detail.starts_with(detail); });
  }

  std::string failures() const {
    std::string out;
    for (const auto& c : checks) {
      if (c.passed) continue;
      if (!out.empty()) out += "; ";
      out += c.detail;
    }
    return out;
  }
};

inline ValidationReport validate(const MediationDataset& d) {
  ValidationReport rep;
  const Index n = d.n();

  const bool shapes = d.a.size() == n && d.m.size() == n && d.x.rows() == n && d.z.rows() == n &&
                      d.w.rows() == n;
  rep.checks.push_back({"row counts", shapes, shapes ? "" : "columns have different row counts"});

  const bool non_empty = n > 0 && d.pz() > 0 && d.pw() > 0;
  rep.checks.push_back({"non-empty", non_empty, non_empty ? "" : "dataset has no rows or no proxies"});
  if (!shapes) return rep;

  std::string bad;
  auto scan = [&](const auto& v, const char* name) {
    if (bad.empty() && !v.allFinite()) bad = name;
  };
  scan(d.y, "y");
  scan(d.a, "a");
  scan(d.m, "m");
  scan(d.x, "x");
  scan(d.z, "z");
  scan(d.w, "w");
  rep.checks.push_back({"finite", bad.empty(), bad.empty() ? "" : "non-finite entry in " + bad});

  bool binary = true;
  for (Index i = 0; i < n; ++i) {
    if (d.a(i) == 1.0) ++rep.n_treated;
    else if (d.a(i) == 0.0) ++rep.n_control;
    else binary = false;
  }
  rep.checks.push_back({"treatment binary", binary, binary ? "" : "treatment not binary"});
  rep.checks.push_back({"control arm", rep.n_control > 0, rep.n_control > 0 ? "" : "control arm absent"});
  rep.checks.push_back({"treated arm", rep.n_treated > 0, rep.n_treated > 0 ? "" : "treated arm absent"});

  const Index need = std::max<Index>(10, d.parameter_dimension());
  const bool sizes = rep.n_control >= need && rep.n_treated >= need;
  rep.checks.push_back({"arm sizes", sizes,
                        sizes ? "" : "each arm needs at least " + std::to_string(need) + " rows"});
  return rep;
}

inline void require_valid(const MediationDataset& d) {
  const auto rep = validate(d);
  if (!rep.ok()) throw ValidationError("dataset failed validation: " + rep.failures());
}

// ---------------------------------------------------------------------------
// Feature maps
// ---------------------------------------------------------------------------

enum class Transform { identity, sqrt_abs };

/// Per-covariate transform applied to X before it enters a bridge.
struct FeatureMap {
  std::vector<Transform> columns;

  static FeatureMap identity(Index p) { return {std::vector<Transform>(static_cast<std::size_t>(p), Transform::identity)}; }
  static FeatureMap sqrt_abs(Index p) { return {std::vector<Transform>(static_cast<std::size_t>(p), Transform::sqrt_abs)}; }

  Index size() const { return static_cast<Index>(columns.size()); }

  bool is_identity() const {
    return std::all_of(columns.begin(), columns.end(), [](Transform t) { return t == Transform::identity; });
  }

  MatrixXd apply(const MatrixXd& x) const {
    if (x.cols() != size())
      throw ValidationError("feature map covers " + std::to_string(size()) + " columns, data has " +
                            std::to_string(x.cols()));
    MatrixXd out = x;
    for (Index j = 0; j < size(); ++j)
      if (columns[static_cast<std::size_t>(j)] == Transform::sqrt_abs) out.col(j) = x.col(j).cwiseAbs().cwiseSqrt();
    return out;
  }

  bool operator==(const FeatureMap&) const = default;
};

inline MediationDataset build_features(const MediationDataset& d, const FeatureMap& map) {
  MediationDataset out = d;
  out.x = map.apply(d.x);
  return out;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"'))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_cell(std::string_view cell, std::size_t row, std::string_view column) {
  double v = 0.0;
  const char* end = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (cell.empty() || ec != std::errc() || ptr != end)
    throw ValidationError("non-numeric cell '" + std::string(cell) + "' at data row " + std::to_string(row) +
                          ", column '" + std::string(column) + "'");
  return v;
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Reads a header-row CSV. With no schema, roles are inferred from column names.
inline MediationDataset load_csv(const std::filesystem::path& path,
                                 const std::optional<ColumnSchema>& schema = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty()) throw ValidationError("empty file '" + path.string() + "'");

  std::vector<std::string> header;
  for (auto h : detail::split(line)) header.emplace_back(h);
  const ColumnSchema s = schema ? *schema : ColumnSchema::infer(header);
  s.check();

  std::map<std::string, std::size_t> position;
  for (std::size_t j = 0; j < header.size(); ++j) position[header[j]] = j;
  auto locate = [&](const std::string& name) {
    auto it = position.find(name);
    if (it == position.end()) throw ValidationError("missing column '" + name + "'");
    return it->second;
  };

  const auto y_col = locate(s.names_with(Role::outcome).front());
  const auto a_col = locate(s.names_with(Role::treatment).front());
  const auto m_col = locate(s.names_with(Role::mediator).front());
  std::vector<std::size_t> x_cols, z_cols, w_cols;
  for (const auto& nm : s.names_with(Role::covariate)) x_cols.push_back(locate(nm));
  for (const auto& nm : s.names_with(Role::treatment_proxy)) z_cols.push_back(locate(nm));
  for (const auto& nm : s.names_with(Role::outcome_proxy)) w_cols.push_back(locate(nm));

  std::vector<std::vector<double>> rows;
  std::size_t row_no = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++row_no;
    const auto cells = detail::split(line);
    if (cells.size() != header.size())
      throw ValidationError("data row " + std::to_string(row_no) + " has " + std::to_string(cells.size()) +
                            " cells, header has " + std::to_string(header.size()));
    std::vector<double> vals(cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j) {
      const bool used = j == y_col || j == a_col || j == m_col ||
                        std::find(x_cols.begin(), x_cols.end(), j) != x_cols.end() ||
                        std::find(z_cols.begin(), z_cols.end(), j) != z_cols.end() ||
                        std::find(w_cols.begin(), w_cols.end(), j) != w_cols.end();
      vals[j] = used ? detail::parse_cell(cells[j], row_no, header[j]) : 0.0;
    }
    if (vals[a_col] != 0.0 && vals[a_col] != 1.0)
      throw ValidationError("treatment not binary: value " + detail::format_double(vals[a_col]) + " at data row " +
                            std::to_string(row_no));
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw ValidationError("empty file '" + path.string() + "': no data rows");

  const auto n = static_cast<Index>(rows.size());
  MediationDataset d;
  d.y.resize(n);
  d.a.resize(n);
  d.m.resize(n);
  d.x.resize(n, static_cast<Index>(x_cols.size()));
  d.z.resize(n, static_cast<Index>(z_cols.size()));
  d.w.resize(n, static_cast<Index>(w_cols.size()));
  for (Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    d.y(i) = r[y_col];
    d.a(i) = r[a_col];
    d.m(i) = r[m_col];
    for (std::size_t j = 0; j < x_cols.size(); ++j) d.x(i, static_cast<Index>(j)) = r[x_cols[j]];
    for (std::size_t j = 0; j < z_cols.size(); ++j) d.z(i, static_cast<Index>(j)) = r[z_cols[j]];
    for (std::size_t j = 0; j < w_cols.size(); ++j) d.w(i, static_cast<Index>(j)) = r[w_cols[j]];
  }
  d.y_name = header[y_col];
  d.a_name = header[a_col];
  d.m_name = header[m_col];
  d.x_names = s.names_with(Role::covariate);
  d.z_names = s.names_with(Role::treatment_proxy);
  d.w_names = s.names_with(Role::outcome_proxy);
  return d;
}

/// Writes columns in (Y, A, M, X, Z, W) order using shortest round-trip decimals.
inline void write_csv(const MediationDataset& data, const std::filesystem::path& path) {
  MediationDataset d = data;
  d.fill_default_names();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out << d.y_name << ',' << d.a_name << ',' << d.m_name;
  for (const auto& nm : d.x_names) out << ',' << nm;
  for (const auto& nm : d.z_names) out << ',' << nm;
  for (const auto& nm : d.w_names) out << ',' << nm;
  out << '\n';
  std::string line;
  for (Index i = 0; i < d.n(); ++i) {
    line = detail::format_double(d.y(i));
    line += ',' + detail::format_double(d.a(i));
    line += ',' + detail::format_double(d.m(i));
    for (Index j = 0; j < d.px(); ++j) line += ',' + detail::format_double(d.x(i, j));
    for (Index j = 0; j < d.pz(); ++j) line += ',' + detail::format_double(d.z(i, j));
    for (Index j = 0; j < d.pw(); ++j) line += ',' + detail::format_double(d.w(i, j));
    out << line << '\n';
  }
  if (!out) throw ValidationError("failed writing '" + path.string() + "'");
}

}  // namespace proxmed
