#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "data.hpp"
#include "error.hpp"
#include "rng.hpp"

namespace proxmed {

// Finite law over (U, A, Z, W, M, Y), built from structural conditionals:
//   P(u) P(A=a|u) P(z|u,a) P(w|u) P(m|a,u) P(y|a,m,u,w)
// so Z depends only on (U, A), W only on U, and nothing downstream depends on Z.

using Table1 = std::vector<double>;
using Table2 = std::vector<Table1>;
using Table3 = std::vector<Table2>;
using Table4 = std::vector<Table3>;
using Table5 = std::vector<Table4>;

struct DiscreteLaw {
  Table1 p_u;        // [u]
  Table1 p_a1_u;     // [u] P(A=1|u)
  Table3 p_z;        // [u][a][z]
  Table2 p_w;        // [u][w]
  Table3 p_m;        // [a][u][m]
  Table5 p_y;        // [a][m][u][w][y]
  Table1 y_values;   // [y]

  int du() const { return static_cast<int>(p_u.size()); }
  int dz() const { return p_z.empty() || p_z[0].empty() ? 0 : static_cast<int>(p_z[0][0].size()); }
  int dw() const { return p_w.empty() ? 0 : static_cast<int>(p_w[0].size()); }
  int dm() const { return p_m.empty() || p_m[0].empty() ? 0 : static_cast<int>(p_m[0][0].size()); }
  int dy() const { return static_cast<int>(y_values.size()); }

  /// Joint probability P(u, a, z, w, m, y).
  double joint(int u, int a, int z, int w, int m, int y) const {
    const double pa = a ? p_a1_u[u] : 1.0 - p_a1_u[u];
    return p_u[u] * pa * p_z[u][a][z] * p_w[u][w] * p_m[a][u][m] * p_y[a][m][u][w][y];
  }

  void check() const {
    auto dist = [](const Table1& p, int size, const std::string& what) {
      if (static_cast<int>(p.size()) != size) throw ValidationError(what + " has wrong support size");
      double s = 0;
      for (double v : p) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError(what + " has a negative or non-finite entry");
        s += v;
      }
      if (std::abs(s - 1.0) > 1e-12) throw ValidationError(what + " does not sum to 1");
    };
    for (int d : {du(), dz(), dw(), dm(), dy()})
      if (d < 1 || d > 4) throw ValidationError("support sizes must lie in 1..4");
    dist(p_u, du(), "P(U)");
    if (static_cast<int>(p_a1_u.size()) != du()) throw ValidationError("P(A=1|U) has wrong size");
    for (double p : p_a1_u)
      if (!(p > 0.0 && p < 1.0)) throw ValidationError("P(A=1|U) must lie strictly inside (0, 1)");
    if (static_cast<int>(p_z.size()) != du() || static_cast<int>(p_w.size()) != du())
      throw ValidationError("proxy tables have wrong U dimension");
    if (static_cast<int>(p_m.size()) != 2 || static_cast<int>(p_y.size()) != 2)
      throw ValidationError("treatment must be binary");
    for (int u = 0; u < du(); ++u) {
      dist(p_w[u], dw(), "P(W|U)");
      if (p_z[u].size() != 2) throw ValidationError("P(Z|U,A) needs both treatment levels");
      for (int a = 0; a < 2; ++a) dist(p_z[u][a], dz(), "P(Z|U,A)");
    }
    for (int a = 0; a < 2; ++a) {
      if (static_cast<int>(p_m[a].size()) != du() || static_cast<int>(p_y[a].size()) != dm())
        throw ValidationError("mediator or outcome table has wrong shape");
      for (int u = 0; u < du(); ++u) dist(p_m[a][u], dm(), "P(M|A,U)");
      for (int m = 0; m < dm(); ++m) {
        if (static_cast<int>(p_y[a][m].size()) != du()) throw ValidationError("P(Y|A,M,U,W) has wrong shape");
        for (int u = 0; u < du(); ++u) {
          if (static_cast<int>(p_y[a][m][u].size()) != dw()) throw ValidationError("P(Y|A,M,U,W) has wrong shape");
          for (int w = 0; w < dw(); ++w) dist(p_y[a][m][u][w], dy(), "P(Y|A,M,U,W)");
        }
      }
    }
    for (double y : y_values)
      if (!std::isfinite(y)) throw ValidationError("outcome support must be finite");
  }

  NLOHMANN_DEFINE_TYPE_INTRUSIVE(DiscreteLaw, p_u, p_a1_u, p_z, p_w, p_m, p_y, y_values)
};

/// Full joint table indexed [u][a][z][w][m][y], flattened.
class JointTable {
 public:
  explicit JointTable(const DiscreteLaw& law)
      : du_(law.du()), dz_(law.dz()), dw_(law.dw()), dm_(law.dm()), dy_(law.dy()), y_(law.y_values) {
    p_.resize(static_cast<std::size_t>(du_ * 2 * dz_ * dw_ * dm_ * dy_));
    for (int u = 0; u < du_; ++u)
      for (int a = 0; a < 2; ++a)
        for (int z = 0; z < dz_; ++z)
          for (int w = 0; w < dw_; ++w)
            for (int m = 0; m < dm_; ++m)
              for (int y = 0; y < dy_; ++y) p_[idx(u, a, z, w, m, y)] = law.joint(u, a, z, w, m, y);
  }

  /// Sum of P (times y when `weight_y`) over cells where every fixed index matches; -1 means free.
  double sum(int u, int a, int z, int w, int m, bool weight_y = false) const {
    double s = 0;
    for (int uu = 0; uu < du_; ++uu) {
      if (u >= 0 && uu != u) continue;
      for (int aa = 0; aa < 2; ++aa) {
        if (a >= 0 && aa != a) continue;
        for (int zz = 0; zz < dz_; ++zz) {
          if (z >= 0 && zz != z) continue;
          for (int ww = 0; ww < dw_; ++ww) {
            if (w >= 0 && ww != w) continue;
            for (int mm = 0; mm < dm_; ++mm) {
              if (m >= 0 && mm != m) continue;
              for (int yy = 0; yy < dy_; ++yy) s += p_[idx(uu, aa, zz, ww, mm, yy)] * (weight_y ? y_[yy] : 1.0);
            }
          }
        }
      }
    }
    return s;
  }

  double total() const { return sum(-1, -1, -1, -1, -1); }

 private:
  std::size_t idx(int u, int a, int z, int w, int m, int y) const {
    return static_cast<std::size_t>(((((u * 2 + a) * dz_ + z) * dw_ + w) * dm_ + m) * dy_ + y);
  }
  int du_, dz_, dw_, dm_, dy_;
  Table1 y_;
  std::vector<double> p_;
};

// ---------------------------------------------------------------------------
// Ground truth
// ---------------------------------------------------------------------------

/// Latent g-formula sum_u sum_m E[Y|u,A=1,m] P(m|u,A=0) P(u), with the
/// conditionals read off the full joint table.
inline double true_psi_brute(const DiscreteLaw& law) {
  law.check();
  const JointTable t(law);
  double psi = 0;
  for (int u = 0; u < law.du(); ++u) {
    const double pu = t.sum(u, -1, -1, -1, -1);
    const double pu0 = t.sum(u, 0, -1, -1, -1);
    for (int m = 0; m < law.dm(); ++m) {
      const double p_m_given_u0 = t.sum(u, 0, -1, -1, m) / pu0;
      const double ey = t.sum(u, 1, -1, -1, m, true) / t.sum(u, 1, -1, -1, m);
      psi += ey * p_m_given_u0 * pu;
    }
  }
  return psi;
}

/// Distribution of Y{1,M(0)} by enumerating the structural draws (u, w, M(0), Y).
inline Table1 counterfactual_distribution(const DiscreteLaw& law) {
  law.check();
  Table1 dist(static_cast<std::size_t>(law.dy()), 0.0);
  for (int u = 0; u < law.du(); ++u)
    for (int w = 0; w < law.dw(); ++w)
      for (int m0 = 0; m0 < law.dm(); ++m0)
        for (int y = 0; y < law.dy(); ++y)
          dist[y] += law.p_u[u] * law.p_w[u][w] * law.p_m[0][u][m0] * law.p_y[1][m0][u][w][y];
  return dist;
}

inline double true_psi_enumerated(const DiscreteLaw& law) {
  const auto dist = counterfactual_distribution(law);
  double psi = 0;
  for (int y = 0; y < law.dy(); ++y) psi += dist[y] * law.y_values[y];
  return psi;
}

/// Standard mediation formula sum_m E[Y|A=1,m] P(m|A=0), valid without latent confounding.
inline double mediation_formula(const DiscreteLaw& law) {
  law.check();
  const JointTable t(law);
  const double p0 = t.sum(-1, 0, -1, -1, -1);
  double psi = 0;
  for (int m = 0; m < law.dm(); ++m)
    psi += t.sum(-1, 1, -1, -1, m, true) / t.sum(-1, 1, -1, -1, m) * t.sum(-1, 0, -1, -1, m) / p0;
  return psi;
}

// ---------------------------------------------------------------------------
// Bridge equations
// ---------------------------------------------------------------------------

struct LinearCell {
  std::string name;
  MatrixXd matrix;  // rows: conditioning values, cols: unknowns
  VectorXd rhs;
};

struct CellDiagnostics {
  std::string name;
  int rows = 0, cols = 0, rank = 0;
  double condition = 0;
  bool complete = false;  // rank >= |U|
};

struct IdentificationResult {
  double psi_true = 0, psi_true_enumerated = 0;
  double psi_h = 0, psi_hybrid = 0, psi_q = 0;
  Table2 h1;  // [m][w]
  Table1 h0;  // [w]
  Table1 q0;  // [z]
  Table2 q1;  // [m][z]
  double max_residual = 0;
  std::vector<CellDiagnostics> cells;
};

namespace detail {

inline constexpr double kRankTol = 1e-10;

inline CellDiagnostics diagnose(const LinearCell& c, int du) {
  CellDiagnostics d;
  d.name = c.name;
  d.rows = static_cast<int>(c.matrix.rows());
  d.cols = static_cast<int>(c.matrix.cols());
  Eigen::JacobiSVD<MatrixXd> svd(c.matrix);
  const auto& s = svd.singularValues();
  for (Index k = 0; k < s.size(); ++k)
    if (s(k) > kRankTol * s(0)) ++d.rank;
  d.condition = d.rank ? s(0) / s(d.rank - 1) : std::numeric_limits<double>::infinity();
  if (d.rank < static_cast<int>(s.size())) d.condition = std::numeric_limits<double>::infinity();
  d.complete = d.rank >= du;
  return d;
}

/// Minimum-norm solution plus `shift` times the normalized sum of the null-space basis.
inline VectorXd solve_cell(const LinearCell& c, int du, double shift, double& residual) {
  const auto diag = diagnose(c, du);
  if (!diag.complete)
    throw CompletenessError("completeness violated in " + c.name + ": rank " + std::to_string(diag.rank) + " < |U| = " +
                                std::to_string(du),
                            c.name);
  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(c.matrix);
  cod.setThreshold(kRankTol);
  VectorXd x = cod.solve(c.rhs);
  if (shift != 0.0 && diag.rank < diag.cols) {
    Eigen::JacobiSVD<MatrixXd> svd(c.matrix, Eigen::ComputeFullV);
    const MatrixXd v = svd.matrixV();
    VectorXd nv = v.rightCols(diag.cols - diag.rank).rowwise().sum();
    x += shift * nv.normalized();
  }
  const double r = (c.matrix * x - c.rhs).lpNorm<Eigen::Infinity>();
  if (r > 1e-9) throw CompletenessError("bridge equation has no solution in " + c.name, c.name);
  residual = std::max(residual, r);
  return x;
}

inline std::string cell_name(const std::string& bridge, int m) {
  return m < 0 ? bridge + " (A=" + (bridge == "h1" || bridge == "q1" ? "1" : "0") + ")"
               : bridge + " (A=" + (bridge == "h1" || bridge == "q1" ? "1" : "0") + ", m=" + std::to_string(m) + ")";
}

// Cell builders. Conditioning values with zero probability carry no equation.

inline LinearCell h1_cell(const DiscreteLaw& law, const JointTable& t, int m) {
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> rhs;
  for (int z = 0; z < law.dz(); ++z) {
    const double pc = t.sum(-1, 1, z, -1, m);
    if (pc <= 0) continue;
    Eigen::RowVectorXd r(law.dw());
    for (int w = 0; w < law.dw(); ++w) r(w) = t.sum(-1, 1, z, w, m) / pc;
    rows.push_back(r);
    rhs.push_back(t.sum(-1, 1, z, -1, m, true) / pc);
  }
  LinearCell c{cell_name("h1", m), MatrixXd(static_cast<Index>(rows.size()), law.dw()), VectorXd(rows.size())};
  for (std::size_t k = 0; k < rows.size(); ++k) {
    c.matrix.row(static_cast<Index>(k)) = rows[k];
    c.rhs(static_cast<Index>(k)) = rhs[k];
  }
  return c;
}

inline LinearCell h0_cell(const DiscreteLaw& law, const JointTable& t, const Table2& h1) {
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> rhs;
  for (int z = 0; z < law.dz(); ++z) {
    const double pc = t.sum(-1, 0, z, -1, -1);
    if (pc <= 0) continue;
    Eigen::RowVectorXd r(law.dw());
    double b = 0;
    for (int w = 0; w < law.dw(); ++w) {
      r(w) = t.sum(-1, 0, z, w, -1) / pc;
      for (int m = 0; m < law.dm(); ++m) b += h1[m][w] * t.sum(-1, 0, z, w, m) / pc;
    }
    rows.push_back(r);
    rhs.push_back(b);
  }
  LinearCell c{cell_name("h0", -1), MatrixXd(static_cast<Index>(rows.size()), law.dw()), VectorXd(rows.size())};
  for (std::size_t k = 0; k < rows.size(); ++k) {
    c.matrix.row(static_cast<Index>(k)) = rows[k];
    c.rhs(static_cast<Index>(k)) = rhs[k];
  }
  return c;
}

inline LinearCell q0_cell(const DiscreteLaw& law, const JointTable& t) {
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> rhs;
  for (int w = 0; w < law.dw(); ++w) {
    const double pc = t.sum(-1, 0, -1, w, -1);
    if (pc <= 0) continue;
    Eigen::RowVectorXd r(law.dz());
    for (int z = 0; z < law.dz(); ++z) r(z) = t.sum(-1, 0, z, w, -1) / pc;
    rows.push_back(r);
    rhs.push_back(t.sum(-1, -1, -1, w, -1) / pc);
  }
  LinearCell c{cell_name("q0", -1), MatrixXd(static_cast<Index>(rows.size()), law.dz()), VectorXd(rows.size())};
  for (std::size_t k = 0; k < rows.size(); ++k) {
    c.matrix.row(static_cast<Index>(k)) = rows[k];
    c.rhs(static_cast<Index>(k)) = rhs[k];
  }
  return c;
}

inline LinearCell q1_cell(const DiscreteLaw& law, const JointTable& t, const Table1& q0, int m) {
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> rhs;
  for (int w = 0; w < law.dw(); ++w) {
    const double p1 = t.sum(-1, 1, -1, w, m), p0 = t.sum(-1, 0, -1, w, m);
    if (p1 <= 0 || p0 <= 0) continue;
    Eigen::RowVectorXd r(law.dz());
    double eq0 = 0;
    for (int z = 0; z < law.dz(); ++z) {
      r(z) = t.sum(-1, 1, z, w, m) / p1;
      eq0 += q0[z] * t.sum(-1, 0, z, w, m) / p0;
    }
    rows.push_back(r);
    rhs.push_back(eq0 * p0 / p1);
  }
  LinearCell c{cell_name("q1", m), MatrixXd(static_cast<Index>(rows.size()), law.dz()), VectorXd(rows.size())};
  for (std::size_t k = 0; k < rows.size(); ++k) {
    c.matrix.row(static_cast<Index>(k)) = rows[k];
    c.rhs(static_cast<Index>(k)) = rhs[k];
  }
  return c;
}

inline Table1 to_table(const VectorXd& v) { return Table1(v.data(), v.data() + v.size()); }

}  // namespace detail

/// Solves the four bridge equations cell by cell and evaluates the three
/// identification formulas. A nonzero `nullspace_shift` moves every
/// non-unique solution along its null space.
inline IdentificationResult solve_bridges_discrete(const DiscreteLaw& law, double nullspace_shift = 0.0) {
  law.check();
  const JointTable t(law);
  const int du = law.du();
  IdentificationResult res;
  res.psi_true = true_psi_brute(law);
  res.psi_true_enumerated = true_psi_enumerated(law);

  res.h1.resize(static_cast<std::size_t>(law.dm()));
  for (int m = 0; m < law.dm(); ++m) {
    const auto c = detail::h1_cell(law, t, m);
    res.cells.push_back(detail::diagnose(c, du));
    res.h1[m] = detail::to_table(detail::solve_cell(c, du, nullspace_shift, res.max_residual));
  }
  const auto c0 = detail::h0_cell(law, t, res.h1);
  res.cells.push_back(detail::diagnose(c0, du));
  res.h0 = detail::to_table(detail::solve_cell(c0, du, nullspace_shift, res.max_residual));

  const auto cq0 = detail::q0_cell(law, t);
  res.cells.push_back(detail::diagnose(cq0, du));
  res.q0 = detail::to_table(detail::solve_cell(cq0, du, nullspace_shift, res.max_residual));
  res.q1.resize(static_cast<std::size_t>(law.dm()));
  for (int m = 0; m < law.dm(); ++m) {
    const auto c = detail::q1_cell(law, t, res.q0, m);
    res.cells.push_back(detail::diagnose(c, du));
    res.q1[m] = detail::to_table(detail::solve_cell(c, du, nullspace_shift, res.max_residual));
  }

  for (int w = 0; w < law.dw(); ++w) res.psi_h += t.sum(-1, -1, -1, w, -1) * res.h0[w];
  for (int z = 0; z < law.dz(); ++z)
    for (int w = 0; w < law.dw(); ++w)
      for (int m = 0; m < law.dm(); ++m) res.psi_hybrid += t.sum(-1, 0, z, w, m) * res.q0[z] * res.h1[m][w];
  for (int z = 0; z < law.dz(); ++z)
    for (int m = 0; m < law.dm(); ++m) res.psi_q += t.sum(-1, 1, z, -1, m, true) * res.q1[m][z];
  return res;
}

// ---------------------------------------------------------------------------
// Completeness diagnostics
// ---------------------------------------------------------------------------

struct CompletenessReport {
  std::vector<CellDiagnostics> cells;
  bool order_condition = false;  // min(|Z|, |W|) >= |U|
  bool ok() const {
    if (!order_condition) return false;
    for (const auto& c : cells)
      if (!c.complete) return false;
    return true;
  }
  std::vector<std::string> failures() const {
    std::vector<std::string> out;
    if (!order_condition) out.push_back("order condition: min(|Z|, |W|) < |U|");
    for (const auto& c : cells)
      if (!c.complete) out.push_back(c.name + ": rank " + std::to_string(c.rank));
    return out;
  }
};

/// Rank and condition number of the observable transition matrices
/// P(W|Z,A=1,m), P(W|Z,A=0), P(Z|W,A=0) and P(Z|W,A=1,m).
inline CompletenessReport completeness_check(const DiscreteLaw& law) {
  law.check();
  const JointTable t(law);
  const int du = law.du();
  CompletenessReport rep;
  rep.order_condition = std::min(law.dz(), law.dw()) >= du;
  const Table2 zeros_h1(static_cast<std::size_t>(law.dm()), Table1(static_cast<std::size_t>(law.dw()), 0.0));
  const Table1 zeros_q0(static_cast<std::size_t>(law.dz()), 0.0);
  for (int m = 0; m < law.dm(); ++m) rep.cells.push_back(detail::diagnose(detail::h1_cell(law, t, m), du));
  rep.cells.push_back(detail::diagnose(detail::h0_cell(law, t, zeros_h1), du));
  rep.cells.push_back(detail::diagnose(detail::q0_cell(law, t), du));
  for (int m = 0; m < law.dm(); ++m) rep.cells.push_back(detail::diagnose(detail::q1_cell(law, t, zeros_q0, m), du));
  return rep;
}

inline nlohmann::json to_json(const CompletenessReport& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells)
    cells.push_back({{"cell", c.name},
                     {"rows", c.rows},
                     {"cols", c.cols},
                     {"rank", c.rank},
                     {"condition", std::isfinite(c.condition) ? nlohmann::json(c.condition) : nlohmann::json(nullptr)},
                     {"complete", c.complete}});
  return {{"order_condition", r.order_condition}, {"ok", r.ok()}, {"cells", cells}};
}

inline nlohmann::json to_json(const IdentificationResult& r) {
  return {{"psi_true", r.psi_true},       {"psi_true_enumerated", r.psi_true_enumerated},
          {"psi_h", r.psi_h},             {"psi_hybrid", r.psi_hybrid},
          {"psi_q", r.psi_q},             {"h1", r.h1},
          {"h0", r.h0},                   {"q0", r.q0},
          {"q1", r.q1},                   {"max_residual", r.max_residual}};
}

// ---------------------------------------------------------------------------
// Laws
// ---------------------------------------------------------------------------

struct LawSizes {
  int du = 2, dz = 2, dw = 2, dm = 2, dy = 2;
};

namespace detail {

/// Random distribution of size k; with `peak` >= 0 the mass tilts towards index `peak`.
inline Table1 random_dist(const CounterRng& rng, std::uint32_t row, std::uint32_t ch, int k, int peak = -1,
                          double strength = 0.0) {
  Table1 p(static_cast<std::size_t>(k));
  double s = 0;
  for (int j = 0; j < k; ++j) {
    p[j] = 0.05 + rng.uniform(row, ch, static_cast<std::uint32_t>(j));
    if (j == peak) p[j] += strength;
    s += p[j];
  }
  for (double& v : p) v /= s;
  return p;
}

}  // namespace detail

/// Random structural law. `association` tilts P(Z|U) and P(W|U) towards the
/// diagonal so the proxies are informative about U.
inline DiscreteLaw random_law(std::uint64_t seed, LawSizes s = {}, double association = 2.0) {
  const CounterRng rng(seed, 0);
  DiscreteLaw law;
  std::uint32_t row = 0;
  law.p_u = detail::random_dist(rng, row++, 0, s.du);
  for (int u = 0; u < s.du; ++u) law.p_a1_u.push_back(0.2 + 0.6 * rng.uniform(row++, 1));
  law.p_z.resize(s.du);
  law.p_w.resize(s.du);
  for (int u = 0; u < s.du; ++u) {
    for (int a = 0; a < 2; ++a) law.p_z[u].push_back(detail::random_dist(rng, row++, 2, s.dz, u % s.dz, association));
    law.p_w[u] = detail::random_dist(rng, row++, 3, s.dw, u % s.dw, association);
  }
  law.p_m.assign(2, {});
  law.p_y.assign(2, {});
  for (int a = 0; a < 2; ++a) {
    for (int u = 0; u < s.du; ++u) law.p_m[a].push_back(detail::random_dist(rng, row++, 4, s.dm));
    law.p_y[a].resize(s.dm);
    for (int m = 0; m < s.dm; ++m) {
      law.p_y[a][m].resize(s.du);
      for (int u = 0; u < s.du; ++u)
        for (int w = 0; w < s.dw; ++w) law.p_y[a][m][u].push_back(detail::random_dist(rng, row++, 5, s.dy));
    }
  }
  for (int y = 0; y < s.dy; ++y) law.y_values.push_back(4.0 * rng.uniform(row, 6, static_cast<std::uint32_t>(y)) - 2.0);
  law.check();
  return law;
}

/// No latent confounding: U has a single level.
inline DiscreteLaw fixture_degenerate_u(std::uint64_t seed = 11) {
  return random_law(seed, {1, 2, 2, 2, 2}, 0.0);
}

/// Treatment proxy independent of U: completeness fails by construction.
inline DiscreteLaw fixture_z_independent_u(std::uint64_t seed = 12) {
  auto law = random_law(seed, {2, 2, 2, 2, 2});
  for (int u = 0; u < law.du(); ++u) law.p_z[u] = law.p_z[0];
  return law;
}

/// Z and W both equal U exactly.
inline DiscreteLaw fixture_perfect_proxies(std::uint64_t seed = 13) {
  auto law = random_law(seed, {2, 2, 2, 2, 2});
  for (int u = 0; u < 2; ++u) {
    law.p_w[u] = {u == 0 ? 1.0 : 0.0, u == 0 ? 0.0 : 1.0};
    for (int a = 0; a < 2; ++a) law.p_z[u][a] = law.p_w[u];
  }
  return law;
}

/// |Z| = 2, |W| = 3, |U| = 3: the order condition fails.
inline DiscreteLaw fixture_order_failure(std::uint64_t seed = 14) {
  return random_law(seed, {3, 2, 3, 2, 2});
}

/// |U| = 2, |Z| = 2, |W| = 3: outcome bridges are non-unique but psi is not.
inline DiscreteLaw fixture_nonunique(std::uint64_t seed = 15) {
  return random_law(seed, {2, 2, 3, 2, 2});
}

inline DiscreteLaw load_law(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    auto law = nlohmann::json::parse(in).get<DiscreteLaw>();
    law.check();
    return law;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed law file " + path.string() + ": " + e.what());
  }
}

}  // namespace proxmed
