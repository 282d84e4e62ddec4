#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bridges.hpp"
#include "data.hpp"
#include "error.hpp"

namespace proxmed {

// Moment systems for the bridge parameters, solved in sequence
// beta1 -> beta0 and gamma0 -> gamma1. All residuals are row averages.
//
//   beta1:  A (Y - h1) c1                 = 0
//   beta0:  (1-A)(h1 - h0) c0             = 0
//   gamma0: {(1-A) q0 - 1} d0             = 0
//   gamma1: {A q1 - (1-A) q0} d1          = 0

/// Proxy-relevance statistic below this flags a weak proxy.
inline constexpr double kWeakProxyRelevance = 10.0;

/// Jacobian condition estimate above this flags a weak proxy.
inline constexpr double kWeakProxyCondition = 1e12;

struct MomentSystem {
  Index dim = 0;
  std::function<VectorXd(const VectorXd&)> residual;
  std::function<MatrixXd(const VectorXd&)> jacobian;
};

struct NewtonOptions {
  double tol = 1e-9;
  int max_iter = 100;
  int max_halvings = 30;
};

struct SolveReport {
  VectorXd params;
  int iterations = 0;
  double residual_norm = std::numeric_limits<double>::infinity();  // sup-norm of averaged moments
  bool converged = false;
  double condition = std::numeric_limits<double>::quiet_NaN();
  double relevance = std::numeric_limits<double>::quiet_NaN();
  std::size_t clamp_events = 0;
  std::string message;
  std::vector<std::string> warnings;

  bool weak_proxy() const {
    for (const auto& w : warnings)
      if (w.starts_with("weak proxy")) return true;
    return false;
  }
};

inline nlohmann::json to_json(const SolveReport& r) {
  auto finite_or_null = [](double v) -> nlohmann::json { return std::isfinite(v) ? nlohmann::json(v) : nullptr; };
  return {{"params", std::vector<double>(r.params.data(), r.params.data() + r.params.size())},
          {"iterations", r.iterations},
          {"residual_norm", finite_or_null(r.residual_norm)},
          {"converged", r.converged},
          {"condition", finite_or_null(r.condition)},
          {"relevance", finite_or_null(r.relevance)},
          {"clamp_events", r.clamp_events},
          {"message", r.message},
          {"warnings", r.warnings}};
}

inline double condition_number(const MatrixXd& j) {
  if (j.size() == 0) return 1.0;
  Eigen::JacobiSVD<MatrixXd> svd(j);
  const auto& s = svd.singularValues();
  if (!(s(0) > 0.0)) return std::numeric_limits<double>::infinity();
  return s(0) / s(s.size() - 1);
}

namespace detail {

inline void attach_condition_warning(SolveReport& r) {
  if (!(r.condition <= kWeakProxyCondition))
    r.warnings.push_back("weak proxy: Jacobian condition estimate " + std::to_string(r.condition));
}

inline void attach_relevance_warning(SolveReport& r) {
  if (std::isfinite(r.relevance) && r.relevance < kWeakProxyRelevance)
    r.warnings.push_back("weak proxy: relevance statistic " + std::to_string(r.relevance));
}

}  // namespace detail

/// Damped Newton. A full step is halved until the Euclidean residual norm
/// decreases; convergence is judged on the sup-norm.
inline SolveReport newton_solve(const MomentSystem& sys, VectorXd init, const NewtonOptions& opt = {}) {
  SolveReport rep;
  if (init.size() != sys.dim) throw ValidationError("initial point has wrong dimension");
  VectorXd p = std::move(init);
  VectorXd r = sys.residual(p);
  if (r.size() != sys.dim) throw ValidationError("moment system is not square");
  auto finish = [&](bool ok, std::string msg) {
    rep.params = p;
    rep.residual_norm = r.allFinite() ? r.lpNorm<Eigen::Infinity>() : std::numeric_limits<double>::infinity();
    rep.converged = ok;
    rep.message = std::move(msg);
    const MatrixXd j = sys.jacobian(p);
    rep.condition = j.allFinite() ? condition_number(j) : std::numeric_limits<double>::infinity();
    detail::attach_condition_warning(rep);
    return rep;
  };
  if (!r.allFinite()) return finish(false, "non-finite residual at initial point");

  for (int it = 0;; ++it) {
    if (r.lpNorm<Eigen::Infinity>() <= opt.tol) return finish(true, "converged");
    if (it == opt.max_iter) return finish(false, "maximum iterations exceeded");
    const MatrixXd j = sys.jacobian(p);
    if (!j.allFinite()) return finish(false, "non-finite Jacobian");
    Eigen::FullPivLU<MatrixXd> lu(j);
    if (!lu.isInvertible()) return finish(false, "singular Jacobian");
    const VectorXd step = lu.solve(-r);
    const double base = r.norm();
    double t = 1.0;
    bool accepted = false;
    for (int h = 0; h <= opt.max_halvings; ++h, t *= 0.5) {
      const VectorXd cand = p + t * step;
      const VectorXd rc = sys.residual(cand);
      if (rc.allFinite() && rc.norm() < base) {
        p = cand;
        r = rc;
        accepted = true;
        break;
      }
    }
    rep.iterations = it + 1;
    if (!accepted) return finish(false, "step underflow");
  }
}

// ---------------------------------------------------------------------------
// Proxy relevance
// ---------------------------------------------------------------------------

/// Cragg-Donald minimum-eigenvalue statistic for the endogenous proxy block
/// given the instrumenting proxy block, after partialling out the exogenous
/// regressors, on the rows selected by `mask`. Equals the first-stage F when
/// both blocks are scalar.
inline double proxy_relevance(const MatrixXd& endog, const MatrixXd& instr, const MatrixXd& exog,
                              const VectorXd& mask) {
  std::vector<Index> rows;
  for (Index i = 0; i < mask.size(); ++i)
    if (mask(i) != 0.0) rows.push_back(i);
  const Index n = static_cast<Index>(rows.size());
  const Index k = exog.cols(), pz = instr.cols(), pw = endog.cols();
  if (n <= k + pz + 1 || pz == 0 || pw == 0) return std::numeric_limits<double>::quiet_NaN();
  MatrixXd e(n, k), zi(n, pz), wi(n, pw);
  for (Index r = 0; r < n; ++r) {
    e.row(r) = exog.row(rows[r]);
    zi.row(r) = instr.row(rows[r]);
    wi.row(r) = endog.row(rows[r]);
  }
  Eigen::ColPivHouseholderQR<MatrixXd> qr(e);
  const MatrixXd zt = zi - e * qr.solve(zi);
  const MatrixXd wt = wi - e * qr.solve(wi);
  const MatrixXd ztz = zt.transpose() * zt;
  Eigen::LDLT<MatrixXd> ldlt(ztz);
  if (ldlt.info() != Eigen::Success) return 0.0;
  const MatrixXd pi = ldlt.solve(zt.transpose() * wt);
  const MatrixXd v = wt - zt * pi;
  const MatrixXd svv = v.transpose() * v / static_cast<double>(n - k - pz);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(svv);
  if (es.eigenvalues().minCoeff() <= 0.0) return std::numeric_limits<double>::infinity();
  const MatrixXd inv_sqrt = es.operatorInverseSqrt();
  const MatrixXd g = inv_sqrt * pi.transpose() * ztz * pi * inv_sqrt / static_cast<double>(pz);
  Eigen::SelfAdjointEigenSolver<MatrixXd> eg(0.5 * (g + g.transpose()), Eigen::EigenvaluesOnly);
  return eg.eigenvalues().minCoeff();
}

// ---------------------------------------------------------------------------
// Generic blocks
// ---------------------------------------------------------------------------

inline VectorXd arm_indicator(const VectorXd& a, int arm) {
  return arm == 1 ? a : (VectorXd::Ones(a.size()) - a);
}

/// Exactly identified linear IV solve: sum_i w_i c_i (t_i - f_i' b) = 0.
inline SolveReport linear_iv_solve(const MatrixXd& f, const MatrixXd& c, const VectorXd& target, const VectorXd& weight,
                                   std::string_view label) {
  if (f.cols() != c.cols()) throw ValidationError("instrument and feature dimensions differ for " + std::string(label));
  const double n = static_cast<double>(f.rows());
  const MatrixXd cw = (c.array().colwise() * weight.array()).matrix();
  const MatrixXd g = cw.transpose() * f / n;
  const VectorXd b = cw.transpose() * target / n;
  Eigen::FullPivLU<MatrixXd> lu(g);
  if (!g.allFinite() || !lu.isInvertible())
    throw SolverError("singular cross-moment matrix for " + std::string(label) + " (weak or irrelevant proxies)");
  SolveReport rep;
  rep.params = lu.solve(b);
  rep.iterations = 1;
  rep.residual_norm = (b - g * rep.params).lpNorm<Eigen::Infinity>();
  rep.converged = rep.params.allFinite();
  rep.message = rep.converged ? "converged" : "non-finite solution";
  rep.condition = condition_number(g);
  detail::attach_condition_warning(rep);
  return rep;
}

/// Treatment-bridge system of the q0 form:
///   sum_i { w_i (1 + exp(-g_i' gamma)) - 1 } d_i = 0.
inline MomentSystem q_plus_one_system(const MatrixXd& g, const MatrixXd& d, const VectorXd& weight,
                                      ClampCounter* clamp = nullptr) {
  const double n = static_cast<double>(g.rows());
  MomentSystem sys;
  sys.dim = g.cols();
  sys.residual = [&g, &d, weight, n, clamp](const VectorXd& gamma) -> VectorXd {
    const VectorXd q = q0_values(g, gamma, clamp);
    const VectorXd e = (weight.array() * q.array() - 1.0).matrix();
    return d.transpose() * e / n;
  };
  sys.jacobian = [&g, &d, weight, n](const VectorXd& gamma) -> MatrixXd {
    const VectorXd lin = g * gamma;
    VectorXd s(lin.size());
    for (Index i = 0; i < lin.size(); ++i) s(i) = -weight(i) * clamped_exp(-lin(i));
    return d.transpose() * (g.array().colwise() * s.array()).matrix() / n;
  };
  return sys;
}

/// Treatment-bridge system of the q1 form:
///   sum_i { a_i base_i exp(g_i' gamma) - target_i } d_i = 0.
inline MomentSystem q_scaled_exp_system(const MatrixXd& g, const MatrixXd& d, const VectorXd& a, VectorXd base,
                                        VectorXd target, ClampCounter* clamp = nullptr) {
  const double n = static_cast<double>(g.rows());
  VectorXd ab = (a.array() * base.array()).matrix();
  MomentSystem sys;
  sys.dim = g.cols();
  sys.residual = [&g, &d, ab, target = std::move(target), n, clamp](const VectorXd& gamma) -> VectorXd {
    const VectorXd e = (ab.array() * q1_factor(g, gamma, clamp).array() - target.array()).matrix();
    return d.transpose() * e / n;
  };
  sys.jacobian = [&g, &d, ab, n](const VectorXd& gamma) -> MatrixXd {
    const VectorXd s = (ab.array() * q1_factor(g, gamma).array()).matrix();
    return d.transpose() * (g.array().colwise() * s.array()).matrix() / n;
  };
  return sys;
}

namespace detail {

inline MatrixXd ones_with(std::initializer_list<const MatrixXd*> blocks, Index n) {
  Index cols = 1;
  for (auto* b : blocks) cols += b->cols();
  MatrixXd out(n, cols);
  out.col(0).setOnes();
  Index k = 1;
  for (auto* b : blocks) {
    out.middleCols(k, b->cols()) = *b;
    k += b->cols();
  }
  return out;
}

inline VectorXd initial_or_zeros(const std::optional<VectorXd>& init, Index dim, std::string_view label) {
  if (!init) return VectorXd::Zero(dim);
  if (init->size() != dim) throw ValidationError("initial value for " + std::string(label) + " has wrong dimension");
  return *init;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// The four mediation bridges
// ---------------------------------------------------------------------------

inline SolveReport fit_beta1(const MediationDataset& d, const BridgeDesign& des) {
  auto rep = linear_iv_solve(des.h1, des.c1, d.y, d.a, "beta1");
  if (!des.custom_instruments) {
    const MatrixXd m = d.m;
    rep.relevance = proxy_relevance(d.w, d.z, detail::ones_with({&m, &d.x}, d.n()), d.a);
    detail::attach_relevance_warning(rep);
  }
  return rep;
}

inline SolveReport fit_beta0(const MediationDataset& d, const BridgeDesign& des, const VectorXd& beta1) {
  if (beta1.size() != des.h1.cols()) throw ValidationError("beta1 has wrong dimension");
  const VectorXd h1 = des.h1 * beta1;
  auto rep = linear_iv_solve(des.h0, des.c0, h1, arm_indicator(d.a, 0), "beta0");
  if (!des.custom_instruments) {
    rep.relevance = proxy_relevance(d.w, d.z, detail::ones_with({&d.x}, d.n()), arm_indicator(d.a, 0));
    detail::attach_relevance_warning(rep);
  }
  return rep;
}

inline SolveReport fit_gamma0(const MediationDataset& d, const BridgeDesign& des,
                              const std::optional<VectorXd>& init = std::nullopt, const NewtonOptions& opt = {}) {
  ClampCounter clamp;
  const VectorXd ctrl = arm_indicator(d.a, 0);
  const auto sys = q_plus_one_system(des.q0, des.d0, ctrl, &clamp);
  auto rep = newton_solve(sys, detail::initial_or_zeros(init, des.q0.cols(), "gamma0"), opt);
  rep.clamp_events = clamp.events;
  if (!des.custom_instruments) {
    rep.relevance = proxy_relevance(d.z, d.w, detail::ones_with({&d.x}, d.n()), ctrl);
    detail::attach_relevance_warning(rep);
  }
  return rep;
}

inline SolveReport fit_gamma1(const MediationDataset& d, const BridgeDesign& des, const VectorXd& gamma0,
                              const std::optional<VectorXd>& init = std::nullopt, const NewtonOptions& opt = {}) {
  if (gamma0.size() != des.q0.cols()) throw ValidationError("gamma0 has wrong dimension");
  ClampCounter clamp;
  const VectorXd q0 = q0_values(des.q0, gamma0, &clamp);
  const VectorXd target = (arm_indicator(d.a, 0).array() * q0.array()).matrix();
  const auto sys = q_scaled_exp_system(des.q1, des.d1, d.a, q0, target, &clamp);
  auto rep = newton_solve(sys, detail::initial_or_zeros(init, des.q1.cols(), "gamma1"), opt);
  rep.clamp_events = clamp.events;
  if (!des.custom_instruments) {
    const MatrixXd m = d.m;
    rep.relevance = proxy_relevance(d.z, d.w, detail::ones_with({&m, &d.x}, d.n()), d.a);
    detail::attach_relevance_warning(rep);
  }
  return rep;
}

/// Which bridge solves a pipeline needs.
struct BridgeNeeds {
  bool beta1 = true, beta0 = true, gamma0 = true, gamma1 = true;

  static BridgeNeeds all() { return {}; }
  static BridgeNeeds none() { return {false, false, false, false}; }
  BridgeNeeds operator|(const BridgeNeeds& o) const {
    return {beta1 || o.beta1, beta0 || o.beta0, gamma0 || o.gamma0, gamma1 || o.gamma1};
  }
};

struct FitOptions {
  BridgeNeeds needs;
  Instruments instruments;
  std::optional<VectorXd> gamma0_init, gamma1_init;
  NewtonOptions newton;
  /// When false, failed solves are recorded in their reports instead of thrown,
  /// and bridges downstream of a failure are left unfitted.
  bool strict = true;
};

struct FittedBridges {
  BridgeParams params;
  BridgeSpec spec;
  BridgeDesign design;
  std::optional<SolveReport> beta1, beta0, gamma0, gamma1;

  bool has(Bridge b) const {
    switch (b) {
      case Bridge::h1: return beta1.has_value();
      case Bridge::h0: return beta0.has_value();
      case Bridge::q0: return gamma0.has_value();
      case Bridge::q1: return gamma1.has_value();
    }
    return false;
  }

  void require(Bridge b) const {
    static const char* names[] = {"beta1", "beta0", "gamma0", "gamma1"};
    if (!has(b)) throw ValidationError(std::string(names[static_cast<int>(b)]) + " was not fitted");
    const auto& r = report(b);
    if (!r.converged)
      throw SolverError(std::string(names[static_cast<int>(b)]) + " solve did not converge: " + r.message);
  }

  const SolveReport& report(Bridge b) const {
    switch (b) {
      case Bridge::h1: return *beta1;
      case Bridge::h0: return *beta0;
      case Bridge::q0: return *gamma0;
      case Bridge::q1: return *gamma1;
    }
    return *beta1;
  }

  bool weak_proxy() const {
    for (const auto* r : {&beta1, &beta0, &gamma0, &gamma1})
      if (r->has_value() && (*r)->weak_proxy()) return true;
    return false;
  }

  std::vector<std::string> warnings() const {
    std::vector<std::string> out;
    const char* names[] = {"beta1", "beta0", "gamma0", "gamma1"};
    int k = 0;
    for (const auto* r : {&beta1, &beta0, &gamma0, &gamma1}) {
      if (r->has_value())
        for (const auto& w : (*r)->warnings) out.push_back(std::string(names[k]) + ": " + w);
      ++k;
    }
    return out;
  }

  // Row-wise bridge values over the fitting sample.
  VectorXd h1() const { return design.h1 * params.beta1; }
  VectorXd h0() const { return design.h0 * params.beta0; }
  VectorXd q0() const { return q0_values(design.q0, params.gamma0); }
  VectorXd q1() const { return (q0().array() * q1_factor(design.q1, params.gamma1).array()).matrix(); }
};

inline nlohmann::json to_json(const FittedBridges& fb, const MediationDataset& data) {
  nlohmann::json j;
  j["params"] = to_json(fb.params, data);
  nlohmann::json reports = nlohmann::json::object();
  if (fb.beta1) reports["beta1"] = to_json(*fb.beta1);
  if (fb.beta0) reports["beta0"] = to_json(*fb.beta0);
  if (fb.gamma0) reports["gamma0"] = to_json(*fb.gamma0);
  if (fb.gamma1) reports["gamma1"] = to_json(*fb.gamma1);
  j["solves"] = reports;
  nlohmann::json maps = nlohmann::json::object();
  for (Bridge b : {Bridge::h1, Bridge::h0, Bridge::q0, Bridge::q1})
    maps[std::string(to_string(b))] = fb.spec.map(b).is_identity() ? "identity" : "sqrt_abs";
  j["feature_maps"] = maps;
  return j;
}

/// Validates the data, then fits the requested bridges in dependency order.
/// In strict mode any failed solve is a SolverError.
inline FittedBridges fit_bridges(const MediationDataset& d, const BridgeSpec& spec, const FitOptions& opt = {}) {
  require_valid(d);
  FittedBridges fb;
  fb.spec = spec;
  fb.design = make_design(d, spec, opt.instruments);
  BridgeNeeds need = opt.needs;
  if (need.beta0) need.beta1 = true;
  if (need.gamma1) need.gamma0 = true;

  auto run = [&](Bridge b, std::optional<SolveReport>& slot, VectorXd& param, auto&& solve) {
    try {
      slot = solve();
    } catch (const SolverError& e) {
      if (opt.strict) throw;
      slot = SolveReport{};
      slot->message = e.what();
    }
    param = slot->params;
    if (opt.strict) fb.require(b);
    return slot->converged;
  };

  bool h1_ok = false, q0_ok = false;
  if (need.beta1) h1_ok = run(Bridge::h1, fb.beta1, fb.params.beta1, [&] { return fit_beta1(d, fb.design); });
  if (need.beta0 && h1_ok)
    run(Bridge::h0, fb.beta0, fb.params.beta0, [&] { return fit_beta0(d, fb.design, fb.params.beta1); });
  if (need.gamma0)
    q0_ok = run(Bridge::q0, fb.gamma0, fb.params.gamma0,
                [&] { return fit_gamma0(d, fb.design, opt.gamma0_init, opt.newton); });
  if (need.gamma1 && q0_ok)
    run(Bridge::q1, fb.gamma1, fb.params.gamma1,
        [&] { return fit_gamma1(d, fb.design, fb.params.gamma0, opt.gamma1_init, opt.newton); });
  return fb;
}

// ---------------------------------------------------------------------------
// Per-arm bridges for the proximal doubly robust estimator of E[Y(a)]
// ---------------------------------------------------------------------------

/// Outcome bridge h~(W,X) = (1,W,phi(X)) beta with moments I(A=a)(Y - h~)(1,Z,phi(X)) = 0.
inline SolveReport fit_outcome_bridge_arm(const MediationDataset& d, const FeatureMap& map, int arm) {
  if (d.pz() != d.pw())
    throw ValidationError("dimension mismatch: p_z != p_w for the outcome bridge of E[Y(a)]");
  const MatrixXd xf = map.apply(d.x);
  const MatrixXd f = detail::ones_with({&d.w, &xf}, d.n());
  const MatrixXd c = detail::ones_with({&d.z, &xf}, d.n());
  const std::string label = "outcome bridge of E[Y(" + std::to_string(arm) + ")]";
  return linear_iv_solve(f, c, d.y, arm_indicator(d.a, arm), label);
}

/// Treatment bridge q~(Z,X) = 1 + exp{-(1,Z,phi(X)) gamma} with moments {I(A=a) q~ - 1}(1,W,phi(X)) = 0.
inline SolveReport fit_treatment_bridge_arm(const MediationDataset& d, const FeatureMap& map, int arm,
                                            const NewtonOptions& opt = {}) {
  if (d.pz() != d.pw())
    throw ValidationError("dimension mismatch: p_z != p_w for the treatment bridge of E[Y(a)]");
  const MatrixXd xf = map.apply(d.x);
  const MatrixXd g = detail::ones_with({&d.z, &xf}, d.n());
  const MatrixXd dd = detail::ones_with({&d.w, &xf}, d.n());
  ClampCounter clamp;
  const auto sys = q_plus_one_system(g, dd, arm_indicator(d.a, arm), &clamp);
  auto rep = newton_solve(sys, VectorXd::Zero(g.cols()), opt);
  rep.clamp_events = clamp.events;
  return rep;
}

// ---------------------------------------------------------------------------
// Randomized-treatment q1: q1 = exp{(1,Z,M,X) gamma} with moments
// {A q1 - (1-A)}(1,W,M,X) = 0.
// ---------------------------------------------------------------------------

inline SolveReport fit_gamma1_rct(const MediationDataset& d, const FeatureMap& map,
                                  const std::optional<VectorXd>& init = std::nullopt, const NewtonOptions& opt = {}) {
  if (d.pz() != d.pw()) throw ValidationError("dimension mismatch: p_z != p_w for the randomized q1 bridge");
  const MatrixXd xf = map.apply(d.x);
  const MatrixXd m = d.m;
  const MatrixXd g = detail::ones_with({&d.z, &m, &xf}, d.n());
  const MatrixXd dd = detail::ones_with({&d.w, &m, &xf}, d.n());
  ClampCounter clamp;
  const auto sys = q_scaled_exp_system(g, dd, d.a, VectorXd::Ones(d.n()), arm_indicator(d.a, 0), &clamp);
  auto rep = newton_solve(sys, detail::initial_or_zeros(init, g.cols(), "randomized gamma1"), opt);
  rep.clamp_events = clamp.events;
  return rep;
}

}  // namespace proxmed
