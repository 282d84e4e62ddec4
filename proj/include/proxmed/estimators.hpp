#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bridges.hpp"
#include "data.hpp"
#include "error.hpp"
#include "solvers.hpp"

namespace proxmed {

enum class Estimand { psi_10, ey0, ey1, nde_0, nde_1, nie_0, nie_1, total };

enum class Method { p_or, p_hybrid, p_ipw, p_mr, p_dr, ols, rct_or, rct_ipw, rct_mr };

inline std::string_view to_string(Estimand e) {
  switch (e) {
    case Estimand::psi_10: return "psi_10";
    case Estimand::ey0: return "ey0";
    case Estimand::ey1: return "ey1";
    case Estimand::nde_0: return "nde_0";
    case Estimand::nde_1: return "nde_1";
    case Estimand::nie_0: return "nie_0";
    case Estimand::nie_1: return "nie_1";
    case Estimand::total: return "total";
  }
  return "?";
}

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::p_or: return "P-OR";
    case Method::p_hybrid: return "P-hybrid";
    case Method::p_ipw: return "P-IPW";
    case Method::p_mr: return "P-MR";
    case Method::p_dr: return "P-DR";
    case Method::ols: return "OLS";
    case Method::rct_or: return "RCT-OR";
    case Method::rct_ipw: return "RCT-IPW";
    case Method::rct_mr: return "RCT-MR";
  }
  return "?";
}

inline Method method_from_string(std::string_view s) {
  for (Method m : {Method::p_or, Method::p_hybrid, Method::p_ipw, Method::p_mr, Method::p_dr, Method::ols,
                   Method::rct_or, Method::rct_ipw, Method::rct_mr})
    if (to_string(m) == s) return m;
  throw ValidationError("unknown method '" + std::string(s) + "'");
}

inline constexpr Method kProximalMethods[] = {Method::p_or, Method::p_hybrid, Method::p_ipw, Method::p_mr};

/// Bridge solves each proximal estimator of psi depends on.
inline BridgeNeeds needs_for(Method m) {
  switch (m) {
    case Method::p_or: return {true, true, false, false};
    case Method::p_hybrid: return {true, false, true, false};
    case Method::p_ipw: return {false, false, true, true};
    case Method::p_mr: return BridgeNeeds::all();
    default: return BridgeNeeds::none();
  }
}

struct EstimateResult {
  Estimand estimand = Estimand::psi_10;
  Method method = Method::p_mr;
  double point = 0.0;
  std::optional<double> se;
  std::optional<std::pair<double, double>> ci;
  nlohmann::json diagnostics = nlohmann::json::object();
  std::vector<std::string> warnings;

  void attach(double s, std::pair<double, double> interval) {
    if (!(s >= 0.0)) throw ValidationError("standard error must be non-negative");
    if (!(interval.first <= point && point <= interval.second))
      throw ValidationError("confidence interval does not contain the point estimate");
    se = s;
    ci = interval;
  }

  /// Normal interval point +/- z se.
  void attach_normal(double s, double z = 1.959963984540054) { attach(s, {point - z * s, point + z * s}); }
};

inline nlohmann::json to_json(const EstimateResult& r) {
  nlohmann::json j = {{"estimand", to_string(r.estimand)}, {"method", to_string(r.method)}, {"point", r.point}};
  j["se"] = r.se ? nlohmann::json(*r.se) : nlohmann::json(nullptr);
  j["ci"] = r.ci ? nlohmann::json({r.ci->first, r.ci->second}) : nlohmann::json(nullptr);
  j["diagnostics"] = r.diagnostics;
  j["warnings"] = r.warnings;
  return j;
}

// ---------------------------------------------------------------------------
// Proximal estimators of psi = E[Y{1,M(0)}]
// ---------------------------------------------------------------------------

/// Row-wise bridge values; a member is empty when that bridge was not fitted.
struct BridgeValues {
  VectorXd h1, h0, q0, q1;
};

inline BridgeValues evaluate(const MediationDataset& d, const FittedBridges& fb) {
  BridgeValues v;
  if (fb.has(Bridge::h1)) v.h1 = bridge_features(d, fb.spec.h1, Bridge::h1) * fb.params.beta1;
  if (fb.has(Bridge::h0)) v.h0 = bridge_features(d, fb.spec.h0, Bridge::h0) * fb.params.beta0;
  if (fb.has(Bridge::q0)) v.q0 = q0_values(bridge_features(d, fb.spec.q0, Bridge::q0), fb.params.gamma0);
  if (fb.has(Bridge::q1))
    v.q1 = (v.q0.array() * q1_factor(bridge_features(d, fb.spec.q1, Bridge::q1), fb.params.gamma1).array()).matrix();
  return v;
}

/// Per-row summands whose mean is the estimate.
///   P-OR      h0
///   P-hybrid  (1-A) q0 h1
///   P-IPW     A q1 Y
///   P-MR      A q1 (Y - h1) + (1-A) q0 (h1 - h0) + h0
inline VectorXd psi_terms(Method m, const VectorXd& a, const VectorXd& y, const BridgeValues& v) {
  const auto A = a.array();
  const auto C = 1.0 - a.array();
  switch (m) {
    case Method::p_or: return v.h0;
    case Method::p_hybrid: return (C * v.q0.array() * v.h1.array()).matrix();
    case Method::p_ipw: return (A * v.q1.array() * y.array()).matrix();
    case Method::p_mr:
      return (A * v.q1.array() * (y - v.h1).array() + C * v.q0.array() * (v.h1 - v.h0).array() + v.h0.array())
          .matrix();
    default: throw ValidationError("not a proximal estimator of psi: " + std::string(to_string(m)));
  }
}

inline void require_bridges(const FittedBridges& fb, Method m) {
  const auto need = needs_for(m);
  if (need.beta1) fb.require(Bridge::h1);
  if (need.beta0) fb.require(Bridge::h0);
  if (need.gamma0) fb.require(Bridge::q0);
  if (need.gamma1) fb.require(Bridge::q1);
}

inline EstimateResult estimate_psi(const MediationDataset& d, const FittedBridges& fb, Method m) {
  require_bridges(fb, m);
  EstimateResult r;
  r.estimand = Estimand::psi_10;
  r.method = m;
  r.point = psi_terms(m, d.a, d.y, evaluate(d, fb)).mean();
  const auto need = needs_for(m);
  if (need.beta1) r.diagnostics["beta1"] = to_json(*fb.beta1);
  if (need.beta0) r.diagnostics["beta0"] = to_json(*fb.beta0);
  if (need.gamma0) r.diagnostics["gamma0"] = to_json(*fb.gamma0);
  if (need.gamma1) r.diagnostics["gamma1"] = to_json(*fb.gamma1);
  r.warnings = fb.warnings();
  return r;
}

inline EstimateResult psi_por(const MediationDataset& d, const FittedBridges& fb) {
  return estimate_psi(d, fb, Method::p_or);
}
inline EstimateResult psi_phybrid(const MediationDataset& d, const FittedBridges& fb) {
  return estimate_psi(d, fb, Method::p_hybrid);
}
inline EstimateResult psi_pipw(const MediationDataset& d, const FittedBridges& fb) {
  return estimate_psi(d, fb, Method::p_ipw);
}
inline EstimateResult psi_pmr(const MediationDataset& d, const FittedBridges& fb) {
  return estimate_psi(d, fb, Method::p_mr);
}

// ---------------------------------------------------------------------------
// Proximal doubly robust estimator of E[Y(a)]
// ---------------------------------------------------------------------------

struct DrOptions {
  FeatureMap h_map;  // outcome bridge covariates; empty means identity
  FeatureMap q_map;  // treatment bridge covariates; empty means identity
  NewtonOptions newton;
};

struct DrFit {
  int arm = 0;
  SolveReport outcome, treatment;
  MatrixXd f, c, g, dd;  // outcome features/instruments, treatment features/instruments
  VectorXd h, q, terms;
  double point = 0.0;
};

/// Fits both per-arm bridges and forms mean[ I(A=a) q~ (Y - h~) + h~ ].
inline DrFit fit_pdr(const MediationDataset& d, int arm, const DrOptions& opt = {}) {
  if (arm != 0 && arm != 1) throw ValidationError("arm must be 0 or 1");
  require_valid(d);
  if (d.pz() != d.pw()) throw ValidationError("dimension mismatch: p_z != p_w for the estimator of E[Y(a)]");
  const FeatureMap hm = opt.h_map.size() ? opt.h_map : FeatureMap::identity(d.px());
  const FeatureMap qm = opt.q_map.size() ? opt.q_map : FeatureMap::identity(d.px());
  DrFit fit;
  fit.arm = arm;
  fit.outcome = fit_outcome_bridge_arm(d, hm, arm);
  if (!fit.outcome.converged) throw SolverError("outcome bridge of E[Y(a)] failed: " + fit.outcome.message);
  fit.treatment = fit_treatment_bridge_arm(d, qm, arm, opt.newton);
  if (!fit.treatment.converged)
    throw SolverError("treatment bridge of E[Y(a)] did not converge: " + fit.treatment.message);
  const MatrixXd xh = hm.apply(d.x), xq = qm.apply(d.x);
  fit.f = detail::ones_with({&d.w, &xh}, d.n());
  fit.c = detail::ones_with({&d.z, &xh}, d.n());
  fit.g = detail::ones_with({&d.z, &xq}, d.n());
  fit.dd = detail::ones_with({&d.w, &xq}, d.n());
  fit.h = fit.f * fit.outcome.params;
  fit.q = q0_values(fit.g, fit.treatment.params);
  const VectorXd ind = arm_indicator(d.a, arm);
  fit.terms = (ind.array() * fit.q.array() * (d.y - fit.h).array() + fit.h.array()).matrix();
  fit.point = fit.terms.mean();
  return fit;
}

inline EstimateResult delta_pdr(const MediationDataset& d, int arm, const DrOptions& opt = {}) {
  const auto fit = fit_pdr(d, arm, opt);
  EstimateResult r;
  r.estimand = arm == 0 ? Estimand::ey0 : Estimand::ey1;
  r.method = Method::p_dr;
  r.point = fit.point;
  r.diagnostics["outcome_bridge"] = to_json(fit.outcome);
  r.diagnostics["treatment_bridge"] = to_json(fit.treatment);
  return r;
}

// ---------------------------------------------------------------------------
// Effect contrasts
// ---------------------------------------------------------------------------

/// psi, E[Y(0)], E[Y(1)], NDE(0) = psi - E[Y(0)], NIE(1) = E[Y(1)] - psi and
/// total = NDE(0) + NIE(1).
inline std::vector<EstimateResult> effects(const MediationDataset& d, const FittedBridges& fb, Method m,
                                           const DrOptions& opt = {}) {
  const auto psi = estimate_psi(d, fb, m);
  auto ey0 = delta_pdr(d, 0, opt);
  auto ey1 = delta_pdr(d, 1, opt);
  auto contrast = [&](Estimand e, double v) {
    EstimateResult r;
    r.estimand = e;
    r.method = m;
    r.point = v;
    r.warnings = psi.warnings;
    return r;
  };
  const double nde = psi.point - ey0.point;
  const double nie = ey1.point - psi.point;
  return {psi, ey0, ey1, contrast(Estimand::nde_0, nde), contrast(Estimand::nie_1, nie),
          contrast(Estimand::total, nde + nie)};
}

// ---------------------------------------------------------------------------
// Naive regression benchmark
// ---------------------------------------------------------------------------

/// Coefficient of A from least squares of Y on (1, A, M, X, Z, W), with a
/// classical standard error. `include_z = false` drops Z.
inline EstimateResult naive_ols(const MediationDataset& d, bool include_z = true) {
  require_valid(d);
  const Index n = d.n();
  const Index p = 3 + d.px() + (include_z ? d.pz() : 0) + d.pw();
  MatrixXd x(n, p);
  Index k = 0;
  x.col(k++).setOnes();
  x.col(k++) = d.a;
  x.col(k++) = d.m;
  x.middleCols(k, d.px()) = d.x;
  k += d.px();
  if (include_z) {
    x.middleCols(k, d.pz()) = d.z;
    k += d.pz();
  }
  x.middleCols(k, d.pw()) = d.w;
  Eigen::ColPivHouseholderQR<MatrixXd> qr(x);
  if (qr.rank() < p) throw SolverError("rank-deficient regression design");
  const VectorXd coef = qr.solve(d.y);
  const VectorXd resid = d.y - x * coef;
  const double sigma2 = resid.squaredNorm() / static_cast<double>(n - p);
  const MatrixXd xtx_inv = (x.transpose() * x).inverse();
  EstimateResult r;
  r.estimand = Estimand::nde_0;
  r.method = Method::ols;
  r.point = coef(1);
  r.attach_normal(std::sqrt(sigma2 * xtx_inv(1, 1)));
  r.diagnostics["include_z"] = include_z;
  return r;
}

// ---------------------------------------------------------------------------
// Randomized treatment
// ---------------------------------------------------------------------------

/// eta0(W,X): least squares of h1(W,M,X) on (1, W, phi(X)) among controls.
inline VectorXd fit_eta0(const MediationDataset& d, const VectorXd& beta1, const FeatureMap& h1_map,
                         const FeatureMap& eta_map) {
  const VectorXd h1 = bridge_features(d, h1_map, Bridge::h1) * beta1;
  const MatrixXd f = bridge_features(d, eta_map, Bridge::h0);
  std::vector<Index> ctrl;
  for (Index i = 0; i < d.n(); ++i)
    if (d.a(i) == 0.0) ctrl.push_back(i);
  if (ctrl.empty()) throw ValidationError("control arm absent");
  MatrixXd fc(static_cast<Index>(ctrl.size()), f.cols());
  VectorXd hc(fc.rows());
  for (Index r = 0; r < fc.rows(); ++r) {
    fc.row(r) = f.row(ctrl[r]);
    hc(r) = h1(ctrl[r]);
  }
  Eigen::ColPivHouseholderQR<MatrixXd> qr(fc);
  if (qr.rank() < fc.cols()) throw SolverError("rank-deficient regression for eta0");
  return qr.solve(hc);
}

inline VectorXd fit_eta0(const MediationDataset& d, const FittedBridges& fb) {
  fb.require(Bridge::h1);
  return fit_eta0(d, fb.params.beta1, fb.spec.h1, fb.spec.h0);
}

struct Propensity {
  enum class Kind { marginal, known, logistic };
  Kind kind = Kind::marginal;
  double p0 = 0.5;  // known f(A=0|X) when kind == known

  static Propensity known(double p) { return {Kind::known, p}; }
  static Propensity logistic() { return {Kind::logistic, 0.5}; }
  static Propensity marginal() { return {}; }
};

/// Logistic regression of A on (1, X) by Newton-Raphson.
inline VectorXd logistic_fit(const MatrixXd& x, const VectorXd& a, int max_iter = 100, double tol = 1e-10) {
  const Index n = x.rows();
  MatrixXd design(n, x.cols() + 1);
  design.col(0).setOnes();
  design.rightCols(x.cols()) = x;
  VectorXd b = VectorXd::Zero(design.cols());
  for (int it = 0; it < max_iter; ++it) {
    const VectorXd eta = design * b;
    const VectorXd p = (1.0 / (1.0 + (-eta.array()).exp())).matrix();
    const VectorXd grad = design.transpose() * (a - p);
    const VectorXd wts = (p.array() * (1.0 - p.array())).matrix();
    const MatrixXd info = design.transpose() * (design.array().colwise() * wts.array()).matrix();
    Eigen::LDLT<MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success) throw SolverError("singular information matrix in logistic propensity fit");
    const VectorXd step = ldlt.solve(grad);
    b += step;
    if (!b.allFinite()) throw SolverError("logistic propensity fit diverged (separation)");
    if (step.lpNorm<Eigen::Infinity>() < tol) return b;
  }
  throw SolverError("logistic propensity fit did not converge");
}

/// f(A=0|X) per row; every value must lie in (0.01, 0.99).
inline VectorXd control_propensity(const MediationDataset& d, const Propensity& prop) {
  VectorXd p0;
  switch (prop.kind) {
    case Propensity::Kind::marginal: p0 = VectorXd::Constant(d.n(), 1.0 - d.a.mean()); break;
    case Propensity::Kind::known: p0 = VectorXd::Constant(d.n(), prop.p0); break;
    case Propensity::Kind::logistic: {
      const VectorXd b = logistic_fit(d.x, d.a);
      const VectorXd eta = (b(0) + (d.x * b.tail(d.px())).array()).matrix();
      p0 = (1.0 / (1.0 + eta.array().exp())).matrix();
      break;
    }
  }
  for (Index i = 0; i < p0.size(); ++i)
    if (!(p0(i) > 0.01 && p0(i) < 0.99))
      throw ValidationError("propensity estimate outside (0.01, 0.99) at row " + std::to_string(i));
  return p0;
}

/// Bridges for the randomized-treatment estimators. Any member may be set by
/// hand (for example to study robustness to a corrupted bridge).
struct RctBridges {
  FeatureMap map;
  VectorXd beta1, eta0, gamma1;
  std::optional<SolveReport> beta1_report, gamma1_report;
};

enum class RctVariant { or_, ipw, mr };

inline Method method_of(RctVariant v) {
  switch (v) {
    case RctVariant::or_: return Method::rct_or;
    case RctVariant::ipw: return Method::rct_ipw;
    case RctVariant::mr: return Method::rct_mr;
  }
  return Method::rct_mr;
}

inline RctBridges fit_rct_bridges(const MediationDataset& d, const FeatureMap& map = {}, bool fit_q1 = true) {
  require_valid(d);
  RctBridges rb;
  rb.map = map.size() ? map : FeatureMap::identity(d.px());
  const auto des = make_design(d, BridgeSpec{rb.map, rb.map, rb.map, rb.map});
  rb.beta1_report = fit_beta1(d, des);
  rb.beta1 = rb.beta1_report->params;
  rb.eta0 = fit_eta0(d, rb.beta1, rb.map, rb.map);
  if (fit_q1) {
    rb.gamma1_report = fit_gamma1_rct(d, rb.map);
    if (!rb.gamma1_report->converged)
      throw SolverError("randomized q1 solve did not converge: " + rb.gamma1_report->message);
    rb.gamma1 = rb.gamma1_report->params;
  }
  return rb;
}

/// Per-row summands of the randomized-treatment estimators.
///   OR   eta0
///   IPW  A q1 Y / pi0
///   MR   A q1 (Y - h1) / pi0 + (1-A)(h1 - eta0) / pi0 + eta0
inline VectorXd rct_terms(const MediationDataset& d, const RctBridges& rb, const VectorXd& pi0, RctVariant v) {
  const VectorXd eta = bridge_features(d, rb.map, Bridge::h0) * rb.eta0;
  if (v == RctVariant::or_) return eta;
  const VectorXd q1 = q1_factor(bridge_features(d, rb.map, Bridge::q1), rb.gamma1);
  const auto A = d.a.array();
  if (v == RctVariant::ipw) return (A * q1.array() * d.y.array() / pi0.array()).matrix();
  const VectorXd h1 = bridge_features(d, rb.map, Bridge::h1) * rb.beta1;
  return (A * q1.array() * (d.y - h1).array() / pi0.array() + (1.0 - A) * (h1 - eta).array() / pi0.array() +
          eta.array())
      .matrix();
}

inline EstimateResult psi_rct(const MediationDataset& d, const RctBridges& rb, const Propensity& prop, RctVariant v) {
  const VectorXd pi0 = control_propensity(d, prop);
  EstimateResult r;
  r.estimand = Estimand::psi_10;
  r.method = method_of(v);
  r.point = rct_terms(d, rb, pi0, v).mean();
  if (rb.beta1_report) r.diagnostics["beta1"] = to_json(*rb.beta1_report);
  if (rb.gamma1_report) r.diagnostics["gamma1"] = to_json(*rb.gamma1_report);
  return r;
}

// ---------------------------------------------------------------------------
// theta = psi - E[Y(0)] pipeline
// ---------------------------------------------------------------------------

struct PipelineOptions {
  BridgeSpec spec;
  DrOptions dr;
  NewtonOptions newton;

  /// Identity maps everywhere; the E[Y(0)] bridges follow h0 and q0.
  static PipelineOptions for_spec(const BridgeSpec& spec) {
    PipelineOptions o;
    o.spec = spec;
    o.dr.h_map = spec.h0;
    o.dr.q_map = spec.q0;
    return o;
  }
};

/// theta = psi^ - delta^(0) for one proximal method, fitting everything it needs.
inline double theta_point(const MediationDataset& d, Method m, const PipelineOptions& opt) {
  FitOptions fo;
  fo.needs = needs_for(m);
  fo.newton = opt.newton;
  const auto fb = fit_bridges(d, opt.spec, fo);
  return estimate_psi(d, fb, m).point - fit_pdr(d, 0, opt.dr).point;
}

}  // namespace proxmed
