#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bridges.hpp"
#include "data.hpp"
#include "error.hpp"
#include "estimators.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "solvers.hpp"

namespace proxmed {

inline constexpr double kNormal975 = 1.959963984540054;

// ---------------------------------------------------------------------------
// Stacked M-estimation
// ---------------------------------------------------------------------------

/// Per-row stacked moments and their averaged Jacobian. Blocks appear in the
/// order beta1, beta0, gamma0, gamma1, beta~, gamma~, psi, delta, each only
/// when the estimator uses it.
struct StackedSystem {
  MatrixXd moments;  // n x P
  MatrixXd bread;    // P x P, average derivative of the moments
  std::vector<std::pair<std::string, Index>> blocks;  // name, offset
  Index psi_index = -1;
  std::vector<Index> delta_index;  // one per E[Y(a)] estimator, in the order given

  Index dim() const { return bread.rows(); }
  MatrixXd meat() const { return moments.transpose() * moments / static_cast<double>(moments.rows()); }

  /// bread^-1 meat bread^-T / n.
  MatrixXd covariance() const {
    Eigen::FullPivLU<MatrixXd> lu(bread);
    if (!bread.allFinite() || !lu.isInvertible()) throw SolverError("singular bread matrix");
    const MatrixXd binv = lu.inverse();
    const MatrixXd v = binv * meat() * binv.transpose() / static_cast<double>(moments.rows());
    return 0.5 * (v + v.transpose());
  }

  double variance(const VectorXd& contrast) const {
    return std::max(0.0, contrast.dot(covariance() * contrast));
  }
};

namespace detail {

class StackBuilder {
 public:
  explicit StackBuilder(Index n) : n_(n) {}

  Index add(std::string name, Index width) {
    const Index off = dim_;
    blocks_.emplace_back(std::move(name), off);
    dim_ += width;
    return off;
  }

  void allocate() {
    sys_.moments = MatrixXd::Zero(n_, dim_);
    sys_.bread = MatrixXd::Zero(dim_, dim_);
    sys_.blocks = blocks_;
  }

  StackedSystem& sys() { return sys_; }
  double n() const { return static_cast<double>(n_); }

 private:
  Index n_, dim_ = 0;
  std::vector<std::pair<std::string, Index>> blocks_;
  StackedSystem sys_;
};

/// sum_i s_i u_i v_i' / n
inline MatrixXd weighted_cross(const MatrixXd& u, const VectorXd& s, const MatrixXd& v) {
  return u.transpose() * (v.array().colwise() * s.array()).matrix() / static_cast<double>(u.rows());
}

/// sum_i s_i v_i / n as a row vector
inline Eigen::RowVectorXd weighted_mean_row(const VectorXd& s, const MatrixXd& v) {
  return (s.transpose() * v) / static_cast<double>(v.rows());
}

}  // namespace detail

/// Builds the stacked system for a proximal estimator of psi (if `method` is
/// set) and any number of E[Y(a)] estimators.
inline StackedSystem stack_moments(const MediationDataset& d, const FittedBridges& fb, std::optional<Method> method,
                                   const std::vector<const DrFit*>& drs = {}) {
  BridgeNeeds need = method ? needs_for(*method) : BridgeNeeds::none();
  if (method) require_bridges(fb, *method);
  if (need.beta0) need.beta1 = true;
  if (need.gamma1) need.gamma0 = true;

  const Index n = d.n();
  const VectorXd A = d.a;
  const VectorXd C = arm_indicator(d.a, 0);
  const auto& des = fb.design;
  if (method && des.h1.rows() != n) throw ValidationError("bridges were fitted on a different sample");

  detail::StackBuilder sb(n);
  const Index ob1 = need.beta1 ? sb.add("beta1", des.h1.cols()) : -1;
  const Index ob0 = need.beta0 ? sb.add("beta0", des.h0.cols()) : -1;
  const Index og0 = need.gamma0 ? sb.add("gamma0", des.q0.cols()) : -1;
  const Index og1 = need.gamma1 ? sb.add("gamma1", des.q1.cols()) : -1;
  std::vector<Index> obt, ogt, odel;
  for (const DrFit* dr : drs) {
    const auto tag = std::to_string(dr->arm);
    obt.push_back(sb.add("beta~" + tag, dr->f.cols()));
    ogt.push_back(sb.add("gamma~" + tag, dr->g.cols()));
  }
  const Index opsi = method ? sb.add("psi", 1) : -1;
  for (const DrFit* dr : drs) odel.push_back(sb.add("delta" + std::to_string(dr->arm), 1));
  sb.allocate();
  auto& S = sb.sys();
  S.psi_index = opsi;
  S.delta_index = odel;
  auto& Phi = S.moments;
  auto& Bd = S.bread;

  VectorXd h1, h0, q0, e1, q1;
  MatrixXd dq0;  // n x l0, derivative of q0 in gamma0
  if (need.beta1) h1 = des.h1 * fb.params.beta1;
  if (need.beta0) h0 = des.h0 * fb.params.beta0;
  if (need.gamma0) {
    q0 = q0_values(des.q0, fb.params.gamma0);
    const VectorXd s = (1.0 - q0.array()).matrix();  // -exp(-l0)
    dq0 = (des.q0.array().colwise() * s.array()).matrix();
  }
  if (need.gamma1) {
    e1 = q1_factor(des.q1, fb.params.gamma1);
    q1 = (q0.array() * e1.array()).matrix();
  }

  if (need.beta1) {
    const VectorXd r = (A.array() * (d.y - h1).array()).matrix();
    Phi.middleCols(ob1, des.c1.cols()) = (des.c1.array().colwise() * r.array()).matrix();
    Bd.block(ob1, ob1, des.c1.cols(), des.h1.cols()) = -detail::weighted_cross(des.c1, A, des.h1);
  }
  if (need.beta0) {
    const VectorXd r = (C.array() * (h1 - h0).array()).matrix();
    Phi.middleCols(ob0, des.c0.cols()) = (des.c0.array().colwise() * r.array()).matrix();
    Bd.block(ob0, ob1, des.c0.cols(), des.h1.cols()) = detail::weighted_cross(des.c0, C, des.h1);
    Bd.block(ob0, ob0, des.c0.cols(), des.h0.cols()) = -detail::weighted_cross(des.c0, C, des.h0);
  }
  if (need.gamma0) {
    const VectorXd r = (C.array() * q0.array() - 1.0).matrix();
    Phi.middleCols(og0, des.d0.cols()) = (des.d0.array().colwise() * r.array()).matrix();
    Bd.block(og0, og0, des.d0.cols(), des.q0.cols()) = detail::weighted_cross(des.d0, C, dq0);
  }
  if (need.gamma1) {
    const VectorXd r = (A.array() * q1.array() - C.array() * q0.array()).matrix();
    Phi.middleCols(og1, des.d1.cols()) = (des.d1.array().colwise() * r.array()).matrix();
    const VectorXd s1 = (A.array() * q1.array()).matrix();
    Bd.block(og1, og1, des.d1.cols(), des.q1.cols()) = detail::weighted_cross(des.d1, s1, des.q1);
    const VectorXd s0 = (A.array() * e1.array() - C.array()).matrix();
    Bd.block(og1, og0, des.d1.cols(), des.q0.cols()) = detail::weighted_cross(des.d1, s0, dq0);
  }

  if (method) {
    BridgeValues v{h1, h0, q0, q1};
    const VectorXd terms = psi_terms(*method, d.a, d.y, v);
    const double psi = terms.mean();
    Phi.col(opsi) = (terms.array() - psi).matrix();
    Bd(opsi, opsi) = -1.0;
    const auto& f1 = des.h1;
    const auto& f0 = des.h0;
    const auto& g1 = des.q1;
    switch (*method) {
      case Method::p_or:
        Bd.block(opsi, ob0, 1, f0.cols()) = detail::weighted_mean_row(VectorXd::Ones(n), f0);
        break;
      case Method::p_hybrid:
        Bd.block(opsi, ob1, 1, f1.cols()) = detail::weighted_mean_row((C.array() * q0.array()).matrix(), f1);
        Bd.block(opsi, og0, 1, dq0.cols()) = detail::weighted_mean_row((C.array() * h1.array()).matrix(), dq0);
        break;
      case Method::p_ipw:
        Bd.block(opsi, og0, 1, dq0.cols()) =
            detail::weighted_mean_row((A.array() * e1.array() * d.y.array()).matrix(), dq0);
        Bd.block(opsi, og1, 1, g1.cols()) =
            detail::weighted_mean_row((A.array() * q1.array() * d.y.array()).matrix(), g1);
        break;
      case Method::p_mr: {
        const VectorXd res1 = d.y - h1;
        Bd.block(opsi, ob1, 1, f1.cols()) =
            detail::weighted_mean_row((C.array() * q0.array() - A.array() * q1.array()).matrix(), f1);
        Bd.block(opsi, ob0, 1, f0.cols()) = detail::weighted_mean_row((1.0 - C.array() * q0.array()).matrix(), f0);
        Bd.block(opsi, og0, 1, dq0.cols()) = detail::weighted_mean_row(
            (A.array() * e1.array() * res1.array() + C.array() * (h1 - h0).array()).matrix(), dq0);
        Bd.block(opsi, og1, 1, g1.cols()) =
            detail::weighted_mean_row((A.array() * q1.array() * res1.array()).matrix(), g1);
        break;
      }
      default: throw ValidationError("sandwich variance is defined for the proximal estimators of psi");
    }
  }

  for (std::size_t k = 0; k < drs.size(); ++k) {
    const DrFit* dr = drs[k];
    const Index obt_k = obt[k], ogt_k = ogt[k], odel_k = odel[k];
    const VectorXd I = arm_indicator(d.a, dr->arm);
    const VectorXd rb = (I.array() * (d.y - dr->h).array()).matrix();
    Phi.middleCols(obt_k, dr->c.cols()) = (dr->c.array().colwise() * rb.array()).matrix();
    Bd.block(obt_k, obt_k, dr->c.cols(), dr->f.cols()) = -detail::weighted_cross(dr->c, I, dr->f);
    const VectorXd rg = (I.array() * dr->q.array() - 1.0).matrix();
    Phi.middleCols(ogt_k, dr->dd.cols()) = (dr->dd.array().colwise() * rg.array()).matrix();
    const MatrixXd dq = (dr->g.array().colwise() * (1.0 - dr->q.array())).matrix();
    Bd.block(ogt_k, ogt_k, dr->dd.cols(), dr->g.cols()) = detail::weighted_cross(dr->dd, I, dq);
    const double delta = dr->terms.mean();
    Phi.col(odel_k) = (dr->terms.array() - delta).matrix();
    Bd.block(odel_k, obt_k, 1, dr->f.cols()) = detail::weighted_mean_row((1.0 - I.array() * dr->q.array()).matrix(), dr->f);
    Bd.block(odel_k, ogt_k, 1, dr->g.cols()) =
        detail::weighted_mean_row((I.array() * (d.y - dr->h).array()).matrix(), dq);
    Bd(odel_k, odel_k) = -1.0;
  }
  return S;
}

/// Sandwich standard error of a proximal estimator of psi.
inline std::pair<double, std::pair<double, double>> sandwich_se(const MediationDataset& d, const FittedBridges& fb,
                                                                Method m) {
  const auto S = stack_moments(d, fb, m);
  VectorXd e = VectorXd::Zero(S.dim());
  e(S.psi_index) = 1.0;
  const double se = std::sqrt(S.variance(e));
  const double point = psi_terms(m, d.a, d.y, evaluate(d, fb)).mean();
  return {se, {point - kNormal975 * se, point + kNormal975 * se}};
}

/// Sandwich standard error of theta = psi^ - delta^(0) (or any psi^ - delta^(a)).
inline double sandwich_theta_se(const MediationDataset& d, const FittedBridges& fb, Method m, const DrFit& dr) {
  const auto S = stack_moments(d, fb, m, {&dr});
  VectorXd e = VectorXd::Zero(S.dim());
  e(S.psi_index) = 1.0;
  e(S.delta_index[0]) = -1.0;
  return std::sqrt(S.variance(e));
}

/// Sandwich standard error of delta^(a).
inline double sandwich_delta_se(const MediationDataset& d, const DrFit& dr) {
  const auto S = stack_moments(d, FittedBridges{}, std::nullopt, {&dr});
  VectorXd e = VectorXd::Zero(S.dim());
  e(S.delta_index[0]) = 1.0;
  return std::sqrt(S.variance(e));
}

/// Point estimates and sandwich standard errors of psi, E[Y(0)], E[Y(1)],
/// NDE(0), NIE(1) and the total effect from one stacked system.
inline std::vector<EstimateResult> effects_with_se(const MediationDataset& d, const FittedBridges& fb, Method m,
                                                   const DrFit& dr0, const DrFit& dr1) {
  const auto S = stack_moments(d, fb, m, {&dr0, &dr1});
  const MatrixXd V = S.covariance();
  auto var = [&](std::initializer_list<std::pair<Index, double>> terms) {
    VectorXd e = VectorXd::Zero(S.dim());
    for (auto [i, c] : terms) e(i) += c;
    return std::max(0.0, e.dot(V * e));
  };
  const Index ip = S.psi_index, i0 = S.delta_index[0], i1 = S.delta_index[1];
  const double psi = psi_terms(m, d.a, d.y, evaluate(d, fb)).mean();
  auto make = [&](Estimand e, Method meth, double point, double v) {
    EstimateResult r;
    r.estimand = e;
    r.method = meth;
    r.point = point;
    r.attach_normal(std::sqrt(v), kNormal975);
    r.warnings = fb.warnings();
    return r;
  };
  const double nde = psi - dr0.point, nie = dr1.point - psi;
  return {make(Estimand::psi_10, m, psi, var({{ip, 1.0}})),
          make(Estimand::ey0, Method::p_dr, dr0.point, var({{i0, 1.0}})),
          make(Estimand::ey1, Method::p_dr, dr1.point, var({{i1, 1.0}})),
          make(Estimand::nde_0, m, nde, var({{ip, 1.0}, {i0, -1.0}})),
          make(Estimand::nie_1, m, nie, var({{i1, 1.0}, {ip, -1.0}})),
          make(Estimand::total, m, nde + nie, var({{i1, 1.0}, {i0, -1.0}}))};
}

// ---------------------------------------------------------------------------
// Nonparametric bootstrap
// ---------------------------------------------------------------------------

/// Philox channel used for bootstrap row draws; the stream is the replicate index.
inline constexpr std::uint32_t kBootstrapChannel = 6;

struct BootstrapConfig {
  int B = 200;
  std::uint64_t seed = 0;
  bool percentile = false;
  int threads = 1;
  double max_failure_rate = 0.2;
};

struct BootstrapResult {
  double point = 0.0;
  double se = 0.0;
  std::pair<double, double> ci;
  std::vector<double> replicates;  // NaN marks a failed replicate
  int failures = 0;
};

/// Row indices of bootstrap replicate b.
inline std::vector<Index> bootstrap_rows(Index n, std::uint64_t seed, int b) {
  const CounterRng rng(seed, static_cast<std::uint32_t>(b));
  std::vector<Index> rows(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    rows[static_cast<std::size_t>(i)] =
        static_cast<Index>(rng.below(static_cast<std::uint64_t>(n), static_cast<std::uint32_t>(i), kBootstrapChannel));
  return rows;
}

/// Type-7 sample quantile of sorted values.
inline double quantile_sorted(const std::vector<double>& v, double p) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Resamples rows B times and reruns `pipeline` (data -> estimate) on each.
/// Replicates whose pipeline throws a library error are dropped and counted.
template <typename Pipeline>
BootstrapResult bootstrap_se(const MediationDataset& d, Pipeline&& pipeline, const BootstrapConfig& cfg) {
  if (cfg.B < 1) throw ValidationError("bootstrap replicate count must be >= 1");
  BootstrapResult res;
  res.point = pipeline(d);
  res.replicates.assign(static_cast<std::size_t>(cfg.B), std::numeric_limits<double>::quiet_NaN());
  parallel_for(static_cast<std::size_t>(cfg.B), cfg.threads, [&](std::size_t b) {
    try {
      const auto rows = bootstrap_rows(d.n(), cfg.seed, static_cast<int>(b));
      const double v = pipeline(d.rows(rows));
      if (std::isfinite(v)) res.replicates[b] = v;
    } catch (const Error&) {
    }
  });
  std::vector<double> ok;
  for (double v : res.replicates)
    if (std::isfinite(v)) ok.push_back(v);
  res.failures = cfg.B - static_cast<int>(ok.size());
  if (ok.empty() || res.failures > cfg.max_failure_rate * cfg.B)
    throw SolverError("bootstrap unstable: " + std::to_string(res.failures) + " of " + std::to_string(cfg.B) +
                      " replicates failed");
  if (ok.size() > 1) {
    double mean = 0.0;
    for (double v : ok) mean += v;
    mean /= static_cast<double>(ok.size());
    double ss = 0.0;
    for (double v : ok) ss += (v - mean) * (v - mean);
    res.se = std::sqrt(ss / static_cast<double>(ok.size() - 1));
  }
  if (cfg.percentile) {
    std::sort(ok.begin(), ok.end());
    res.ci = {std::min(res.point, quantile_sorted(ok, 0.025)), std::max(res.point, quantile_sorted(ok, 0.975))};
  } else {
    res.ci = {res.point - kNormal975 * res.se, res.point + kNormal975 * res.se};
  }
  return res;
}

}  // namespace proxmed
