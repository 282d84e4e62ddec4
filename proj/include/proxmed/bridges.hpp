#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "data.hpp"
#include "error.hpp"

namespace proxmed {

// Parametric confounding bridges.
//
//   h1(W,M,X) = b0 + bw'W + bm M + bx'phi(X)          outcome bridge, treated arm
//   h0(W,X)   = b0 + bw'W + bx'phi(X)                 outcome bridge, control arm
//   q0(Z,X)   = 1 + exp{-(g0 + gz'Z + gx'phi(X))}      treatment bridge, control arm
//   q1(Z,M,X) = q0(Z,X) exp(g0 + gz'Z + gm M + gx'phi(X))
//
// Parameter layouts follow the feature order: intercept, proxies, mediator, covariates.

enum class Bridge { h1, h0, q0, q1 };

inline std::string_view to_string(Bridge b) {
  switch (b) {
    case Bridge::h1: return "h1";
    case Bridge::h0: return "h0";
    case Bridge::q0: return "q0";
    case Bridge::q1: return "q1";
  }
  return "?";
}

inline Bridge bridge_from_string(std::string_view s) {
  for (Bridge b : {Bridge::h1, Bridge::h0, Bridge::q0, Bridge::q1})
    if (to_string(b) == s) return b;
  throw ValidationError("unknown bridge tag '" + std::string(s) + "'");
}

/// Exponent arguments are clamped to this range before exponentiation.
inline constexpr double kExpClamp = 700.0;

struct ClampCounter {
  std::size_t events = 0;
};

inline double clamped_exp(double arg, ClampCounter* counter = nullptr) {
  if (arg > kExpClamp || arg < -kExpClamp) {
    if (counter) ++counter->events;
    arg = std::clamp(arg, -kExpClamp, kExpClamp);
  }
  return std::exp(arg);
}

struct BridgeSpec {
  FeatureMap h1, h0, q0, q1;

  static BridgeSpec identity(Index px) {
    const auto id = FeatureMap::identity(px);
    return {id, id, id, id};
  }

  const FeatureMap& map(Bridge b) const {
    switch (b) {
      case Bridge::h1: return h1;
      case Bridge::h0: return h0;
      case Bridge::q0: return q0;
      case Bridge::q1: return q1;
    }
    return h1;
  }

  FeatureMap& map(Bridge b) { return const_cast<FeatureMap&>(std::as_const(*this).map(b)); }

  void check(Index px) const {
    for (Bridge b : {Bridge::h1, Bridge::h0, Bridge::q0, Bridge::q1})
      if (map(b).size() != px)
        throw ValidationError("feature map for " + std::string(to_string(b)) + " covers " +
                              std::to_string(map(b).size()) + " covariates, data has " + std::to_string(px));
  }

  /// Bridges whose covariates enter through |x|^(1/2).
  std::vector<Bridge> misspecified() const {
    std::vector<Bridge> out;
    for (Bridge b : {Bridge::h1, Bridge::h0, Bridge::q0, Bridge::q1})
      if (!map(b).is_identity()) out.push_back(b);
    return out;
  }

  static BridgeSpec with_sqrt_abs(Index px, const std::vector<Bridge>& bridges) {
    auto spec = identity(px);
    for (Bridge b : bridges) spec.map(b) = FeatureMap::sqrt_abs(px);
    return spec;
  }
};

struct BridgeParams {
  VectorXd beta1, beta0, gamma0, gamma1;

  static Index dim(Bridge b, Index pw, Index pz, Index px) {
    switch (b) {
      case Bridge::h1: return 2 + pw + px;
      case Bridge::h0: return 1 + pw + px;
      case Bridge::q0: return 1 + pz + px;
      case Bridge::q1: return 2 + pz + px;
    }
    return 0;
  }

  const VectorXd& get(Bridge b) const {
    switch (b) {
      case Bridge::h1: return beta1;
      case Bridge::h0: return beta0;
      case Bridge::q0: return gamma0;
      case Bridge::q1: return gamma1;
    }
    return beta1;
  }
};

/// Coefficient labels for one bridge, in parameter order.
inline std::vector<std::string> coefficient_names(Bridge b, const MediationDataset& data) {
  MediationDataset d = data;
  d.fill_default_names();
  std::vector<std::string> names{"(intercept)"};
  const auto& proxies = (b == Bridge::h1 || b == Bridge::h0) ? d.w_names : d.z_names;
  names.insert(names.end(), proxies.begin(), proxies.end());
  if (b == Bridge::h1 || b == Bridge::q1) names.push_back(d.m_name);
  names.insert(names.end(), d.x_names.begin(), d.x_names.end());
  return names;
}

inline nlohmann::json to_json(const BridgeParams& p, const MediationDataset& data) {
  nlohmann::json j = nlohmann::json::object();
  auto put = [&](const char* key, Bridge b, const VectorXd& v) {
    if (v.size() == 0) return;
    j[key] = {{"names", coefficient_names(b, data)}, {"values", std::vector<double>(v.data(), v.data() + v.size())}};
  };
  put("beta1", Bridge::h1, p.beta1);
  put("beta0", Bridge::h0, p.beta0);
  put("gamma0", Bridge::q0, p.gamma0);
  put("gamma1", Bridge::q1, p.gamma1);
  return j;
}

inline BridgeParams bridge_params_from_json(const nlohmann::json& j) {
  BridgeParams p;
  auto get = [&](const char* key, VectorXd& v) {
    if (!j.contains(key)) return;
    const auto vals = j.at(key).at("values").get<std::vector<double>>();
    v = Eigen::Map<const VectorXd>(vals.data(), static_cast<Index>(vals.size()));
  };
  get("beta1", p.beta1);
  get("beta0", p.beta0);
  get("gamma0", p.gamma0);
  get("gamma1", p.gamma1);
  return p;
}

// ---------------------------------------------------------------------------
// Pointwise evaluation
// ---------------------------------------------------------------------------

using ConstVec = Eigen::Ref<const VectorXd>;

namespace detail {

inline void expect_dim(Index got, Index want, std::string_view what) {
  if (got != want)
    throw ValidationError("dimension mismatch for " + std::string(what) + ": parameter length " +
                          std::to_string(got) + ", features " + std::to_string(want));
}

inline double linear(const ConstVec& coef, double lead, const ConstVec& proxy, std::optional<double> m,
                     const ConstVec& x) {
  Index k = 0;
  double s = coef(k++) * lead;
  for (Index j = 0; j < proxy.size(); ++j) s += coef(k++) * proxy(j);
  if (m) s += coef(k++) * *m;
  for (Index j = 0; j < x.size(); ++j) s += coef(k++) * x(j);
  return s;
}

}  // namespace detail

inline double eval_h1(const ConstVec& beta1, const ConstVec& w, double m, const ConstVec& x) {
  detail::expect_dim(beta1.size(), 2 + w.size() + x.size(), "h1");
  return detail::linear(beta1, 1.0, w, m, x);
}

inline double eval_h0(const ConstVec& beta0, const ConstVec& w, const ConstVec& x) {
  detail::expect_dim(beta0.size(), 1 + w.size() + x.size(), "h0");
  return detail::linear(beta0, 1.0, w, std::nullopt, x);
}

inline double eval_q0(const ConstVec& gamma0, const ConstVec& z, const ConstVec& x, ClampCounter* clamp = nullptr) {
  detail::expect_dim(gamma0.size(), 1 + z.size() + x.size(), "q0");
  return 1.0 + clamped_exp(-detail::linear(gamma0, 1.0, z, std::nullopt, x), clamp);
}

inline double eval_q1(const ConstVec& gamma1, const ConstVec& gamma0, const ConstVec& z, double m,
                      const ConstVec& x, ClampCounter* clamp = nullptr) {
  detail::expect_dim(gamma1.size(), 2 + z.size() + x.size(), "q1");
  return eval_q0(gamma0, z, x, clamp) * clamped_exp(detail::linear(gamma1, 1.0, z, m, x), clamp);
}

/// One observation's bridge inputs (covariates already featurized).
struct BridgePoint {
  VectorXd w, z, x;
  double m = 0.0;
};

/// Analytic gradient of a bridge with respect to its own parameters. For q1
/// the gradient is taken in gamma1 with gamma0 held fixed.
inline VectorXd grad_params(Bridge tag, const BridgeParams& params, const BridgePoint& pt) {
  auto features = [&](const VectorXd& proxy, bool with_m) {
    VectorXd f(1 + proxy.size() + (with_m ? 1 : 0) + pt.x.size());
    Index k = 0;
    f(k++) = 1.0;
    f.segment(k, proxy.size()) = proxy;
    k += proxy.size();
    if (with_m) f(k++) = pt.m;
    f.segment(k, pt.x.size()) = pt.x;
    return f;
  };
  switch (tag) {
    case Bridge::h1:
      detail::expect_dim(params.beta1.size(), 2 + pt.w.size() + pt.x.size(), "h1");
      return features(pt.w, true);
    case Bridge::h0:
      detail::expect_dim(params.beta0.size(), 1 + pt.w.size() + pt.x.size(), "h0");
      return features(pt.w, false);
    case Bridge::q0: {
      const VectorXd g = features(pt.z, false);
      detail::expect_dim(params.gamma0.size(), g.size(), "q0");
      return -clamped_exp(-params.gamma0.dot(g)) * g;
    }
    case Bridge::q1: {
      const VectorXd g = features(pt.z, true);
      detail::expect_dim(params.gamma1.size(), g.size(), "q1");
      return eval_q1(params.gamma1, params.gamma0, pt.z, pt.m, pt.x) * g;
    }
  }
  throw ValidationError("unknown bridge tag");
}

inline VectorXd grad_params(std::string_view tag, const BridgeParams& params, const BridgePoint& pt) {
  return grad_params(bridge_from_string(tag), params, pt);
}

// ---------------------------------------------------------------------------
// Design matrices
// ---------------------------------------------------------------------------

/// Optional user instrument matrices (n x dim); each must keep its system square.
struct Instruments {
  std::optional<MatrixXd> c1, c0, d0, d1;
};

/// Feature and instrument matrices for every bridge, one row per observation.
///
///   h1: [1 W M phi_h1(X)]   c1: [1 Z M phi_h1(X)]
///   h0: [1 W phi_h0(X)]     c0: [1 Z phi_h0(X)]
///   q0: [1 Z phi_q0(X)]     d0: [1 W phi_q0(X)]
///   q1: [1 Z M phi_q1(X)]   d1: [1 W M phi_q1(X)]
struct BridgeDesign {
  MatrixXd h1, h0, q0, q1;
  MatrixXd c1, c0, d0, d1;
  bool custom_instruments = false;
};

namespace detail {

inline MatrixXd stack(const MatrixXd& proxy, const VectorXd* m, const MatrixXd& x) {
  const Index n = proxy.rows();
  MatrixXd out(n, 1 + proxy.cols() + (m ? 1 : 0) + x.cols());
  Index k = 0;
  out.col(k++).setOnes();
  out.middleCols(k, proxy.cols()) = proxy;
  k += proxy.cols();
  if (m) out.col(k++) = *m;
  out.middleCols(k, x.cols()) = x;
  return out;
}

}  // namespace detail

/// Feature matrix of one bridge, without instruments.
inline MatrixXd bridge_features(const MediationDataset& d, const FeatureMap& map, Bridge b) {
  const MatrixXd xf = map.apply(d.x);
  switch (b) {
    case Bridge::h1: return detail::stack(d.w, &d.m, xf);
    case Bridge::h0: return detail::stack(d.w, nullptr, xf);
    case Bridge::q0: return detail::stack(d.z, nullptr, xf);
    case Bridge::q1: return detail::stack(d.z, &d.m, xf);
  }
  return {};
}

inline BridgeDesign make_design(const MediationDataset& d, const BridgeSpec& spec, const Instruments& inst = {}) {
  spec.check(d.px());
  const MatrixXd xh1 = spec.h1.apply(d.x), xh0 = spec.h0.apply(d.x);
  const MatrixXd xq0 = spec.q0.apply(d.x), xq1 = spec.q1.apply(d.x);
  BridgeDesign des;
  des.h1 = detail::stack(d.w, &d.m, xh1);
  des.h0 = detail::stack(d.w, nullptr, xh0);
  des.q0 = detail::stack(d.z, nullptr, xq0);
  des.q1 = detail::stack(d.z, &d.m, xq1);

  const bool square = d.pz() == d.pw();
  auto pick = [&](const std::optional<MatrixXd>& user, MatrixXd fallback, const MatrixXd& features,
                  const char* name) -> MatrixXd {
    if (user) {
      if (user->rows() != d.n() || user->cols() != features.cols())
        throw ValidationError(std::string("instrument matrix ") + name + " must be " + std::to_string(d.n()) + " x " +
                              std::to_string(features.cols()));
      des.custom_instruments = true;
      return *user;
    }
    if (!square)
      throw ValidationError("dimension mismatch: p_z (" + std::to_string(d.pz()) + ") != p_w (" +
                            std::to_string(d.pw()) + "); supply custom instruments for " + name);
    return fallback;
  };
  des.c1 = pick(inst.c1, detail::stack(d.z, &d.m, xh1), des.h1, "c1");
  des.c0 = pick(inst.c0, detail::stack(d.z, nullptr, xh0), des.h0, "c0");
  des.d0 = pick(inst.d0, detail::stack(d.w, nullptr, xq0), des.q0, "d0");
  des.d1 = pick(inst.d1, detail::stack(d.w, &d.m, xq1), des.q1, "d1");
  return des;
}

/// q0 over all rows: 1 + exp(-G gamma0).
inline VectorXd q0_values(const MatrixXd& g0, const VectorXd& gamma0, ClampCounter* clamp = nullptr) {
  const VectorXd lin = g0 * gamma0;
  VectorXd out(lin.size());
  for (Index i = 0; i < lin.size(); ++i) out(i) = 1.0 + clamped_exp(-lin(i), clamp);
  return out;
}

/// exp(G gamma1) over all rows (the q1 factor multiplying q0).
inline VectorXd q1_factor(const MatrixXd& g1, const VectorXd& gamma1, ClampCounter* clamp = nullptr) {
  const VectorXd lin = g1 * gamma1;
  VectorXd out(lin.size());
  for (Index i = 0; i < lin.size(); ++i) out(i) = clamped_exp(lin(i), clamp);
  return out;
}

}  // namespace proxmed
