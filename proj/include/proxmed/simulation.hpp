#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bridges.hpp"
#include "data.hpp"
#include "error.hpp"
#include "estimators.hpp"
#include "inference.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "solvers.hpp"

namespace proxmed {

// Structural model (X1, X2, U jointly normal):
//   A ~ Bernoulli(expit(a0 + a_x'X + a_u U))         (or Bernoulli(p_treat) when randomized)
//   Z = z0 + z_a A + z_x'X + z_u U + sigma_z e_z
//   W = w0 + w_a A + w_x'X + w_u U + sigma_w e_w
//   M = m0 + m_a A + m_x'X + m_u U + sigma_m e_m
//   Y = y0 + y_a A + y_m M + y_w W + y_z Z + y_x'X + y_u U + sigma_y e_y

struct DgpConfig {
  using Vec2 = std::array<double, 2>;
  std::array<double, 3> mean{0.25, 0.25, 0.0};
  std::array<std::array<double, 3>, 3> sigma{{{0.25, 0.0, 0.05}, {0.0, 0.25, 0.05}, {0.05, 0.05, 1.0}}};

  bool randomized = false;
  double p_treat = 0.5;
  double a0 = 0.0;
  Vec2 a_x{-0.5, -0.5};
  double a_u = -0.4;

  double z0 = 0.2, z_a = -0.52;
  Vec2 z_x{0.2, 0.2};
  double z_u = -0.7, sigma_z = 1.0;

  double w0 = 0.3, w_a = 0.0;
  Vec2 w_x{0.2, 0.2};
  double w_u = -0.6, sigma_w = 1.0;

  double m0 = 0.0, m_a = -0.3;
  Vec2 m_x{-0.5, -0.5};
  double m_u = 0.4, sigma_m = 1.0;

  double y0 = 2.0, y_a = 2.0, y_m = 1.0, y_w = 2.0, y_z = 0.0;
  Vec2 y_x{-1.0, -1.0};
  double y_u = -1.0, sigma_y = 2.0;

  static DgpConfig baseline() { return {}; }

  /// Treatment randomized with probability 1/2 and no treatment term in Z.
  static DgpConfig rct() {
    DgpConfig c;
    c.randomized = true;
    c.p_treat = 0.5;
    c.z_a = 0.0;
    return c;
  }

  /// Data-generating overrides of experiments 1-9.
  static DgpConfig experiment(int id) {
    DgpConfig c;
    switch (id) {
      case 1: case 2: case 3: case 4: break;
      case 5: c.a_u = c.m_u = c.y_u = 0.0; break;
      case 6: c.y_z = -0.5; break;
      case 7: c.w_a = 0.2; break;
      case 8: c.w_u = 0.05; break;
      case 9: c.z_u = 0.05; break;
      default: throw ValidationError("experiment id must be in 1..9");
    }
    return c;
  }

  Eigen::Matrix3d covariance() const {
    Eigen::Matrix3d s;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) s(i, j) = sigma[i][j];
    return s;
  }

  void check() const {
    const auto s = covariance();
    if (!s.isApprox(s.transpose(), 0.0)) throw ValidationError("covariance of (X1, X2, U) must be symmetric");
    Eigen::LLT<Eigen::Matrix3d> llt(s);
    if (llt.info() != Eigen::Success) throw ValidationError("covariance of (X1, X2, U) must be positive definite");
    for (double v : {sigma_z, sigma_w, sigma_m, sigma_y})
      if (!(v > 0.0)) throw ValidationError("noise standard deviations must be positive");
    if (randomized && !(p_treat > 0.0 && p_treat < 1.0)) throw ValidationError("p_treat must lie in (0, 1)");
  }

  NLOHMANN_DEFINE_TYPE_INTRUSIVE_WITH_DEFAULT(DgpConfig, mean, sigma, randomized, p_treat, a0, a_x, a_u, z0, z_a, z_x,
                                              z_u, sigma_z, w0, w_a, w_x, w_u, sigma_w, m0, m_a, m_x, m_u, sigma_m, y0,
                                              y_a, y_m, y_w, y_z, y_x, y_u, sigma_y)
};

/// Philox channels of the generator; the stream is the replicate index.
namespace channel {
inline constexpr std::uint32_t xu = 0, treat = 1, z = 2, w = 3, m = 4, y = 5;
}

/// One row with its latent confounder and counterfactuals. Proxies stay at
/// their natural values; only the direct treatment terms of M and Y move.
struct RowDraw {
  double x1, x2, u, a, z, w, m, y;
  double m0, m1;      // M(0), M(1)
  double y1m0, y0m0, y1m1;  // Y{1,M(0)}, Y{0,M(0)} = Y(0), Y{1,M(1)} = Y(1)
};

inline RowDraw draw_row(const DgpConfig& c, const Eigen::Matrix3d& chol, const CounterRng& rng, std::uint32_t i) {
  double e[3];
  rng.normals(i, channel::xu, e);
  const Eigen::Vector3d v = Eigen::Vector3d(c.mean[0], c.mean[1], c.mean[2]) + chol * Eigen::Vector3d(e[0], e[1], e[2]);
  RowDraw r{};
  r.x1 = v(0);
  r.x2 = v(1);
  r.u = v(2);
  const double pa = c.randomized ? c.p_treat
                                 : 1.0 / (1.0 + std::exp(-(c.a0 + c.a_x[0] * r.x1 + c.a_x[1] * r.x2 + c.a_u * r.u)));
  r.a = rng.uniform(i, channel::treat) < pa ? 1.0 : 0.0;
  r.z = c.z0 + c.z_a * r.a + c.z_x[0] * r.x1 + c.z_x[1] * r.x2 + c.z_u * r.u + c.sigma_z * rng.normal(i, channel::z);
  r.w = c.w0 + c.w_a * r.a + c.w_x[0] * r.x1 + c.w_x[1] * r.x2 + c.w_u * r.u + c.sigma_w * rng.normal(i, channel::w);
  const double m_base = c.m0 + c.m_x[0] * r.x1 + c.m_x[1] * r.x2 + c.m_u * r.u + c.sigma_m * rng.normal(i, channel::m);
  r.m0 = m_base;
  r.m1 = m_base + c.m_a;
  r.m = m_base + c.m_a * r.a;
  const double y_base = c.y0 + c.y_w * r.w + c.y_z * r.z + c.y_x[0] * r.x1 + c.y_x[1] * r.x2 + c.y_u * r.u +
                        c.sigma_y * rng.normal(i, channel::y);
  auto y_of = [&](double a, double m) { return y_base + c.y_a * a + c.y_m * m; };
  r.y = y_of(r.a, r.m);
  r.y1m0 = y_of(1.0, r.m0);
  r.y0m0 = y_of(0.0, r.m0);
  r.y1m1 = y_of(1.0, r.m1);
  return r;
}

struct Simulated {
  MediationDataset data;
  VectorXd u;
};

/// Deterministic in (cfg, n, seed, stream).
inline Simulated generate(const DgpConfig& cfg, Index n, std::uint64_t seed, std::uint32_t stream = 0) {
  cfg.check();
  if (n < 1) throw ValidationError("n must be >= 1");
  const Eigen::Matrix3d chol = cfg.covariance().llt().matrixL();
  const CounterRng rng(seed, stream);
  Simulated s;
  auto& d = s.data;
  d.y.resize(n);
  d.a.resize(n);
  d.m.resize(n);
  d.x.resize(n, 2);
  d.z.resize(n, 1);
  d.w.resize(n, 1);
  s.u.resize(n);
  for (Index i = 0; i < n; ++i) {
    const auto r = draw_row(cfg, chol, rng, static_cast<std::uint32_t>(i));
    d.y(i) = r.y;
    d.a(i) = r.a;
    d.m(i) = r.m;
    d.x(i, 0) = r.x1;
    d.x(i, 1) = r.x2;
    d.z(i, 0) = r.z;
    d.w(i, 0) = r.w;
    s.u(i) = r.u;
  }
  d.fill_default_names();
  return s;
}

/// Counterfactual columns for n rows of the same draws `generate` uses.
struct Counterfactuals {
  VectorXd m0, m1, y1m0, y0m0, y1m1;
};

inline Counterfactuals generate_counterfactuals(const DgpConfig& cfg, Index n, std::uint64_t seed,
                                                std::uint32_t stream = 0) {
  cfg.check();
  const Eigen::Matrix3d chol = cfg.covariance().llt().matrixL();
  const CounterRng rng(seed, stream);
  Counterfactuals cf{VectorXd(n), VectorXd(n), VectorXd(n), VectorXd(n), VectorXd(n)};
  for (Index i = 0; i < n; ++i) {
    const auto r = draw_row(cfg, chol, rng, static_cast<std::uint32_t>(i));
    cf.m0(i) = r.m0;
    cf.m1(i) = r.m1;
    cf.y1m0(i) = r.y1m0;
    cf.y0m0(i) = r.y0m0;
    cf.y1m1(i) = r.y1m1;
  }
  return cf;
}

// ---------------------------------------------------------------------------
// Oracle truth
// ---------------------------------------------------------------------------

struct TruthValues {
  double psi = 0, ey0 = 0, ey1 = 0, nde0 = 0, nie1 = 0;
};

inline void to_json(nlohmann::json& j, const TruthValues& t) {
  j = {{"psi", t.psi}, {"ey0", t.ey0}, {"ey1", t.ey1}, {"nde0", t.nde0}, {"nie1", t.nie1}};
}

struct OracleTruth {
  TruthValues value;                      // closed form when available, else Monte Carlo
  std::string method;                     // "closed_form" or "monte_carlo"
  std::optional<TruthValues> closed_form;
  std::optional<TruthValues> monte_carlo;
  TruthValues mc_se;
  Index n_mc = 0;
};

inline nlohmann::json to_json(const OracleTruth& t) {
  nlohmann::json j = {{"method", t.method}, {"n_mc", t.n_mc}};
  nlohmann::json v;
  to_json(v, t.value);
  j["value"] = v;
  if (t.closed_form) to_json(j["closed_form"], *t.closed_form);
  if (t.monte_carlo) {
    to_json(j["monte_carlo"], *t.monte_carlo);
    to_json(j["mc_se"], t.mc_se);
  }
  return j;
}

/// Plug-through of expectations. Needs E[A] only where the natural treatment
/// reaches Y through a proxy; that mean is known only under randomization.
inline std::optional<TruthValues> closed_form_truth(const DgpConfig& c) {
  std::optional<double> ea;
  if (c.randomized) ea = c.p_treat;
  const bool needs_ea = (c.y_z != 0.0 && c.z_a != 0.0) || (c.y_w != 0.0 && c.w_a != 0.0);
  if (needs_ea && !ea) return std::nullopt;
  const double a = ea.value_or(0.0);
  const double ex = c.y_x[0] * c.mean[0] + c.y_x[1] * c.mean[1];
  const double eu = c.mean[2];
  const double em0 = c.m0 + c.m_x[0] * c.mean[0] + c.m_x[1] * c.mean[1] + c.m_u * eu;
  const double ew = c.w0 + c.w_a * a + c.w_x[0] * c.mean[0] + c.w_x[1] * c.mean[1] + c.w_u * eu;
  const double ez = c.z0 + c.z_a * a + c.z_x[0] * c.mean[0] + c.z_x[1] * c.mean[1] + c.z_u * eu;
  const double base = c.y0 + c.y_w * ew + c.y_z * ez + ex + c.y_u * eu;
  TruthValues t;
  t.psi = base + c.y_a + c.y_m * em0;
  t.ey0 = base + c.y_m * em0;
  t.ey1 = base + c.y_a + c.y_m * (em0 + c.m_a);
  t.nde0 = t.psi - t.ey0;
  t.nie1 = t.ey1 - t.psi;
  return t;
}

/// Brute-force counterfactual simulation with n_mc draws (blocked, order-fixed
/// reduction), plus the closed form when one exists.
inline OracleTruth oracle_truth(const DgpConfig& cfg, Index n_mc, std::uint64_t seed, int threads = 1) {
  cfg.check();
  OracleTruth t;
  t.closed_form = closed_form_truth(cfg);
  t.n_mc = n_mc;
  if (n_mc > 0) {
    constexpr Index kBlock = 1 << 16;
    const Index blocks = (n_mc + kBlock - 1) / kBlock;
    struct Acc {
      std::array<double, 3> sum{}, sq{};
      double nie_sq = 0;
    };
    std::vector<Acc> acc(static_cast<std::size_t>(blocks));
    const Eigen::Matrix3d chol = cfg.covariance().llt().matrixL();
    const CounterRng rng(seed, 0);
    parallel_for(static_cast<std::size_t>(blocks), threads, [&](std::size_t b) {
      Acc& a = acc[b];
      const Index lo = static_cast<Index>(b) * kBlock, hi = std::min(n_mc, lo + kBlock);
      for (Index i = lo; i < hi; ++i) {
        const auto r = draw_row(cfg, chol, rng, static_cast<std::uint32_t>(i));
        const double v[3] = {r.y1m0, r.y0m0, r.y1m1};
        for (int k = 0; k < 3; ++k) {
          a.sum[k] += v[k];
          a.sq[k] += v[k] * v[k];
        }
        a.nie_sq += (r.y1m1 - r.y1m0) * (r.y1m1 - r.y1m0);
      }
    });
    std::array<double, 3> sum{}, sq{};
    double nie_sq = 0;
    for (const auto& a : acc) {
      for (int k = 0; k < 3; ++k) {
        sum[k] += a.sum[k];
        sq[k] += a.sq[k];
      }
      nie_sq += a.nie_sq;
    }
    const double nn = static_cast<double>(n_mc);
    auto se = [&](double s, double q) { return std::sqrt(std::max(0.0, q / nn - (s / nn) * (s / nn)) / nn); };
    TruthValues mc;
    mc.psi = sum[0] / nn;
    mc.ey0 = sum[1] / nn;
    mc.ey1 = sum[2] / nn;
    mc.nde0 = mc.psi - mc.ey0;
    mc.nie1 = mc.ey1 - mc.psi;
    t.monte_carlo = mc;
    t.mc_se.psi = se(sum[0], sq[0]);
    t.mc_se.ey0 = se(sum[1], sq[1]);
    t.mc_se.ey1 = se(sum[2], sq[2]);
    t.mc_se.nde0 = 0.0;  // Y{1,M(0)} - Y{0,M(0)} = y_a on every draw
    t.mc_se.nie1 = se(sum[2] - sum[0], nie_sq);
  }
  if (t.closed_form) {
    t.value = *t.closed_form;
    t.method = "closed_form";
  } else if (t.monte_carlo) {
    t.value = *t.monte_carlo;
    t.method = "monte_carlo";
  } else {
    throw ValidationError("no closed form for this configuration; n_mc must be positive");
  }
  return t;
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

enum class InferenceKind { sandwich, bootstrap };

struct ExperimentSpec {
  int id = 1;
  DgpConfig dgp;
  std::vector<Bridge> misspecified;  // bridges using |x|^(1/2) features
  bool ols_include_z = true;
  Index n = 2000;
  int reps = 1000;
  std::uint64_t seed = 1;
  int threads = 1;
  InferenceKind inference = InferenceKind::sandwich;
  int bootstrap_B = 200;
  Index oracle_mc_n = 1'000'000;
  NewtonOptions newton;

  static ExperimentSpec preset(int id) {
    ExperimentSpec s;
    s.id = id;
    s.dgp = DgpConfig::experiment(id);
    switch (id) {
      case 2: s.misspecified = {Bridge::q0, Bridge::q1}; break;
      case 3: s.misspecified = {Bridge::q1, Bridge::h0}; break;
      case 4: s.misspecified = {Bridge::h1, Bridge::h0}; break;
      case 5: s.ols_include_z = false; break;
      default: break;
    }
    return s;
  }

  BridgeSpec bridge_spec() const { return BridgeSpec::with_sqrt_abs(2, misspecified); }

  void check() const {
    if (id < 1 || id > 9) throw ValidationError("experiment id must be in 1..9");
    if (n < 1 || reps < 1) throw ValidationError("n and reps must be positive");
    if (inference == InferenceKind::bootstrap && bootstrap_B < 1) throw ValidationError("bootstrap B must be >= 1");
    dgp.check();
  }
};

inline nlohmann::json to_json(const ExperimentSpec& s) {
  std::vector<std::string> mis;
  for (Bridge b : s.misspecified) mis.emplace_back(to_string(b));
  return {{"id", s.id},
          {"n", s.n},
          {"reps", s.reps},
          {"seed", s.seed},
          {"threads", s.threads},
          {"inference", s.inference == InferenceKind::sandwich ? "sandwich" : "bootstrap"},
          {"bootstrap_B", s.bootstrap_B},
          {"misspecified", mis},
          {"ols_include_z", s.ols_include_z},
          {"oracle_mc_n", s.oracle_mc_n},
          {"dgp", s.dgp}};
}

/// Starts from the preset for `id` and applies any keys present.
inline ExperimentSpec experiment_spec_from_json(const nlohmann::json& j) {
  auto s = ExperimentSpec::preset(j.value("id", 1));
  s.n = j.value("n", s.n);
  s.reps = j.value("reps", s.reps);
  s.seed = j.value("seed", s.seed);
  s.threads = j.value("threads", s.threads);
  s.bootstrap_B = j.value("bootstrap_B", s.bootstrap_B);
  s.ols_include_z = j.value("ols_include_z", s.ols_include_z);
  s.oracle_mc_n = j.value("oracle_mc_n", s.oracle_mc_n);
  if (j.contains("inference")) {
    const auto k = j.at("inference").get<std::string>();
    if (k == "sandwich") s.inference = InferenceKind::sandwich;
    else if (k == "bootstrap") s.inference = InferenceKind::bootstrap;
    else throw ValidationError("inference must be 'sandwich' or 'bootstrap'");
  }
  if (j.contains("misspecified")) {
    s.misspecified.clear();
    for (const auto& b : j.at("misspecified")) s.misspecified.push_back(bridge_from_string(b.get<std::string>()));
  }
  if (j.contains("dgp")) {
    nlohmann::json merged = s.dgp;
    merged.merge_patch(j.at("dgp"));
    s.dgp = merged.get<DgpConfig>();
  }
  s.check();
  return s;
}

struct EstimatorSummary {
  std::string estimator;
  int reps_ok = 0, failures = 0;
  double bias = 0, median_bias = 0, mse = 0, coverage = 0, mean_length = 0, median_length = 0;
};

/// Outcome of one replicate for one estimator.
struct RepOutcome {
  bool ok = false;
  double point = 0, se = 0;
  std::string error;
};

struct MonteCarloReport {
  ExperimentSpec spec;
  OracleTruth truth;
  double target = 0;  // NDE(0) the intervals are scored against
  std::vector<EstimatorSummary> rows;
  std::vector<std::vector<RepOutcome>> outcomes;  // [estimator][rep]
  std::vector<bool> weak_proxy;                  // per rep
  double weak_proxy_fraction = 0;
  bool flagged = false;
  std::vector<std::string> notes;

  const EstimatorSummary& row(std::string_view name) const {
    for (const auto& r : rows)
      if (r.estimator == name) return r;
    throw ValidationError("no estimator '" + std::string(name) + "' in report");
  }
};

inline nlohmann::json to_json(const MonteCarloReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : r.rows)
    rows.push_back({{"estimator", s.estimator},
                    {"reps_ok", s.reps_ok},
                    {"failures", s.failures},
                    {"bias", s.bias},
                    {"median_bias", s.median_bias},
                    {"mse", s.mse},
                    {"coverage", s.coverage},
                    {"mean_length", s.mean_length},
                    {"median_length", s.median_length}});
  return {{"spec", to_json(r.spec)},
          {"truth", to_json(r.truth)},
          {"target_nde0", r.target},
          {"estimators", rows},
          {"weak_proxy_fraction", r.weak_proxy_fraction},
          {"flagged", r.flagged},
          {"notes", r.notes}};
}

inline void write_report_csv(const MonteCarloReport& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "estimator,reps_ok,failures,bias,median_bias,mse,coverage,mean_length,median_length\n";
  for (const auto& s : r.rows)
    out << s.estimator << ',' << s.reps_ok << ',' << s.failures << ',' << detail::format_double(s.bias) << ','
        << detail::format_double(s.median_bias) << ',' << detail::format_double(s.mse) << ','
        << detail::format_double(s.coverage) << ',' << detail::format_double(s.mean_length) << ','
        << detail::format_double(s.median_length) << '\n';
  if (!out) throw ValidationError("cannot write " + path.string());
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const auto k = v.size() / 2;
  return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

inline EstimatorSummary summarize(const std::string& name, const std::vector<RepOutcome>& out, double target) {
  EstimatorSummary s;
  s.estimator = name;
  std::vector<double> err, len;
  int covered = 0;
  for (const auto& o : out) {
    if (!o.ok) {
      ++s.failures;
      continue;
    }
    err.push_back(o.point - target);
    const double half = kNormal975 * o.se;
    len.push_back(2.0 * half);
    if (o.point - half <= target && target <= o.point + half) ++covered;
  }
  s.reps_ok = static_cast<int>(err.size());
  if (err.empty()) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    s.bias = s.median_bias = s.mse = s.coverage = s.mean_length = s.median_length = nan;
    return s;
  }
  const double k = static_cast<double>(err.size());
  for (std::size_t i = 0; i < err.size(); ++i) {
    s.bias += err[i] / k;
    s.mse += err[i] * err[i] / k;
    s.mean_length += len[i] / k;
  }
  s.coverage = covered / k;
  s.median_bias = median_of(err);
  s.median_length = median_of(len);
  return s;
}

inline const std::vector<std::string>& experiment_estimators() {
  static const std::vector<std::string> names{"P-OR", "P-hybrid", "P-IPW", "P-MR", "OLS"};
  return names;
}

/// Runs one replicate: theta = psi^ - delta^(0) for the four proximal methods
/// plus the OLS benchmark. Failures are recorded per estimator.
inline std::vector<RepOutcome> run_replicate(const ExperimentSpec& spec, int rep, bool* weak_proxy = nullptr) {
  const auto data = generate(spec.dgp, spec.n, spec.seed, static_cast<std::uint32_t>(rep)).data;
  std::vector<RepOutcome> out(5);
  const auto bspec = spec.bridge_spec();
  auto popt = PipelineOptions::for_spec(bspec);
  popt.newton = spec.newton;
  popt.dr.newton = spec.newton;

  try {
    FitOptions fo;
    fo.newton = spec.newton;
    fo.strict = false;
    const auto fb = fit_bridges(data, bspec, fo);
    if (weak_proxy) *weak_proxy = fb.weak_proxy();
    std::optional<DrFit> dr0;
    std::string dr_error;
    try {
      dr0 = fit_pdr(data, 0, popt.dr);
    } catch (const Error& e) {
      dr_error = e.what();
    }
    for (std::size_t k = 0; k < 4; ++k) {
      const Method m = kProximalMethods[k];
      auto& o = out[k];
      try {
        if (!dr0) throw SolverError(dr_error);
        const double psi = estimate_psi(data, fb, m).point;
        o.point = psi - dr0->point;
        if (spec.inference == InferenceKind::sandwich) {
          o.se = sandwich_theta_se(data, fb, m, *dr0);
        } else {
          BootstrapConfig bc;
          bc.B = spec.bootstrap_B;
          bc.seed = spec.seed ^ (0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(rep + 1));
          o.se = bootstrap_se(data, [&](const MediationDataset& x) { return theta_point(x, m, popt); }, bc).se;
        }
        o.ok = std::isfinite(o.point) && std::isfinite(o.se);
        if (!o.ok) o.error = "non-finite estimate";
      } catch (const Error& e) {
        o.error = e.what();
      }
    }
  } catch (const Error& e) {
    for (std::size_t k = 0; k < 4; ++k) out[k].error = e.what();
  }
  try {
    const auto ols = naive_ols(data, spec.ols_include_z);
    out[4] = {true, ols.point, *ols.se, {}};
  } catch (const Error& e) {
    out[4].error = e.what();
  }
  return out;
}

inline MonteCarloReport run_experiment(const ExperimentSpec& spec) {
  spec.check();
  MonteCarloReport rep;
  rep.spec = spec;
  rep.truth = oracle_truth(spec.dgp, closed_form_truth(spec.dgp) ? 0 : spec.oracle_mc_n, spec.seed, spec.threads);
  rep.target = rep.truth.value.nde0;
  const auto& names = experiment_estimators();
  std::vector<std::vector<RepOutcome>> by_rep(static_cast<std::size_t>(spec.reps));
  std::vector<char> weak(static_cast<std::size_t>(spec.reps), 0);
  parallel_for(static_cast<std::size_t>(spec.reps), spec.threads, [&](std::size_t r) {
    bool w = false;
    by_rep[r] = run_replicate(spec, static_cast<int>(r), &w);
    weak[r] = w;
  });
  rep.outcomes.assign(names.size(), std::vector<RepOutcome>(static_cast<std::size_t>(spec.reps)));
  for (std::size_t r = 0; r < by_rep.size(); ++r)
    for (std::size_t k = 0; k < names.size(); ++k) rep.outcomes[k][r] = by_rep[r][k];
  int weak_count = 0;
  for (char w : weak) {
    rep.weak_proxy.push_back(w != 0);
    weak_count += w != 0;
  }
  rep.weak_proxy_fraction = static_cast<double>(weak_count) / spec.reps;
  for (std::size_t k = 0; k < names.size(); ++k) {
    rep.rows.push_back(summarize(names[k], rep.outcomes[k], rep.target));
    if (rep.rows.back().failures > 0.1 * spec.reps) {
      rep.flagged = true;
      rep.notes.push_back(names[k] + ": " + std::to_string(rep.rows.back().failures) + " of " +
                          std::to_string(spec.reps) + " replicates failed");
    }
  }
  if (spec.id == 9) rep.notes.push_back("experiment 9 uses z_u = 0.05 for the weakly relevant treatment proxy");
  if (rep.weak_proxy_fraction > 0)
    rep.notes.push_back(std::to_string(weak_count) + " replicates carried weak-proxy warnings");
  return rep;
}

}  // namespace proxmed
