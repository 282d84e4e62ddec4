#include <gtest/gtest.h>

#include <proxmed/proxmed.hpp>

#include <cmath>
#include <map>

using namespace proxmed;

namespace {

MediationDataset sample(Index n, std::uint64_t seed, const DgpConfig& cfg = DgpConfig::baseline()) {
  return generate(cfg, n, seed).data;
}

struct LargeSample : ::testing::Test {
  static void SetUpTestSuite() {
    data = new MediationDataset(sample(100000, 7));
    bridges = new FittedBridges(fit_bridges(*data, BridgeSpec::identity(2)));
  }
  static void TearDownTestSuite() {
    delete bridges;
    delete data;
  }
  static MediationDataset* data;
  static FittedBridges* bridges;
};
MediationDataset* LargeSample::data = nullptr;
FittedBridges* LargeSample::bridges = nullptr;

std::map<Estimand, EstimateResult> by_estimand(const std::vector<EstimateResult>& rs) {
  std::map<Estimand, EstimateResult> out;
  for (const auto& r : rs) out.emplace(r.estimand, r);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// estimators

TEST(PsiTerms, DegenerateInputs) {
  const Index n = 6;
  const VectorXd a = (VectorXd(n) << 1, 0, 1, 0, 1, 1).finished();
  const VectorXd y = VectorXd::LinSpaced(n, -1, 4);
  BridgeValues v{VectorXd::Constant(n, 2.0), VectorXd::Zero(n), VectorXd::Constant(n, 1.5),
                 VectorXd::Constant(n, 0.7)};
  EXPECT_EQ(psi_terms(Method::p_or, a, y, v).mean(), 0.0);
  EXPECT_EQ(psi_terms(Method::p_ipw, a, VectorXd::Zero(n), v).mean(), 0.0);
  EXPECT_EQ(psi_terms(Method::p_hybrid, VectorXd::Ones(n), y, v).mean(), 0.0);
  EXPECT_THROW(psi_terms(Method::ols, a, y, v), ValidationError);
}

TEST(PsiTerms, MultiplyRobustCollapsesWithZeroQ) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto d = sample(700, seed);
    const auto fb = fit_bridges(d, BridgeSpec::with_sqrt_abs(2, {Bridge::q1}));
    auto v = evaluate(d, fb);
    v.q0.setZero();
    v.q1.setZero();
    EXPECT_EQ(psi_terms(Method::p_mr, d.a, d.y, v).mean(), psi_por(d, fb).point);
  }
}

TEST(DeltaPdr, ConstantOutcome) {
  auto d = sample(1000, 4);
  d.y.setConstant(3.25);
  for (int arm : {0, 1}) EXPECT_NEAR(delta_pdr(d, arm).point, 3.25, 1e-12);
  EXPECT_THROW(delta_pdr(d, 2), ValidationError);
}

TEST(Effects, TelescopingIsExact) {
  const auto d = sample(1500, 5);
  const auto spec = BridgeSpec::with_sqrt_abs(2, {Bridge::h0});
  const auto fb = fit_bridges(d, spec);
  const auto popt = PipelineOptions::for_spec(spec);
  for (Method m : kProximalMethods) {
    auto e = by_estimand(effects(d, fb, m, popt.dr));
    EXPECT_EQ(e.at(Estimand::nde_0).point + e.at(Estimand::nie_1).point, e.at(Estimand::total).point);
    EXPECT_EQ(e.at(Estimand::nde_0).point, e.at(Estimand::psi_10).point - e.at(Estimand::ey0).point);
    EXPECT_EQ(e.at(Estimand::nie_1).point, e.at(Estimand::ey1).point - e.at(Estimand::psi_10).point);
  }
}

TEST_F(LargeSample, ProximalEstimatorsAreConsistent) {
  std::vector<double> psi;
  for (Method m : kProximalMethods) {
    psi.push_back(estimate_psi(*data, *bridges, m).point);
    EXPECT_NEAR(psi.back(), 4.05, 0.05) << to_string(m);
  }
  for (double a : psi)
    for (double b : psi) EXPECT_LT(std::abs(a - b), 0.05);
}

TEST_F(LargeSample, EffectsMatchOracle) {
  const auto popt = PipelineOptions::for_spec(BridgeSpec::identity(2));
  EXPECT_NEAR(delta_pdr(*data, 0, popt.dr).point, 2.05, 0.05);
  EXPECT_NEAR(delta_pdr(*data, 1, popt.dr).point, 3.75, 0.05);
  auto e = by_estimand(effects(*data, *bridges, Method::p_mr, popt.dr));
  EXPECT_NEAR(e.at(Estimand::nde_0).point, 2.0, 0.05);
  EXPECT_NEAR(e.at(Estimand::nie_1).point, -0.3, 0.05);
  EXPECT_NEAR(e.at(Estimand::total).point, 1.7, 0.05);
}

TEST_F(LargeSample, LocationShiftMovesOutcomeRegressionEstimators) {
  auto shifted = *data;
  constexpr double c = 1.75;
  shifted.y.array() += c;
  const auto fb = fit_bridges(shifted, BridgeSpec::identity(2));
  EXPECT_NEAR(psi_por(shifted, fb).point, psi_por(*data, *bridges).point + c, 1e-9);
  EXPECT_NEAR(psi_pmr(shifted, fb).point, psi_pmr(*data, *bridges).point + c, 1e-9);
}

struct RobustnessCase {
  int experiment;
  std::vector<Method> inconsistent;
};

class MultipleRobustness : public ::testing::TestWithParam<RobustnessCase> {};

TEST_P(MultipleRobustness, MultiplyRobustStaysConsistent) {
  const auto& c = GetParam();
  const auto spec = ExperimentSpec::preset(c.experiment);
  const auto d = generate(spec.dgp, 100000, 21).data;
  const auto fb = fit_bridges(d, spec.bridge_spec());
  EXPECT_NEAR(psi_pmr(d, fb).point, 4.05, 0.05);
  for (Method m : c.inconsistent) EXPECT_GT(std::abs(estimate_psi(d, fb, m).point - 4.05), 0.1) << to_string(m);
}

INSTANTIATE_TEST_SUITE_P(Experiments, MultipleRobustness,
                         ::testing::Values(RobustnessCase{2, {Method::p_ipw, Method::p_hybrid}},
                                           RobustnessCase{3, {Method::p_or}},
                                           RobustnessCase{4, {Method::p_hybrid, Method::p_or}}));

TEST(NaiveOls, ExactRecoveryWithoutNoise) {
  auto d = sample(400, 8);
  for (Index i = 0; i < d.n(); ++i)
    d.y(i) = 1 + 2 * d.a(i) + 0.5 * d.m(i) + d.x(i, 0) - d.x(i, 1) + 0.3 * d.z(i, 0) + 0.7 * d.w(i, 0);
  const auto r = naive_ols(d);
  EXPECT_NEAR(r.point, 2.0, 1e-10);
  EXPECT_EQ(r.estimand, Estimand::nde_0);
  ASSERT_TRUE(r.se.has_value());
  EXPECT_LT(*r.se, 1e-8);
}

TEST(NaiveOls, RankDeficientDesign) {
  auto d = sample(400, 8);
  d.w = d.z;
  EXPECT_THROW(naive_ols(d), SolverError);
  EXPECT_NO_THROW(naive_ols(d, false));
}

TEST(FitEta0, RecoversBridgeWithoutMediator) {
  const auto d = sample(800, 9);
  const auto map = FeatureMap::identity(2);
  const VectorXd beta1 = (VectorXd(5) << 0.5, 1.5, 0.0, -1.0, 2.0).finished();
  const VectorXd eta = fit_eta0(d, beta1, map, map);
  EXPECT_LE((eta - (VectorXd(4) << 0.5, 1.5, -1.0, 2.0).finished()).lpNorm<Eigen::Infinity>(), 1e-10);
}

TEST(FitEta0, NormalEquationsHoldAmongControls) {
  const auto d = sample(800, 9);
  const auto fb = fit_bridges(d, BridgeSpec::identity(2), FitOptions{needs_for(Method::p_or)});
  const VectorXd eta = fit_eta0(d, fb);
  const MatrixXd f = bridge_features(d, FeatureMap::identity(2), Bridge::h0);
  const VectorXd resid = fb.h1() - f * eta;
  const VectorXd ctrl = arm_indicator(d.a, 0);
  const VectorXd score = f.transpose() * (ctrl.array() * resid.array()).matrix() / double(d.n());
  EXPECT_LE(score.lpNorm<Eigen::Infinity>(), 1e-8);
}

TEST(PsiRct, ZeroOutcomeGivesZero) {
  auto d = sample(2000, 10, DgpConfig::rct());
  d.y.setZero();
  const auto rb = fit_rct_bridges(d);
  for (RctVariant v : {RctVariant::or_, RctVariant::ipw, RctVariant::mr})
    EXPECT_NEAR(psi_rct(d, rb, Propensity::known(0.5), v).point, 0.0, 1e-12);
}

TEST(PsiRct, LargeSampleVariantsMatchOracle) {
  const auto cfg = DgpConfig::rct();
  const auto truth = closed_form_truth(cfg);
  ASSERT_TRUE(truth);
  const auto d = sample(100000, 11, cfg);
  const auto rb = fit_rct_bridges(d);
  for (const auto& prop : {Propensity::marginal(), Propensity::known(0.5), Propensity::logistic()})
    for (RctVariant v : {RctVariant::or_, RctVariant::ipw, RctVariant::mr})
      EXPECT_NEAR(psi_rct(d, rb, prop, v).point, truth->psi, 0.05);
}

TEST(PsiRct, PropensityOutOfRange) {
  const auto d = sample(500, 12, DgpConfig::rct());
  const auto rb = fit_rct_bridges(d);
  EXPECT_THROW(psi_rct(d, rb, Propensity::known(0.995), RctVariant::mr), ValidationError);
}

TEST(EstimateResult, AttachValidates) {
  EstimateResult r;
  r.point = 1.0;
  EXPECT_THROW(r.attach(-0.1, {0.5, 1.5}), ValidationError);
  EXPECT_THROW(r.attach(0.1, {1.2, 1.5}), ValidationError);
  r.attach_normal(0.5);
  EXPECT_NEAR(r.ci->first, 1.0 - kNormal975 * 0.5, 1e-12);
  EXPECT_EQ(to_json(r)["se"], 0.5);
}

TEST(Methods, NamesRoundTrip) {
  for (Method m : {Method::p_or, Method::p_hybrid, Method::p_ipw, Method::p_mr, Method::p_dr, Method::ols,
                   Method::rct_or, Method::rct_ipw, Method::rct_mr})
    EXPECT_EQ(method_from_string(to_string(m)), m);
  EXPECT_THROW(method_from_string("P-XX"), ValidationError);
}

TEST(ThetaPoint, MatchesComponents) {
  const auto d = sample(2000, 13);
  const auto spec = BridgeSpec::identity(2);
  const auto popt = PipelineOptions::for_spec(spec);
  const auto fb = fit_bridges(d, spec);
  for (Method m : kProximalMethods)
    EXPECT_EQ(theta_point(d, m, popt), estimate_psi(d, fb, m).point - fit_pdr(d, 0, popt.dr).point);
}

// ---------------------------------------------------------------------------
// inference: the analytic bread against a numerical Jacobian of independently
// coded stacked moments

namespace {

struct RawMoments {
  const MediationDataset& d;
  Method method;

  MatrixXd f(bool use_z, bool with_m) const {
    MatrixXd out(d.n(), with_m ? 5 : 4);
    for (Index i = 0; i < d.n(); ++i) {
      Index k = 0;
      out(i, k++) = 1;
      out(i, k++) = use_z ? d.z(i, 0) : d.w(i, 0);
      if (with_m) out(i, k++) = d.m(i);
      out(i, k++) = d.x(i, 0);
      out(i, k++) = d.x(i, 1);
    }
    return out;
  }

  // theta = (beta1 5, beta0 4, gamma0 4, gamma1 5, beta~ 4, gamma~ 4, psi, delta0)
  VectorXd operator()(const VectorXd& th) const {
    const VectorXd b1 = th.segment(0, 5), b0 = th.segment(5, 4), g0 = th.segment(9, 4), g1 = th.segment(13, 5),
                   bt = th.segment(18, 4), gt = th.segment(22, 4);
    const double psi = th(26), delta = th(27);
    const MatrixXd W1 = f(false, true), Z1 = f(true, true), W0 = f(false, false), Z0 = f(true, false);
    const VectorXd A = d.a, C = (1.0 - d.a.array()).matrix();
    const VectorXd h1 = W1 * b1, h0 = W0 * b0, ht = W0 * bt;
    const VectorXd q0 = (1.0 + (-(Z0 * g0)).array().exp()).matrix();
    const VectorXd q1 = (q0.array() * (Z1 * g1).array().exp()).matrix();
    const VectorXd qt = (1.0 + (-(Z0 * gt)).array().exp()).matrix();
    VectorXd terms;
    switch (method) {
      case Method::p_or: terms = h0; break;
      case Method::p_hybrid: terms = (C.array() * q0.array() * h1.array()).matrix(); break;
      case Method::p_ipw: terms = (A.array() * q1.array() * d.y.array()).matrix(); break;
      default:
        terms = (A.array() * q1.array() * (d.y - h1).array() + C.array() * q0.array() * (h1 - h0).array() +
                 h0.array())
                    .matrix();
    }
    const double n = static_cast<double>(d.n());
    VectorXd out(28);
    out.segment(0, 5) = Z1.transpose() * (A.array() * (d.y - h1).array()).matrix() / n;
    out.segment(5, 4) = Z0.transpose() * (C.array() * (h1 - h0).array()).matrix() / n;
    out.segment(9, 4) = W0.transpose() * (C.array() * q0.array() - 1.0).matrix() / n;
    out.segment(13, 5) = W1.transpose() * (A.array() * q1.array() - C.array() * q0.array()).matrix() / n;
    out.segment(18, 4) = Z0.transpose() * (C.array() * (d.y - ht).array()).matrix() / n;
    out.segment(22, 4) = W0.transpose() * (C.array() * qt.array() - 1.0).matrix() / n;
    out(26) = terms.mean() - psi;
    out(27) = (C.array() * qt.array() * (d.y - ht).array() + ht.array()).mean() - delta;
    return out;
  }
};

}  // namespace

class BreadCheck : public ::testing::TestWithParam<Method> {};

TEST_P(BreadCheck, MatchesNumericalJacobian) {
  const Method m = GetParam();
  const auto d = sample(1000, 3);
  const auto spec = BridgeSpec::identity(2);
  const auto fb = fit_bridges(d, spec);
  const auto dr = fit_pdr(d, 0, PipelineOptions::for_spec(spec).dr);
  const auto S = stack_moments(d, fb, m, {&dr});

  VectorXd th(28);
  th << fb.params.beta1, fb.params.beta0, fb.params.gamma0, fb.params.gamma1, dr.outcome.params, dr.treatment.params,
      estimate_psi(d, fb, m).point, dr.point;
  const RawMoments raw{d, m};
  // sample moments vanish at the estimates
  EXPECT_LE(raw(th).lpNorm<Eigen::Infinity>(), 1e-8);

  // The stack holds only the blocks this method uses; map them to the full layout.
  const std::map<std::string, std::pair<Index, Index>> layout{
      {"beta1", {0, 5}}, {"beta0", {5, 4}},  {"gamma0", {9, 4}}, {"gamma1", {13, 5}},
      {"beta~0", {18, 4}}, {"gamma~0", {22, 4}}, {"psi", {26, 1}},  {"delta0", {27, 1}}};
  std::vector<Index> pos;
  for (const auto& [name, off] : S.blocks)
    for (Index k = 0; k < layout.at(name).second; ++k) pos.push_back(layout.at(name).first + k);
  ASSERT_EQ(static_cast<Index>(pos.size()), S.dim());

  MatrixXd J(28, 28);
  for (Index k = 0; k < 28; ++k) {
    const double h = 1e-6 * std::max(1.0, std::abs(th(k)));
    VectorXd up = th, dn = th;
    up(k) += h;
    dn(k) -= h;
    J.col(k) = (raw(up) - raw(dn)) / (2 * h);
  }
  double worst = 0;
  for (Index r = 0; r < S.dim(); ++r)
    for (Index c = 0; c < S.dim(); ++c)
      worst = std::max(worst, std::abs(S.bread(r, c) - J(pos[static_cast<std::size_t>(r)], pos[static_cast<std::size_t>(c)])));
  EXPECT_LE(worst, 1e-6 * std::max(1.0, S.bread.lpNorm<Eigen::Infinity>()));

  // per-row moments average to the raw moment vector
  const VectorXd mean_rows = S.moments.colwise().mean();
  for (Index r = 0; r < S.dim(); ++r) EXPECT_NEAR(mean_rows(r), raw(th)(pos[static_cast<std::size_t>(r)]), 1e-9);
}

INSTANTIATE_TEST_SUITE_P(Methods, BreadCheck,
                         ::testing::Values(Method::p_or, Method::p_hybrid, Method::p_ipw, Method::p_mr),
                         [](const auto& info) {
                           std::string s(to_string(info.param));
                           std::erase(s, '-');
                           return s;
                         });

TEST(Sandwich, MeanCaseEqualsSampleSdOverRootN) {
  const VectorXd y = sample(500, 14).y;
  StackedSystem S;
  S.moments = (y.array() - y.mean()).matrix();
  S.bread = -MatrixXd::Ones(1, 1);
  S.psi_index = 0;
  const double sd = std::sqrt((y.array() - y.mean()).square().mean());
  EXPECT_NEAR(std::sqrt(S.variance(VectorXd::Ones(1))), sd / std::sqrt(500.0), 1e-14);
}

TEST(Sandwich, CovarianceSymmetricAndIntervalsContainPoint) {
  const auto d = sample(2000, 15);
  const auto spec = BridgeSpec::identity(2);
  const auto fb = fit_bridges(d, spec);
  const auto popt = PipelineOptions::for_spec(spec);
  const auto dr0 = fit_pdr(d, 0, popt.dr), dr1 = fit_pdr(d, 1, popt.dr);
  for (Method m : kProximalMethods) {
    const auto S = stack_moments(d, fb, m, {&dr0, &dr1});
    const MatrixXd V = S.covariance();
    EXPECT_LE((V - V.transpose()).lpNorm<Eigen::Infinity>(), 1e-8 * V.lpNorm<Eigen::Infinity>());
    EXPECT_GE(V.diagonal().minCoeff(), 0.0);
    const auto [se, ci] = sandwich_se(d, fb, m);
    EXPECT_GT(se, 0.0);
    for (const auto& r : effects_with_se(d, fb, m, dr0, dr1)) {
      ASSERT_TRUE(r.se && r.ci);
      EXPECT_LE(r.ci->first, r.point);
      EXPECT_GE(r.ci->second, r.point);
    }
    // extra blocks for E[Y(1)] leave the theta variance unchanged
    const auto e = by_estimand(effects_with_se(d, fb, m, dr0, dr1));
    EXPECT_NEAR(*e.at(Estimand::nde_0).se, sandwich_theta_se(d, fb, m, dr0), 1e-10);
    EXPECT_NEAR(*e.at(Estimand::ey0).se, sandwich_delta_se(d, dr0), 1e-10);
  }
}

// ---------------------------------------------------------------------------
// bootstrap

TEST(Bootstrap, RowsAndQuantiles) {
  const auto r = bootstrap_rows(50, 9, 3);
  EXPECT_EQ(r, bootstrap_rows(50, 9, 3));
  EXPECT_NE(r, bootstrap_rows(50, 9, 4));
  for (Index i : r) {
    EXPECT_GE(i, 0);
    EXPECT_LT(i, 50);
  }
  const std::vector<double> v{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(quantile_sorted(v, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(quantile_sorted(v, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(quantile_sorted(v, 1.0), 4.0);
}

TEST(Bootstrap, SingleReplicateIsDegenerate) {
  const auto d = sample(300, 16);
  BootstrapConfig cfg;
  cfg.B = 1;
  cfg.seed = 5;
  const auto r = bootstrap_se(d, [](const MediationDataset& x) { return x.y.mean(); }, cfg);
  EXPECT_EQ(r.se, 0.0);
  EXPECT_EQ(r.ci.first, r.point);
  EXPECT_EQ(r.ci.second, r.point);
}

TEST(Bootstrap, DeterministicAcrossRunsAndThreads) {
  const auto d = sample(2000, 17);
  const auto popt = PipelineOptions::for_spec(BridgeSpec::identity(2));
  auto pipe = [&](const MediationDataset& x) { return theta_point(x, Method::p_mr, popt); };
  BootstrapConfig cfg;
  cfg.B = 40;
  cfg.seed = 99;
  const auto a = bootstrap_se(d, pipe, cfg);
  const auto b = bootstrap_se(d, pipe, cfg);
  cfg.threads = 3;
  const auto c = bootstrap_se(d, pipe, cfg);
  EXPECT_EQ(a.se, b.se);
  EXPECT_EQ(a.ci, b.ci);
  EXPECT_EQ(a.se, c.se);
  EXPECT_EQ(a.replicates, c.replicates);
  cfg.seed = 100;
  EXPECT_NE(bootstrap_se(d, pipe, cfg).se, a.se);
}

TEST(Bootstrap, MeanMatchesAnalyticStandardError) {
  const auto d = sample(1000, 18);
  BootstrapConfig cfg;
  cfg.B = 400;
  cfg.seed = 1;
  const auto r = bootstrap_se(d, [](const MediationDataset& x) { return x.y.mean(); }, cfg);
  const double sd = std::sqrt((d.y.array() - d.y.mean()).square().sum() / 999.0);
  EXPECT_NEAR(r.se / (sd / std::sqrt(1000.0)), 1.0, 0.15);
}

TEST(Bootstrap, TooManyFailuresIsAnError) {
  const auto d = sample(300, 19);
  BootstrapConfig cfg;
  cfg.B = 20;
  int calls = 0;
  auto flaky = [&](const MediationDataset& x) -> double {
    if (++calls % 2 == 0) throw SolverError("synthetic failure");
    return x.y.mean();
  };
  try {
    bootstrap_se(d, flaky, cfg);
    FAIL();
  } catch (const SolverError& e) {
    EXPECT_NE(std::string(e.what()).find("bootstrap unstable"), std::string::npos);
  }
}

TEST(Bootstrap, PercentileIntervalContainsPoint) {
  const auto d = sample(400, 20);
  BootstrapConfig cfg;
  cfg.B = 50;
  cfg.percentile = true;
  const auto r = bootstrap_se(d, [](const MediationDataset& x) { return x.y.maxCoeff(); }, cfg);
  EXPECT_LE(r.ci.first, r.point);
  EXPECT_GE(r.ci.second, r.point);
}

TEST(Bootstrap, AgreesWithSandwichOnExperimentOneData) {
  const auto spec = ExperimentSpec::preset(1);
  const auto d = generate(spec.dgp, 2000, 1).data;
  const auto popt = PipelineOptions::for_spec(spec.bridge_spec());
  const auto fb = fit_bridges(d, spec.bridge_spec());
  const double sand = sandwich_theta_se(d, fb, Method::p_mr, fit_pdr(d, 0, popt.dr));
  BootstrapConfig cfg;
  cfg.B = 200;
  cfg.seed = 8;
  const auto b = bootstrap_se(d, [&](const MediationDataset& x) { return theta_point(x, Method::p_mr, popt); }, cfg);
  EXPECT_LE(std::abs(sand - b.se) / b.se, 0.15);
  const double length = b.ci.second - b.ci.first;
  EXPECT_GE(length, 0.45);
  EXPECT_LE(length, 0.55);
}
