#include <gtest/gtest.h>

#include <proxmed/proxmed.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

using namespace proxmed;

// ---------------------------------------------------------------------------
// data generation

TEST(Generate, DeterministicInSeedAndStream) {
  const auto cfg = DgpConfig::baseline();
  const auto a = generate(cfg, 300, 4).data, b = generate(cfg, 300, 4).data;
  EXPECT_EQ(a.y, b.y);
  EXPECT_EQ(a.x, b.x);
  EXPECT_NE(generate(cfg, 300, 4, 1).data.y, a.y);
  EXPECT_NE(generate(cfg, 300, 5).data.y, a.y);
  // rows are addressed by counter, so a prefix does not depend on n
  const auto prefix = generate(cfg, 120, 4).data;
  EXPECT_EQ(prefix.y, a.y.head(120));
  EXPECT_EQ(prefix.w, a.w.topRows(120));
}

TEST(Generate, ShapesNamesAndBinaryTreatment) {
  const auto s = generate(DgpConfig::baseline(), 250, 2);
  const auto& d = s.data;
  EXPECT_EQ(d.n(), 250);
  EXPECT_EQ(d.px(), 2);
  EXPECT_EQ(d.pz(), 1);
  EXPECT_EQ(d.pw(), 1);
  EXPECT_EQ(s.u.size(), 250);
  EXPECT_TRUE(validate(d).ok());
  for (Index i = 0; i < d.n(); ++i) EXPECT_TRUE(d.a(i) == 0.0 || d.a(i) == 1.0);
}

TEST(Generate, RejectsInvalidConfigs) {
  auto c = DgpConfig::baseline();
  c.sigma[0][2] = 0.9;
  c.sigma[2][0] = 0.9;
  EXPECT_THROW(generate(c, 10, 1), ValidationError);
  c = DgpConfig::baseline();
  c.sigma_y = 0.0;
  EXPECT_THROW(generate(c, 10, 1), ValidationError);
  c = DgpConfig::rct();
  c.p_treat = 1.0;
  EXPECT_THROW(generate(c, 10, 1), ValidationError);
  EXPECT_THROW(generate(DgpConfig::baseline(), 0, 1), ValidationError);
  EXPECT_THROW(DgpConfig::experiment(10), ValidationError);
}

TEST(Generate, ProxyMeanMatchesStructuralValue) {
  const auto d = generate(DgpConfig::baseline(), 1000000, 3).data;
  EXPECT_NEAR(d.w.mean(), 0.4, 0.005);
  EXPECT_NEAR(d.z.mean() - (0.2 + 0.1 - 0.52 * d.a.mean()), 0.0, 0.005);
}

TEST(Generate, CounterfactualMediatorMean) {
  const auto cf = generate_counterfactuals(DgpConfig::baseline(), 1000000, 3);
  EXPECT_NEAR(cf.m0.mean(), -0.25, 0.005);
  EXPECT_NEAR((cf.m1 - cf.m0).mean(), -0.3, 1e-9);
}

TEST(Generate, CounterfactualsAreConsistentWithObservedData) {
  const auto cfg = DgpConfig::baseline();
  const auto d = generate(cfg, 500, 9).data;
  const auto cf = generate_counterfactuals(cfg, 500, 9);
  for (Index i = 0; i < d.n(); ++i) {
    if (d.a(i) == 1.0) {
      EXPECT_EQ(d.m(i), cf.m1(i));
      EXPECT_EQ(d.y(i), cf.y1m1(i));
    } else {
      EXPECT_EQ(d.m(i), cf.m0(i));
      EXPECT_EQ(d.y(i), cf.y0m0(i));
    }
  }
}

TEST(Generate, NoLatentEffectsGivesIntercepts) {
  DgpConfig c;
  c.mean = {0.0, 0.0, 0.0};
  c.a_x = {0, 0};
  c.z_x = c.w_x = c.m_x = c.y_x = {0, 0};
  c.z0 = c.z_a = c.z_u = 0;
  c.w0 = c.w_u = 0;
  c.m_a = c.m_u = 0;
  c.y_w = c.y_u = c.y_m = 0;
  const auto t = closed_form_truth(c);
  ASSERT_TRUE(t);
  EXPECT_EQ(t->psi, c.y0 + c.y_a);
  EXPECT_EQ(t->ey0, c.y0);
  EXPECT_EQ(t->ey1, c.y0 + c.y_a);
  EXPECT_EQ(t->nie1, 0.0);
  const auto d = generate(c, 200000, 2).data;
  double s1 = 0, n1 = 0;
  for (Index i = 0; i < d.n(); ++i)
    if (d.a(i) == 1.0) {
      s1 += d.y(i);
      ++n1;
    }
  EXPECT_NEAR(s1 / n1, c.y0 + c.y_a, 0.03);
}

// ---------------------------------------------------------------------------
// oracle truth of the simulation designs

TEST(OracleTruth, BaselineClosedForm) {
  const auto t = closed_form_truth(DgpConfig::baseline());
  ASSERT_TRUE(t);
  EXPECT_NEAR(t->psi, 4.05, 1e-12);
  EXPECT_NEAR(t->ey0, 2.05, 1e-12);
  EXPECT_NEAR(t->ey1, 3.75, 1e-12);
  EXPECT_NEAR(t->nde0, 2.0, 1e-12);
  EXPECT_NEAR(t->nie1, -0.3, 1e-12);
}

TEST(OracleTruth, ExperimentTargets) {
  for (int id : {1, 2, 3, 4, 5, 8, 9}) EXPECT_NEAR(closed_form_truth(DgpConfig::experiment(id))->nde0, 2.0, 1e-12) << id;
  // Y loads on Z, whose mean depends on the natural treatment
  EXPECT_FALSE(closed_form_truth(DgpConfig::experiment(6)));
  EXPECT_FALSE(closed_form_truth(DgpConfig::experiment(7)));
}

class MonteCarloAgreement : public ::testing::TestWithParam<int> {};

TEST_P(MonteCarloAgreement, WithinThreeStandardErrors) {
  const auto cfg = GetParam() == 0 ? DgpConfig::rct() : DgpConfig::experiment(GetParam());
  const auto t = oracle_truth(cfg, 400000, 17);
  ASSERT_TRUE(t.closed_form && t.monte_carlo);
  EXPECT_EQ(t.method, "closed_form");
  const auto& cf = *t.closed_form;
  const auto& mc = *t.monte_carlo;
  EXPECT_LE(std::abs(cf.psi - mc.psi), 3 * t.mc_se.psi);
  EXPECT_LE(std::abs(cf.ey0 - mc.ey0), 3 * t.mc_se.ey0);
  EXPECT_LE(std::abs(cf.ey1 - mc.ey1), 3 * t.mc_se.ey1);
  EXPECT_LE(std::abs(cf.nie1 - mc.nie1), 3 * t.mc_se.nie1 + 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Designs, MonteCarloAgreement, ::testing::Values(0, 1, 5, 8));

TEST(OracleTruth, MonteCarloOnlyDesign) {
  const auto t = oracle_truth(DgpConfig::experiment(6), 200000, 3);
  EXPECT_EQ(t.method, "monte_carlo");
  ASSERT_TRUE(t.monte_carlo);
  EXPECT_EQ(t.value.psi, t.monte_carlo->psi);
  // the direct effect in the counterfactual draws is exactly y_a
  EXPECT_NEAR(t.value.nde0, 2.0, 1e-9);
}

TEST(OracleTruth, ThreadCountDoesNotChangeResult) {
  const auto a = oracle_truth(DgpConfig::experiment(7), 300000, 5, 1);
  const auto b = oracle_truth(DgpConfig::experiment(7), 300000, 5, 3);
  EXPECT_EQ(a.value.psi, b.value.psi);
  EXPECT_EQ(a.value.ey1, b.value.ey1);
  EXPECT_EQ(a.mc_se.psi, b.mc_se.psi);
}

TEST(DgpConfig, JsonRoundTrip) {
  auto c = DgpConfig::experiment(8);
  c.y_x = {0.125, -3.5};
  const nlohmann::json j = c;
  const auto back = j.get<DgpConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_EQ(back.w_u, 0.05);
}

// ---------------------------------------------------------------------------
// experiments

TEST(ExperimentSpec, Presets) {
  EXPECT_TRUE(ExperimentSpec::preset(1).misspecified.empty());
  EXPECT_EQ(ExperimentSpec::preset(2).misspecified, (std::vector<Bridge>{Bridge::q0, Bridge::q1}));
  EXPECT_EQ(ExperimentSpec::preset(3).misspecified, (std::vector<Bridge>{Bridge::q1, Bridge::h0}));
  EXPECT_EQ(ExperimentSpec::preset(4).misspecified, (std::vector<Bridge>{Bridge::h1, Bridge::h0}));
  EXPECT_FALSE(ExperimentSpec::preset(5).ols_include_z);
  EXPECT_EQ(ExperimentSpec::preset(9).dgp.z_u, 0.05);
  EXPECT_THROW(ExperimentSpec::preset(0), ValidationError);
  EXPECT_EQ(ExperimentSpec::preset(3).bridge_spec().misspecified(), (std::vector<Bridge>{Bridge::h0, Bridge::q1}));
}

TEST(ExperimentSpec, JsonRoundTripAndPatch) {
  auto s = ExperimentSpec::preset(4);
  s.n = 777;
  s.reps = 12;
  s.seed = 99;
  s.inference = InferenceKind::bootstrap;
  s.bootstrap_B = 30;
  const auto back = experiment_spec_from_json(to_json(s));
  EXPECT_EQ(to_json(back), to_json(s));

  const auto patched = experiment_spec_from_json({{"id", 2}, {"dgp", {{"y_u", -2.0}}}, {"misspecified", {"h1"}}});
  EXPECT_EQ(patched.dgp.y_u, -2.0);
  EXPECT_EQ(patched.dgp.w0, 0.3);
  EXPECT_EQ(patched.misspecified, std::vector<Bridge>{Bridge::h1});
  EXPECT_THROW(experiment_spec_from_json({{"id", 12}}), ValidationError);
  EXPECT_THROW(experiment_spec_from_json({{"inference", "jackknife"}}), ValidationError);
  EXPECT_THROW(experiment_spec_from_json({{"reps", 0}}), ValidationError);
}

TEST(Summarize, MatchesHandComputation) {
  std::vector<RepOutcome> out(4);
  out[0] = {true, 2.5, 0.1, ""};
  out[1] = {true, 1.5, 0.5, ""};
  out[2] = {false, 0, 0, "failed"};
  out[3] = {true, 2.0, 0.2, ""};
  const auto s = summarize("X", out, 2.0);
  EXPECT_EQ(s.reps_ok, 3);
  EXPECT_EQ(s.failures, 1);
  EXPECT_NEAR(s.bias, 0.0, 1e-15);
  EXPECT_NEAR(s.median_bias, 0.0, 1e-15);
  EXPECT_NEAR(s.mse, (0.25 + 0.25) / 3, 1e-15);
  EXPECT_NEAR(s.coverage, 2.0 / 3, 1e-15);
  EXPECT_NEAR(s.mean_length, 2 * 1.959963984540054 * 0.8 / 3, 1e-12);
  EXPECT_NEAR(s.median_length, 2 * 1.959963984540054 * 0.2, 1e-12);
  EXPECT_TRUE(std::isnan(summarize("Y", {out[2]}, 2.0).bias));
}

TEST(Experiment, SmallRunDeterministicAcrossThreads) {
  auto spec = ExperimentSpec::preset(1);
  spec.n = 500;
  spec.reps = 12;
  spec.seed = 3;
  const auto a = run_experiment(spec);
  spec.threads = 3;
  const auto b = run_experiment(spec);
  ASSERT_EQ(a.rows.size(), 5u);
  for (std::size_t k = 0; k < a.rows.size(); ++k) {
    EXPECT_EQ(a.rows[k].estimator, experiment_estimators()[k]);
    EXPECT_EQ(a.rows[k].bias, b.rows[k].bias);
    EXPECT_EQ(a.rows[k].mse, b.rows[k].mse);
    EXPECT_EQ(a.rows[k].coverage, b.rows[k].coverage);
  }
  EXPECT_EQ(a.target, 2.0);
  EXPECT_EQ(a.truth.method, "closed_form");

  // a replicate recomputed on its own matches the report
  const auto rep3 = run_replicate(spec, 3);
  for (std::size_t k = 0; k < rep3.size(); ++k) EXPECT_EQ(rep3[k].point, a.outcomes[k][3].point);
}

TEST(Experiment, ReplicateUsesItsOwnStream) {
  auto spec = ExperimentSpec::preset(1);
  spec.n = 400;
  const auto d = generate(spec.dgp, spec.n, spec.seed, 5).data;
  const auto fb = fit_bridges(d, spec.bridge_spec());
  const auto popt = PipelineOptions::for_spec(spec.bridge_spec());
  const double theta = psi_por(d, fb).point - fit_pdr(d, 0, popt.dr).point;
  EXPECT_NEAR(run_replicate(spec, 5)[0].point, theta, 1e-12);
}

TEST(Experiment, ReportSerialization) {
  auto spec = ExperimentSpec::preset(2);
  spec.n = 400;
  spec.reps = 4;
  const auto r = run_experiment(spec);
  const auto j = to_json(r);
  for (const char* k : {"spec", "truth", "target_nde0", "estimators", "weak_proxy_fraction", "flagged", "notes"})
    EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j["estimators"].size(), 5u);
  EXPECT_THROW(r.row("P-XX"), ValidationError);

  const auto path = std::filesystem::temp_directory_path() / "proxmed_report_test.csv";
  write_report_csv(r, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "estimator,reps_ok,failures,bias,median_bias,mse,coverage,mean_length,median_length");
  int lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  EXPECT_EQ(lines, 5);
  std::filesystem::remove(path);
}

// ---------------------------------------------------------------------------
// discrete identification oracle

namespace {

// sum_u P(u) sum_m P(m|A=0,u) sum_w P(w|u) E[Y|A=1,m,u,w], straight from the tables
double psi_from_tables(const DiscreteLaw& law) {
  double psi = 0;
  for (int u = 0; u < law.du(); ++u)
    for (int m = 0; m < law.dm(); ++m)
      for (int w = 0; w < law.dw(); ++w)
        for (int y = 0; y < law.dy(); ++y)
          psi += law.p_u[u] * law.p_m[0][u][m] * law.p_w[u][w] * law.p_y[1][m][u][w][y] * law.y_values[y];
  return psi;
}

Table1 uniform(int k) { return Table1(static_cast<std::size_t>(k), 1.0 / k); }

}  // namespace

TEST(DiscreteLaw, RandomLawIsValid) {
  const auto law = random_law(5);
  EXPECT_NO_THROW(law.check());
  EXPECT_EQ(law.du(), 2);
  double total = 0;
  for (int u = 0; u < 2; ++u)
    for (int a = 0; a < 2; ++a)
      for (int z = 0; z < 2; ++z)
        for (int w = 0; w < 2; ++w)
          for (int m = 0; m < 2; ++m)
            for (int y = 0; y < 2; ++y) total += law.joint(u, a, z, w, m, y);
  EXPECT_NEAR(total, 1.0, 1e-14);
  auto bad = law;
  bad.p_u[0] += 0.1;
  EXPECT_THROW(bad.check(), ValidationError);
  bad = law;
  bad.p_a1_u[0] = 1.2;
  EXPECT_THROW(bad.check(), ValidationError);
}

TEST(DiscreteLaw, TruthAgreesAcrossComputations) {
  for (std::uint64_t seed : {3u, 4u, 5u, 6u}) {
    const auto law = random_law(seed);
    EXPECT_NEAR(true_psi_brute(law), true_psi_enumerated(law), 1e-12);
    EXPECT_NEAR(true_psi_brute(law), psi_from_tables(law), 1e-12);
    const auto dist = counterfactual_distribution(law);
    EXPECT_NEAR(std::accumulate(dist.begin(), dist.end(), 0.0), 1.0, 1e-14);
  }
}

TEST(DiscreteLaw, OutcomeIndependentOfTreatmentMediatorAndLatent) {
  auto law = random_law(7);
  const Table1 py{0.3, 0.7};
  for (auto& a : law.p_y)
    for (auto& m : a)
      for (auto& u : m)
        for (auto& w : u) w = py;
  const double ey = 0.3 * law.y_values[0] + 0.7 * law.y_values[1];
  EXPECT_NEAR(true_psi_brute(law), ey, 1e-14);
  EXPECT_NEAR(solve_bridges_discrete(law).psi_h, ey, 1e-10);
}

TEST(DiscreteLaw, MediatorIndependentOfTreatmentAndLatent) {
  auto law = random_law(8);
  const Table1 pm{0.45, 0.55};
  for (auto& a : law.p_m)
    for (auto& u : a) u = pm;
  // psi collapses to E[Y(1)]
  double ey1 = 0;
  for (int u = 0; u < 2; ++u)
    for (int m = 0; m < 2; ++m)
      for (int w = 0; w < 2; ++w)
        for (int y = 0; y < 2; ++y)
          ey1 += law.p_u[u] * pm[m] * law.p_w[u][w] * law.p_y[1][m][u][w][y] * law.y_values[y];
  EXPECT_NEAR(true_psi_brute(law), ey1, 1e-14);
  const auto r = solve_bridges_discrete(law);
  EXPECT_NEAR(r.psi_q, ey1, 1e-10);
  EXPECT_NEAR(r.psi_hybrid, ey1, 1e-10);
}

TEST(Identification, ThreeFormulasRecoverTruth) {
  for (std::uint64_t seed = 20; seed < 40; ++seed) {
    const auto r = solve_bridges_discrete(random_law(seed));
    EXPECT_NEAR(r.psi_h, r.psi_true, 1e-10) << seed;
    EXPECT_NEAR(r.psi_hybrid, r.psi_true, 1e-10) << seed;
    EXPECT_NEAR(r.psi_q, r.psi_true, 1e-10) << seed;
    EXPECT_LT(r.max_residual, 1e-12) << seed;
  }
}

TEST(Identification, LargerCategoricalSupports) {
  for (LawSizes s : {LawSizes{2, 3, 3, 3, 4}, LawSizes{3, 3, 3, 2, 3}, LawSizes{3, 4, 4, 3, 4}}) {
    const auto r = solve_bridges_discrete(random_law(41, s));
    EXPECT_NEAR(r.psi_h, r.psi_true, 1e-10);
    EXPECT_NEAR(r.psi_hybrid, r.psi_true, 1e-10);
    EXPECT_NEAR(r.psi_q, r.psi_true, 1e-10);
    EXPECT_NEAR(r.psi_true, r.psi_true_enumerated, 1e-12);
  }
}

TEST(Identification, DegenerateLatentReducesToMediationFormula) {
  const auto law = fixture_degenerate_u();
  const auto r = solve_bridges_discrete(law);
  const double mf = mediation_formula(law);
  EXPECT_NEAR(r.psi_true, mf, 1e-12);
  EXPECT_NEAR(r.psi_h, mf, 1e-10);
  EXPECT_NEAR(r.psi_q, mf, 1e-10);
  // W carries no information, so h1 averages to E[Y|A=1,m]
  for (int m = 0; m < law.dm(); ++m) {
    double ey = 0, avg = 0;
    for (int w = 0; w < law.dw(); ++w) {
      avg += law.p_w[0][w] * r.h1[m][w];
      for (int y = 0; y < law.dy(); ++y) ey += law.p_w[0][w] * law.p_y[1][m][0][w][y] * law.y_values[y];
    }
    EXPECT_NEAR(avg, ey, 1e-10);
  }
}

TEST(Identification, IrrelevantTreatmentProxyIsIncomplete) {
  const auto law = fixture_z_independent_u();
  EXPECT_THROW(solve_bridges_discrete(law), CompletenessError);
  const auto rep = completeness_check(law);
  EXPECT_TRUE(rep.order_condition);
  EXPECT_FALSE(rep.ok());
  EXPECT_FALSE(rep.failures().empty());
}

TEST(Identification, PerfectProxies) {
  const auto law = fixture_perfect_proxies();
  EXPECT_TRUE(completeness_check(law).ok());
  const auto r = solve_bridges_discrete(law);
  EXPECT_NEAR(r.psi_h, r.psi_true, 1e-10);
  EXPECT_NEAR(r.psi_q, r.psi_true, 1e-10);
}

TEST(Identification, OrderConditionFailure) {
  const auto rep = completeness_check(fixture_order_failure());
  EXPECT_FALSE(rep.order_condition);
  EXPECT_FALSE(rep.ok());
  EXPECT_EQ(rep.failures().front(), "order condition: min(|Z|, |W|) < |U|");
  EXPECT_FALSE(to_json(rep)["ok"].get<bool>());
}

TEST(Identification, NonUniqueBridgesGiveTheSamePsi) {
  const auto law = fixture_nonunique();
  const auto a = solve_bridges_discrete(law, 0.0);
  const auto b = solve_bridges_discrete(law, 1.5);
  double gap = 0;
  for (int m = 0; m < law.dm(); ++m)
    for (int w = 0; w < law.dw(); ++w) gap = std::max(gap, std::abs(a.h1[m][w] - b.h1[m][w]));
  EXPECT_GT(gap, 0.1);
  EXPECT_NEAR(a.psi_h, b.psi_h, 1e-10);
  EXPECT_NEAR(a.psi_hybrid, b.psi_hybrid, 1e-10);
  EXPECT_NEAR(b.psi_h, b.psi_true, 1e-10);
}

TEST(Identification, CompletenessReportShape) {
  const auto rep = completeness_check(random_law(9));
  EXPECT_TRUE(rep.ok());
  // h1 and q1 per mediator level, plus h0 and q0
  EXPECT_EQ(rep.cells.size(), 6u);
  for (const auto& c : rep.cells) {
    EXPECT_EQ(c.rank, 2);
    EXPECT_TRUE(std::isfinite(c.condition));
  }
}

TEST(Identification, UniformProxiesFailEverywhere) {
  auto law = random_law(10);
  for (int u = 0; u < 2; ++u) {
    law.p_w[u] = uniform(2);
    for (int a = 0; a < 2; ++a) law.p_z[u][a] = uniform(2);
  }
  const auto rep = completeness_check(law);
  for (const auto& c : rep.cells) EXPECT_FALSE(c.complete) << c.name;
}

TEST(LoadLaw, RoundTripAndErrors) {
  const auto dir = std::filesystem::temp_directory_path();
  const auto law = random_law(12, {2, 3, 2, 2, 3});
  const auto path = dir / "proxmed_law_test.json";
  std::ofstream(path) << nlohmann::json(law).dump();
  const auto back = load_law(path);
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(law));
  EXPECT_EQ(true_psi_brute(back), true_psi_brute(law));

  std::ofstream(path) << "{\"p_u\": [0.5,";
  EXPECT_THROW(load_law(path), ValidationError);
  auto bad = nlohmann::json(law);
  bad["p_u"] = {0.7, 0.7};
  std::ofstream(path) << bad.dump();
  EXPECT_THROW(load_law(path), ValidationError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_law(dir / "proxmed_no_such_law.json"), ValidationError);
}
