#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bridges.hpp"
#include "data.hpp"
#include "error.hpp"
#include "estimators.hpp"
#include "inference.hpp"
#include "oracle.hpp"
#include "simulation.hpp"
#include "solvers.hpp"

namespace proxmed::cli {

enum ExitCode : int { ok = 0, validation = 2, solver = 3, acceptance = 4 };

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline std::string fmt(double v, int prec = 4) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

class Table {
 public:
  explicit Table(std::vector<std::string> header) : header_(std::move(header)) {}
  void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }

  void print(std::ostream& out) const {
    std::vector<std::size_t> w(header_.size());
    for (std::size_t j = 0; j < header_.size(); ++j) w[j] = header_[j].size();
    for (const auto& r : rows_)
      for (std::size_t j = 0; j < r.size() && j < w.size(); ++j) w[j] = std::max(w[j], r[j].size());
    auto line = [&](const std::vector<std::string>& r) {
      for (std::size_t j = 0; j < w.size(); ++j) {
        const std::string cell = j < r.size() ? r[j] : "";
        out << (j ? "  " : "") << (j ? std::string(w[j] - cell.size(), ' ') + cell : cell + std::string(w[j] - cell.size(), ' '));
      }
      out << '\n';
    };
    line(header_);
    std::size_t total = 0;
    for (auto x : w) total += x + 2;
    out << std::string(total - 2, '-') << '\n';
    for (const auto& r : rows_) line(r);
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw ValidationError("cannot write " + path.string());
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

/// Inserts the keys of a JSON config file as flags right after the
/// subcommand, so explicit flags (which come later) take precedence.
inline std::vector<std::string> merge_config(std::vector<std::string> args) {
  std::optional<std::string> path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      break;
    }
    if (args[i].starts_with("--config=")) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (!path) return args;
  const auto j = read_json(*path);
  if (!j.is_object()) throw ValidationError("config file must hold a JSON object");
  std::vector<std::string> inserted;
  for (const auto& [key, value] : j.items()) {
    const std::string flag = "--" + key;
    if (value.is_boolean()) {
      if (value.get<bool>()) inserted.push_back(flag);
    } else if (value.is_array()) {
      std::string joined;
      for (const auto& v : value) joined += (joined.empty() ? "" : ",") + (v.is_string() ? v.get<std::string>() : v.dump());
      inserted.insert(inserted.end(), {flag, joined});
    } else if (value.is_string()) {
      inserted.insert(inserted.end(), {flag, value.get<std::string>()});
    } else {
      inserted.insert(inserted.end(), {flag, value.dump()});
    }
  }
  const auto at = args.empty() ? args.end() : args.begin() + 1;
  args.insert(at, inserted.begin(), inserted.end());
  return args;
}

inline std::vector<Bridge> parse_misspec(const std::string& s) {
  std::vector<Bridge> out;
  for (const auto& t : split_list(s))
    if (t != "none") out.push_back(bridge_from_string(t));
  return out;
}

inline std::vector<Method> parse_methods(const std::string& s) {
  std::vector<Method> out;
  for (const auto& t : split_list(s)) {
    const Method m = method_from_string(t);
    if (m != Method::p_or && m != Method::p_hybrid && m != Method::p_ipw && m != Method::p_mr)
      throw ValidationError("--methods accepts P-OR, P-hybrid, P-IPW, P-MR");
    out.push_back(m);
  }
  if (out.empty()) throw ValidationError("--methods is empty");
  return out;
}

inline Propensity parse_propensity(const std::string& s) {
  if (s == "marginal") return Propensity::marginal();
  if (s == "logistic") return Propensity::logistic();
  if (s.starts_with("known:")) {
    double p = 0;
    const auto v = s.substr(6);
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), p);
    if (ec != std::errc{} || ptr != v.data() + v.size()) throw ValidationError("bad propensity value '" + v + "'");
    return Propensity::known(p);
  }
  throw ValidationError("--propensity must be marginal, logistic or known:p");
}

inline MediationDataset load_data(const std::string& path, const std::string& schema_path) {
  std::optional<ColumnSchema> schema;
  if (!schema_path.empty()) schema = ColumnSchema::from_json(read_json(schema_path));
  auto d = load_csv(path, schema);
  require_valid(d);
  return d;
}

inline void require_seed(const std::optional<std::uint64_t>& seed, const std::string& cmd) {
  if (!seed) throw ValidationError(cmd + " is stochastic: --seed is required");
}

}  // namespace detail

struct RunConfig {
  // shared
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::string out;
  // simulate / experiment
  Index n = 2000;
  int reps = 1000;
  int id = 0;
  bool rct = false;
  Index oracle_n = 1'000'000;
  // fit / estimate
  std::string data, schema;
  std::string methods = "P-OR,P-hybrid,P-IPW,P-MR";
  std::string misspec;
  std::string inference = "sandwich";
  int bootstrap_B = 200;
  std::string propensity = "marginal";
  // oracle
  int laws = 0;
  std::string fixture, law;
  // report
  std::string in;
};

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline int cmd_simulate(const RunConfig& c, std::ostream& out) {
  detail::require_seed(c.seed, "simulate");
  if (c.out.empty()) throw ValidationError("simulate needs --out");
  if (c.n < 1) throw ValidationError("--n must be >= 1");
  DgpConfig cfg = c.rct ? DgpConfig::rct() : (c.id ? DgpConfig::experiment(c.id) : DgpConfig::baseline());
  const auto sim = generate(cfg, c.n, *c.seed);
  write_csv(sim.data, c.out);
  const auto truth = oracle_truth(cfg, c.oracle_n, *c.seed, c.threads);
  nlohmann::json meta = {{"config", cfg}, {"seed", *c.seed}, {"n", c.n}, {"oracle", to_json(truth)}};
  auto meta_path = std::filesystem::path(c.out).replace_extension(".meta.json");
  detail::write_json(meta_path, meta);
  const auto report = validate(sim.data);
  out << "wrote " << c.n << " rows to " << c.out << " (treated " << report.n_treated << ", control "
      << report.n_control << ")\n";
  detail::Table t({"quantity", "value", "mc_se"});
  const auto& mc = truth.monte_carlo;
  t.add({"psi", detail::fmt(truth.value.psi), mc ? detail::fmt(truth.mc_se.psi) : "-"});
  t.add({"E[Y(0)]", detail::fmt(truth.value.ey0), mc ? detail::fmt(truth.mc_se.ey0) : "-"});
  t.add({"E[Y(1)]", detail::fmt(truth.value.ey1), mc ? detail::fmt(truth.mc_se.ey1) : "-"});
  t.add({"NDE(0)", detail::fmt(truth.value.nde0), "-"});
  t.add({"NIE(1)", detail::fmt(truth.value.nie1), mc ? detail::fmt(truth.mc_se.nie1) : "-"});
  t.print(out);
  out << "metadata: " << meta_path.string() << '\n';
  return ExitCode::ok;
}

inline int cmd_fit(const RunConfig& c, std::ostream& out) {
  const auto d = detail::load_data(c.data, c.schema);
  const auto spec = BridgeSpec::with_sqrt_abs(d.px(), detail::parse_misspec(c.misspec));
  FitOptions fo;
  fo.needs = BridgeNeeds::none();
  for (Method m : detail::parse_methods(c.methods)) fo.needs = fo.needs | needs_for(m);
  const auto fb = fit_bridges(d, spec, fo);
  detail::Table t({"bridge", "coefficient", "value"});
  for (Bridge b : {Bridge::h1, Bridge::h0, Bridge::q0, Bridge::q1}) {
    if (!fb.has(b)) continue;
    const auto names = coefficient_names(b, d);
    const auto& v = fb.params.get(b);
    for (Index k = 0; k < v.size(); ++k) t.add({std::string(to_string(b)), names[static_cast<std::size_t>(k)], detail::fmt(v(k), 6)});
  }
  t.print(out);
  for (const auto& w : fb.warnings()) out << "warning: " << w << '\n';
  if (!c.out.empty()) detail::write_json(c.out, to_json(fb, d));
  return ExitCode::ok;
}

inline int cmd_estimate(const RunConfig& c, std::ostream& out) {
  const auto d = detail::load_data(c.data, c.schema);
  const bool boot = c.inference == "bootstrap";
  if (!boot && c.inference != "sandwich") throw ValidationError("--inference must be sandwich or bootstrap");
  if (boot) detail::require_seed(c.seed, "estimate with bootstrap inference");
  BootstrapConfig bc;
  bc.B = c.bootstrap_B;
  bc.seed = c.seed.value_or(0);
  bc.threads = c.threads;

  std::vector<EstimateResult> results;
  nlohmann::json doc = {{"data", c.data}, {"n", d.n()}, {"inference", c.inference}};

  if (c.rct) {
    const auto prop = detail::parse_propensity(c.propensity);
    const auto rb = fit_rct_bridges(d);
    for (RctVariant v : {RctVariant::or_, RctVariant::ipw, RctVariant::mr}) {
      auto r = psi_rct(d, rb, prop, v);
      if (boot) {
        const auto br = bootstrap_se(
            d, [&](const MediationDataset& x) { return psi_rct(x, fit_rct_bridges(x), prop, v).point; }, bc);
        r.attach(br.se, br.ci);
        r.diagnostics["bootstrap_failures"] = br.failures;
      }
      results.push_back(r);
    }
  } else {
    const auto methods = detail::parse_methods(c.methods);
    const auto spec = BridgeSpec::with_sqrt_abs(d.px(), detail::parse_misspec(c.misspec));
    auto popt = PipelineOptions::for_spec(spec);
    FitOptions fo;
    fo.needs = BridgeNeeds::none();
    for (Method m : methods) fo.needs = fo.needs | needs_for(m);
    const auto fb = fit_bridges(d, spec, fo);
    doc["bridges"] = to_json(fb, d);
    const auto dr0 = fit_pdr(d, 0, popt.dr);
    const auto dr1 = fit_pdr(d, 1, popt.dr);
    for (Method m : methods) {
      if (!boot) {
        for (auto& r : effects_with_se(d, fb, m, dr0, dr1)) {
          if (r.method == Method::p_dr && m != methods.front()) continue;
          results.push_back(r);
        }
        continue;
      }
      auto psi = estimate_psi(d, fb, m);
      const auto bp = bootstrap_se(
          d,
          [&](const MediationDataset& x) {
            FitOptions f;
            f.needs = needs_for(m);
            return estimate_psi(x, fit_bridges(x, spec, f), m).point;
          },
          bc);
      psi.attach(bp.se, bp.ci);
      results.push_back(psi);
      EstimateResult th;
      th.estimand = Estimand::nde_0;
      th.method = m;
      th.point = psi.point - dr0.point;
      const auto bt = bootstrap_se(d, [&](const MediationDataset& x) { return theta_point(x, m, popt); }, bc);
      th.attach(bt.se, bt.ci);
      results.push_back(th);
    }
  }
  results.push_back(naive_ols(d));

  detail::Table t({"method", "estimand", "point", "se", "ci_lo", "ci_hi"});
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : results) {
    t.add({std::string(to_string(r.method)), std::string(to_string(r.estimand)), detail::fmt(r.point),
           r.se ? detail::fmt(*r.se) : "-", r.ci ? detail::fmt(r.ci->first) : "-",
           r.ci ? detail::fmt(r.ci->second) : "-"});
    arr.push_back(to_json(r));
  }
  t.print(out);
  doc["results"] = arr;
  if (!c.out.empty()) detail::write_json(c.out, doc);
  return ExitCode::ok;
}

inline void print_report(const nlohmann::json& rep, std::ostream& out) {
  const auto& spec = rep.at("spec");
  out << "experiment " << spec.at("id").get<int>() << ": n = " << spec.at("n").get<Index>()
      << ", reps = " << spec.at("reps").get<int>() << ", target NDE(0) = " << detail::fmt(rep.at("target_nde0").get<double>())
      << '\n';
  detail::Table t({"estimator", "bias", "med.bias", "mse", "coverage", "mean.len", "med.len", "ok", "failed"});
  auto num = [](const nlohmann::json& v) {
    return v.is_number() ? detail::fmt(v.get<double>(), 3) : std::string("nan");
  };
  for (const auto& r : rep.at("estimators"))
    t.add({r.at("estimator").get<std::string>(), num(r.at("bias")), num(r.at("median_bias")), num(r.at("mse")),
           num(r.at("coverage")), num(r.at("mean_length")), num(r.at("median_length")),
           std::to_string(r.at("reps_ok").get<int>()), std::to_string(r.at("failures").get<int>())});
  t.print(out);
  out << "weak-proxy warnings in " << detail::fmt(100.0 * rep.at("weak_proxy_fraction").get<double>(), 1)
      << "% of replicates\n";
  for (const auto& n : rep.at("notes")) out << "note: " << n.get<std::string>() << '\n';
  if (rep.at("flagged").get<bool>()) out << "FLAGGED: more than 10% of replicates failed for some estimator\n";
}

inline int cmd_experiment(const RunConfig& c, std::ostream& out) {
  detail::require_seed(c.seed, "experiment");
  auto spec = ExperimentSpec::preset(c.id);
  spec.n = c.n;
  spec.reps = c.reps;
  spec.seed = *c.seed;
  spec.threads = c.threads;
  spec.oracle_mc_n = c.oracle_n;
  spec.bootstrap_B = c.bootstrap_B;
  if (c.inference == "bootstrap") spec.inference = InferenceKind::bootstrap;
  else if (c.inference != "sandwich") throw ValidationError("--inference must be sandwich or bootstrap");
  if (!c.misspec.empty()) spec.misspecified = detail::parse_misspec(c.misspec);
  spec.check();
  const auto rep = run_experiment(spec);
  const auto j = to_json(rep);
  print_report(j, out);
  if (!c.out.empty()) {
    write_report_csv(rep, c.out + ".csv");
    detail::write_json(c.out + ".json", j);
  }
  return rep.flagged ? ExitCode::solver : ExitCode::ok;
}

inline int cmd_report(const RunConfig& c, std::ostream& out) {
  if (c.in.empty()) throw ValidationError("report needs --in <experiment report JSON>");
  const auto j = detail::read_json(c.in);
  try {
    print_report(j, out);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("not an experiment report: " + std::string(e.what()));
  }
  return ExitCode::ok;
}

/// Tolerance for agreement of the identification formulas with the truth.
inline constexpr double kOracleTol = 1e-10;

inline int cmd_oracle(const RunConfig& c, std::ostream& out) {
  nlohmann::json doc = nlohmann::json::array();
  detail::Table t({"law", "psi_true", "psi_h", "psi_hybrid", "psi_q", "max_diff", "status"});
  int failures = 0;
  auto run_one = [&](const std::string& name, const DiscreteLaw& law, bool expect_incomplete) {
    nlohmann::json rec = {{"law", name}};
    try {
      const auto r = solve_bridges_discrete(law);
      const double diff = std::max({std::abs(r.psi_h - r.psi_true), std::abs(r.psi_hybrid - r.psi_true),
                                    std::abs(r.psi_q - r.psi_true), std::abs(r.psi_true_enumerated - r.psi_true)});
      const bool pass = diff < kOracleTol && !expect_incomplete;
      failures += !pass;
      const std::string status = pass ? "pass" : (expect_incomplete ? "FAIL (expected completeness failure)" : "FAIL");
      t.add({name, detail::fmt(r.psi_true, 10), detail::fmt(r.psi_h, 10), detail::fmt(r.psi_hybrid, 10),
             detail::fmt(r.psi_q, 10), detail::fmt(diff, 14), status});
      rec.update(to_json(r));
      rec["status"] = status;
    } catch (const CompletenessError& e) {
      const std::string status = expect_incomplete ? "expected-failure" : "FAIL";
      failures += !expect_incomplete;
      t.add({name, "-", "-", "-", "-", "-", status});
      rec["status"] = status;
      rec["error"] = e.what();
      rec["cell"] = e.cell();
    }
    rec["completeness"] = to_json(completeness_check(law));
    doc.push_back(rec);
  };

  if (!c.fixture.empty()) {
    if (c.fixture == "degenerate-u") {
      const auto law = fixture_degenerate_u();
      run_one(c.fixture, law, false);
      out << "standard mediation formula: " << detail::fmt(mediation_formula(law), 10) << '\n';
      doc.back()["mediation_formula"] = mediation_formula(law);
    } else if (c.fixture == "z-independent-u") {
      run_one(c.fixture, fixture_z_independent_u(), true);
    } else if (c.fixture == "perfect-proxies") {
      run_one(c.fixture, fixture_perfect_proxies(), false);
    } else if (c.fixture == "order-failure") {
      const auto law = fixture_order_failure();
      const auto cc = completeness_check(law);
      out << "order condition min(|Z|,|W|) >= |U|: " << (cc.order_condition ? "holds" : "fails") << '\n';
      run_one(c.fixture, law, true);
    } else if (c.fixture == "nonunique") {
      const auto law = fixture_nonunique();
      run_one(c.fixture, law, false);
      const auto a = solve_bridges_discrete(law), b = solve_bridges_discrete(law, 1.0);
      const double gap = std::abs(a.psi_h - b.psi_h) + std::abs(a.psi_hybrid - b.psi_hybrid);
      out << "psi across two bridge solutions differs by " << detail::fmt(gap, 14) << '\n';
      if (gap >= kOracleTol) ++failures;
    } else {
      throw ValidationError("unknown fixture '" + c.fixture +
                            "' (degenerate-u, z-independent-u, perfect-proxies, order-failure, nonunique)");
    }
  } else if (!c.law.empty()) {
    run_one(c.law, load_law(c.law), false);
  } else if (c.laws > 0) {
    detail::require_seed(c.seed, "oracle with random laws");
    for (int i = 0; i < c.laws; ++i) {
      const std::uint64_t s = *c.seed ^ (0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(i + 1));
      run_one("random#" + std::to_string(i), random_law(s), false);
    }
  } else {
    throw ValidationError("oracle needs --laws N, --fixture NAME or --law FILE");
  }
  t.print(out);
  out << (failures ? std::to_string(failures) + " law(s) failed\n" : std::string("all laws passed\n"));
  if (!c.out.empty()) detail::write_json(c.out, doc);
  return failures ? ExitCode::acceptance : ExitCode::ok;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int run_cli(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  RunConfig c;
  std::uint64_t seed_value = 0;
  CLI::App app{"proxmed: proximal mediation analysis", "proxmed"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);

  auto add_seed = [&](CLI::App* s) { return s->add_option("--seed", seed_value, "64-bit RNG seed"); };
  auto add_threads = [&](CLI::App* s) { s->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber); };

  auto* sim = app.add_subcommand("simulate", "draw a dataset from the simulation design");
  sim->add_option("--n", c.n, "rows")->required();
  auto* sim_seed = add_seed(sim);
  sim->add_option("--out", c.out, "CSV path")->required();
  sim->add_flag("--rct", c.rct, "randomized-treatment variant");
  sim->add_option("--id", c.id, "experiment id whose design overrides apply")->check(CLI::Range(0, 9));
  sim->add_option("--oracle-n", c.oracle_n, "Monte Carlo draws for the oracle truth");
  add_threads(sim);

  auto* fit = app.add_subcommand("fit", "fit the bridge functions");
  fit->add_option("--data", c.data, "CSV path")->required();
  fit->add_option("--schema", c.schema, "JSON column-role schema");
  fit->add_option("--methods", c.methods, "estimators whose bridges to fit");
  fit->add_option("--misspec", c.misspec, "bridges using |x|^(1/2) covariates, e.g. q0,q1");
  fit->add_option("--out", c.out, "JSON output path");

  auto* est = app.add_subcommand("estimate", "estimate psi and the effect contrasts");
  est->add_option("--data", c.data, "CSV path")->required();
  est->add_option("--schema", c.schema, "JSON column-role schema");
  est->add_option("--methods", c.methods, "comma-separated subset of P-OR,P-hybrid,P-IPW,P-MR");
  est->add_option("--misspec", c.misspec, "bridges using |x|^(1/2) covariates");
  est->add_option("--inference", c.inference, "sandwich or bootstrap");
  est->add_option("--bootstrap-B", c.bootstrap_B, "bootstrap replicates")->check(CLI::PositiveNumber);
  auto* est_seed = add_seed(est);
  est->add_flag("--rct", c.rct, "randomized-treatment estimators");
  est->add_option("--propensity", c.propensity, "marginal, logistic or known:p (p = P(A=0|X))");
  est->add_option("--out", c.out, "JSON output path");
  add_threads(est);

  auto* exp = app.add_subcommand("experiment", "run a Monte Carlo experiment");
  exp->add_option("--id", c.id, "experiment id 1-9")->required()->check(CLI::Range(1, 9));
  exp->add_option("--n", c.n, "rows per replicate");
  exp->add_option("--reps", c.reps, "replicates")->check(CLI::PositiveNumber);
  auto* exp_seed = add_seed(exp);
  exp->add_option("--inference", c.inference, "sandwich or bootstrap");
  exp->add_option("--bootstrap-B", c.bootstrap_B, "bootstrap replicates")->check(CLI::PositiveNumber);
  exp->add_option("--misspec", c.misspec, "override the misspecified bridges");
  exp->add_option("--oracle-n", c.oracle_n, "Monte Carlo draws for the oracle truth");
  exp->add_option("--out", c.out, "output prefix for .csv and .json");
  add_threads(exp);

  auto* orc = app.add_subcommand("oracle", "exact identification checks on discrete laws");
  orc->add_option("--laws", c.laws, "number of random binary laws");
  auto* orc_seed = add_seed(orc);
  orc->add_option("--fixture", c.fixture, "degenerate-u, z-independent-u, perfect-proxies, order-failure, nonunique");
  orc->add_option("--law", c.law, "law JSON file");
  orc->add_option("--out", c.out, "JSON output path");

  auto* rep = app.add_subcommand("report", "print a saved experiment report");
  rep->add_option("--in", c.in, "experiment report JSON")->required();

  try {
    args = detail::merge_config(std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? ExitCode::ok : ExitCode::validation;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return ExitCode::validation;
  }
  for (auto* o : {sim_seed, est_seed, exp_seed, orc_seed})
    if (o->count()) c.seed = seed_value;

  try {
    if (sim->parsed()) return cmd_simulate(c, out);
    if (fit->parsed()) return cmd_fit(c, out);
    if (est->parsed()) return cmd_estimate(c, out);
    if (exp->parsed()) return cmd_experiment(c, out);
    if (orc->parsed()) return cmd_oracle(c, out);
    if (rep->parsed()) return cmd_report(c, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return ExitCode::validation;
  } catch (const SolverError& e) {
    err << "solver failure: " << e.what() << '\n';
    return ExitCode::solver;
  } catch (const CompletenessError& e) {
    err << "completeness failure: " << e.what() << '\n';
    return ExitCode::acceptance;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << '\n';
    return ExitCode::validation;
  }
  return ExitCode::validation;
}

inline int run_cli(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(std::move(args), out, err);
}

}  // namespace proxmed::cli
