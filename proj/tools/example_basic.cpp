// Simulate one dataset, fit the four bridges and print the effect estimates.
#include <proxmed/proxmed.hpp>

#include <cstdio>

int main() {
  using namespace proxmed;
  const DgpConfig cfg = DgpConfig::baseline();
  const auto sim = generate(cfg, 5000, /*seed=*/7);
  const MediationDataset& d = sim.data;

  const BridgeSpec spec = BridgeSpec::identity(d.px());
  const FittedBridges fb = fit_bridges(d, spec);
  for (const auto& w : fb.warnings()) std::printf("warning: %s\n", w.c_str());

  const auto popt = PipelineOptions::for_spec(spec);
  const DrFit dr0 = fit_pdr(d, 0, popt.dr);
  const DrFit dr1 = fit_pdr(d, 1, popt.dr);

  std::printf("%-9s %-7s %8s %8s\n", "method", "target", "point", "se");
  for (Method m : kProximalMethods) {
    for (const EstimateResult& r : effects_with_se(d, fb, m, dr0, dr1)) {
      if (r.estimand != Estimand::psi_10 && r.estimand != Estimand::nde_0) continue;
      std::printf("%-9s %-7s %8.4f %8.4f\n", std::string(to_string(r.method)).c_str(),
                  std::string(to_string(r.estimand)).c_str(), r.point, r.se.value_or(0.0));
    }
  }
  const auto truth = closed_form_truth(cfg);
  if (truth) std::printf("truth: psi = %.4f, NDE(0) = %.4f\n", truth->psi, truth->nde0);
  return 0;
}
