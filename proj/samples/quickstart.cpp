// Simulate a small two-group multiplex, fit it, and report recovery errors.

#include <gmn/gmn.hpp>

#include <iostream>

int main() {
  using namespace gmn;
  GroupLayout layout({4, 4});
  AngleSpec angles;
  angles.s_vu = 0.1;
  angles.s_wu = 0.1;
  GroundTruth gt = sample_components(150, 2, layout, angles, 7);
  MultiplexDataset ds = sample_layers(gt, EdgeFamily::gaussian(1.0), false, 8);

  FitResult r = fit(ds, default_hyperparams(ds, 3.0, 3.0));
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';

  auto errs = component_errors(gt.grams, r.decomposition);
  std::cout << "ranks: S " << r.decomposition.sig_S.dim() << ", Q_1 " << r.decomposition.sig_Q[0].dim() << '\n';
  for (const auto& [name, value] : errs) std::cout << "ARFE " << name << ": " << value << '\n';
  std::cout << "fit time: " << r.seconds << " s\n";
}
