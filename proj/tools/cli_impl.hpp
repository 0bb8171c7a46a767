#ifndef FADEBIF_CLI_IMPL_HPP
#define FADEBIF_CLI_IMPL_HPP

#include <optional>
#include <string>
#include <vector>

#include "fadebif/averaging.hpp"
#include "fadebif/classifier.hpp"
#include "fadebif/perturbation.hpp"

namespace fadebif::cli {

// Exit codes: 0 ok, 2 config error, 3 numeric failure,
// 4 inconclusive verdict (report still written).
int run_cli(int argc, const char* const* argv);

// The full chain orbit cache -> coefficients -> recursion -> fit ->
// verdicts, shared by the classify command and the acceptance suite.
struct ClassificationResult {
  avg::AveragedDrift drift;
  avg::ExponentFit fit;
  std::optional<pert::NoiseBound> noise;
  std::vector<cls::StabilityVerdict> verdicts;
};

struct ClassifyOptions {
  int order = 0;      // 0: choose from the fitted case
  int n_phi = 256;
  double fit_lo = 0.0, fit_hi = 0.0;  // 0: default window
  double kappa = 0.05;
  int n_fit_points = 16;
  int n_upper_points = 24;
};

ClassificationResult classify_system(const pert::SdeSystem& sys, const ClassifyOptions& opt);

}  // namespace fadebif::cli

#endif
