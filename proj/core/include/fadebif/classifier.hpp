#ifndef FADEBIF_CLASSIFIER_HPP
#define FADEBIF_CLASSIFIER_HPP

#include <optional>
#include <string>
#include <vector>

#include "fadebif/averaging.hpp"
#include "fadebif/common.hpp"
#include "fadebif/perturbation.hpp"

namespace fadebif::cls {

struct BadKappa : Error { using Error::Error; };
struct BadOrder : Error { using Error::Error; };
struct HypothesisViolated : Error { using Error::Error; };
struct MissingNoiseBound : Error { using Error::Error; };

enum class Kind {
  ExponentiallyStable,
  PolynomiallyStable,
  NeutrallyStable,
  WeightedStable,
  Unstable,
  WeightedUnstable,
  PracticallyStable,
  PolynomialDecayToZero,
  StableCycle,
  Inconclusive,
};

std::string kind_name(Kind k);

// Weight (gamma_n(t))^prefactor * t^{extra/2} with
// gamma_n(t) = exp(q/(q-n) t^{1-n/q}) for n != q and gamma_q(t) = t.
struct WeightFunction {
  int n = 1;
  int q = 2;
  double prefactor = 1.0;
  double extra = 0.0;
};

struct WeightValue {
  double value = 0.0;      // valid when !overflow
  double log_value = 0.0;  // always valid
  bool overflow = false;
};

WeightValue weight_eval(const WeightFunction& w, double t);
double log_gamma_n(int n, int q, double t);

struct StabilityVerdict {
  Kind kind = Kind::Inconclusive;
  std::string theorem;  // empty only for Inconclusive
  std::optional<WeightFunction> weight;
  std::optional<double> horizon;
  std::optional<double> cycle_energy;
  std::optional<double> u_star;
  std::optional<double> theta;
  std::optional<WeightFunction> instability_weight;  // Theorem 3 annotation
  std::vector<std::string> notes;
  std::string inputs;  // JSON record of everything the verdict used
};

// The practical-stability horizon of a concrete experiment, used to fill
// in StabilityVerdict::horizon when the caller provides one.
struct HorizonSpec {
  double t0 = 1.0;
  double delta = 0.0;
  double epsilon = 0.0;
};

StabilityVerdict classify_linear(const avg::ExponentFit& fit, int q,
                                 const std::optional<pert::NoiseBound>& noise,
                                 double kappa = 0.05,
                                 const std::optional<HorizonSpec>& horizon = std::nullopt);

StabilityVerdict classify_nonlinear(const avg::ExponentFit& fit, int q,
                                    const std::optional<pert::NoiseBound>& noise,
                                    double kappa = 0.05);

StabilityVerdict classify_cycle(const avg::AveragedDrift& drift, const avg::ExponentFit& fit,
                                int q);

// T = t0^{n/q} delta^2 (eps mu)^{-2} for n < q,
// T = t0 (exp(delta^2 (eps mu)^{-2}) - 1) for n = q.
double practical_horizon(int n, int q, double t0, double delta, double epsilon, double mu);

// The wording of the verdict in the summary tables ("exponentially
// stable", "practically stable", ...), for report output.
std::string table_label(const StabilityVerdict& v);

std::string to_json(const StabilityVerdict& v);

}  // namespace fadebif::cls

#endif
