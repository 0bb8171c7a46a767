#ifndef FADEBIF_MONTECARLO_HPP
#define FADEBIF_MONTECARLO_HPP

#include <optional>
#include <string>

#include "fadebif/classifier.hpp"
#include "fadebif/common.hpp"
#include "fadebif/sde.hpp"

namespace fadebif::mc {

struct WindowTooShort : Error { using Error::Error; };
struct HorizonTooLong : Error { using Error::Error; };

struct Interval {
  double lo = 0.0, hi = 1.0;
  bool contains(double p) const { return lo <= p && p <= hi; }
};

// Wilson 95% interval; behaves sensibly at 0 and 1 exceedances.
Interval wilson_interval(int hits, int n);

struct ExitEstimate {
  double probability = 0.0;
  Interval ci;
  int n_paths = 0;
  int exceedances = 0;
  int truncated = 0;  // counted as exceedances (conservative), reported apart
  double epsilon = 0.0;
  std::optional<cls::WeightFunction> weight;  // empty: unit weight
};

// P(sup_t |z(t)| gamma(t) > eps) from the per-path running maxima.  The
// weight must be the unit weight (probe_index -1 -> index 0) or one of the
// probes registered in the ensemble config.
ExitEstimate exit_probability(const sde::Ensemble& ens, double epsilon,
                              const std::optional<cls::WeightFunction>& weight = std::nullopt);

enum class Statistic { AbsZ, Energy, EnergyScaled };

struct DecayFit {
  double exponent = 0.0;
  double intercept = 0.0;  // of log(statistic) vs log(t)
  double residual_rms = 0.0;
  double window_lo = 0.0, window_hi = 0.0;
  Statistic statistic = Statistic::AbsZ;
};

// Least squares on log-log of the per-time ensemble median.  For
// EnergyScaled the statistic is median(E) * t^theta.
DecayFit decay_fit(const sde::Ensemble& ens, Statistic stat, double window_lo, double window_hi,
                   double theta = 0.0);

struct CycleEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
  int n_paths = 0;
};

// Mean |z| over the trailing tail_fraction of each path, then across paths.
CycleEstimate cycle_radius(const sde::Ensemble& ens, double tail_fraction);

struct PracticalCheck {
  double horizon = 0.0;
  int n_paths = 0;
  int exceedances = 0;
  double frequency = 0.0;
  Interval ci;
  bool within_eta = false;  // Wilson upper bound < eta
};

// Simulates n_paths from |z0| = delta/2 over [t0, t0 + T] and reports the
// exceedance frequency of sup |z| > epsilon against eta.
PracticalCheck practical_stability_check(const pert::SdeSystem& sys, int n, int q, double t0,
                                         double delta, double epsilon, double eta, double mu,
                                         int n_paths, double dt, std::uint64_t seed,
                                         double max_steps_per_path = 2e8);

}  // namespace fadebif::mc

#endif
