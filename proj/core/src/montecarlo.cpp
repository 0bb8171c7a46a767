#include "fadebif/montecarlo.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fadebif/gridmath.hpp"

namespace fadebif::mc {

Interval wilson_interval(int hits, int n) {
  if (n <= 0) throw Error("wilson_interval: n must be positive");
  const double z = 1.959963984540054;  // 97.5% normal quantile
  double p = static_cast<double>(hits) / n;
  double z2 = z * z;
  double denom = 1.0 + z2 / n;
  double center = (p + z2 / (2.0 * n)) / denom;
  double half = z / denom * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n));
  Interval ci{std::max(0.0, center - half), std::min(1.0, center + half)};
  if (hits == 0) ci.lo = 0.0;  // exact endpoints where the estimate is exact
  if (hits == n) ci.hi = 1.0;
  return ci;
}

ExitEstimate exit_probability(const sde::Ensemble& ens, double epsilon,
                              const std::optional<cls::WeightFunction>& weight) {
  std::size_t probe = 0;
  if (weight) {
    bool found = false;
    for (std::size_t i = 0; i < ens.config.probe_weights.size(); ++i) {
      const auto& w = ens.config.probe_weights[i];
      if (w.n == weight->n && w.q == weight->q && w.prefactor == weight->prefactor &&
          w.extra == weight->extra) {
        probe = i + 1;
        found = true;
        break;
      }
    }
    if (!found)
      throw Error("exit_probability: weight was not registered as an ensemble probe");
  }
  ExitEstimate est;
  est.epsilon = epsilon;
  est.weight = weight;
  est.n_paths = static_cast<int>(ens.paths.size());
  const double log_eps = std::log(epsilon);
  for (const auto& p : ens.paths) {
    if (p.flags.truncated()) {
      ++est.truncated;
      ++est.exceedances;  // conservative
      continue;
    }
    if (p.log_max_weighted[probe] > log_eps) ++est.exceedances;
  }
  est.probability = static_cast<double>(est.exceedances) / est.n_paths;
  est.ci = wilson_interval(est.exceedances, est.n_paths);
  return est;
}

DecayFit decay_fit(const sde::Ensemble& ens, Statistic stat, double window_lo, double window_hi,
                   double theta) {
  if (!(window_hi > window_lo) || window_hi / window_lo < 10.0)
    throw WindowTooShort("decay window must span at least one decade of t");
  std::vector<double> lx, ly;
  const auto& times = ens.summary.times;
  for (std::size_t ti = 0; ti < times.size(); ++ti) {
    double t = times[ti];
    if (t < window_lo || t > window_hi) continue;
    double med = stat == Statistic::AbsZ ? ens.summary.absz_q[2][ti] : ens.summary.energy_q[2][ti];
    if (stat == Statistic::EnergyScaled) med *= std::pow(t, theta);
    if (!(med > 0.0) || !std::isfinite(med)) continue;
    lx.push_back(std::log(t));
    ly.push_back(std::log(med));
  }
  if (lx.size() < 4) throw WindowTooShort("too few summary times inside the decay window");
  auto line = grid::fit_line(lx, ly);
  DecayFit fit;
  fit.exponent = line.slope;
  fit.intercept = line.intercept;
  fit.residual_rms = line.residual_rms;
  fit.window_lo = window_lo;
  fit.window_hi = window_hi;
  fit.statistic = stat;
  return fit;
}

CycleEstimate cycle_radius(const sde::Ensemble& ens, double tail_fraction) {
  if (!(tail_fraction > 0.0) || tail_fraction > 0.5)
    throw Error("tail_fraction must lie in (0, 0.5]");
  const auto& times = ens.summary.times;
  double t_cut = ens.config.t1 - tail_fraction * (ens.config.t1 - ens.config.t0);
  std::vector<double> per_path;
  for (const auto& p : ens.paths) {
    if (p.flags.truncated()) continue;
    double acc = 0.0;
    int count = 0;
    for (std::size_t ti = 0; ti < times.size(); ++ti) {
      if (times[ti] < t_cut) continue;
      acc += p.absz_at_summary[ti];
      ++count;
    }
    if (count > 0) per_path.push_back(acc / count);
  }
  if (per_path.empty()) throw Error("cycle_radius: no usable paths");
  CycleEstimate est;
  est.n_paths = static_cast<int>(per_path.size());
  for (double v : per_path) est.mean += v;
  est.mean /= est.n_paths;
  double ss = 0.0;
  for (double v : per_path) ss += (v - est.mean) * (v - est.mean);
  est.standard_error =
      est.n_paths > 1 ? std::sqrt(ss / (est.n_paths - 1.0) / est.n_paths) : 0.0;
  return est;
}

PracticalCheck practical_stability_check(const pert::SdeSystem& sys, int n, int q, double t0,
                                         double delta, double epsilon, double eta, double mu,
                                         int n_paths, double dt, std::uint64_t seed,
                                         double max_steps_per_path) {
  if (n > q) throw cls::BadOrder("practical stability requires n <= q");
  if (!(delta > 0.0) || !(epsilon > 0.0) || !(mu > 0.0))
    throw Error("practical_stability_check: delta, epsilon, mu must be positive");
  // same horizon formulas as practical_horizon, but the experiment also
  // runs outside the theorem's delta < epsilon regime (where exceedance
  // is immediate)
  double ratio = delta * delta / (epsilon * epsilon * mu * mu);
  double horizon = n < q ? std::pow(t0, static_cast<double>(n) / q) * ratio
                         : t0 * std::expm1(std::min(ratio, 700.0));
  if (delta / 2.0 > epsilon) {
    // the start point already exceeds the threshold
    PracticalCheck check;
    check.horizon = horizon;
    check.n_paths = n_paths;
    check.exceedances = n_paths;
    check.frequency = 1.0;
    check.ci = wilson_interval(n_paths, n_paths);
    check.within_eta = false;
    return check;
  }
  if (horizon / dt > max_steps_per_path) {
    std::ostringstream msg;
    msg << "practical horizon T=" << horizon << " needs " << horizon / dt
        << " steps per path (budget " << max_steps_per_path << ")";
    throw HorizonTooLong(msg.str());
  }
  sde::EnsembleConfig cfg;
  cfg.t0 = t0;
  cfg.t1 = t0 + std::max(horizon, 2.0 * dt);
  cfg.dt = dt;
  cfg.seed = seed;
  cfg.z0 = {delta / 2.0, 0.0};
  cfg.n_paths = n_paths;
  auto ens = sde::simulate_ensemble(sys, cfg);
  auto est = exit_probability(ens, epsilon);
  PracticalCheck check;
  check.horizon = horizon;
  check.n_paths = n_paths;
  check.exceedances = est.exceedances;
  check.frequency = est.probability;
  check.ci = est.ci;
  check.within_eta = est.ci.hi < eta;
  return check;
}

}  // namespace fadebif::mc
