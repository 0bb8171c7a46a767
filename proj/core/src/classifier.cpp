#include "fadebif/classifier.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace fadebif::cls {

namespace {

constexpr double kZeroLambda = 1e-10;  // |lambda| below this counts as zero

nlohmann::json weight_json(const WeightFunction& w) {
  return {{"n", w.n}, {"q", w.q}, {"prefactor", w.prefactor}, {"extra", w.extra}};
}

nlohmann::json fit_json(const avg::ExponentFit& fit) {
  nlohmann::json j;
  j["n"] = fit.n;
  if (fit.m) j["m"] = *fit.m;
  if (fit.l) j["l"] = *fit.l;
  if (fit.lambda_n) j["lambda_n"] = *fit.lambda_n;
  if (fit.lambda_nm) j["lambda_nm"] = *fit.lambda_nm;
  if (fit.lambda_nl) j["lambda_nl"] = *fit.lambda_nl;
  return j;
}

void record_inputs(StabilityVerdict& v, const avg::ExponentFit& fit, int q,
                   const std::optional<pert::NoiseBound>& noise, double kappa) {
  nlohmann::json j;
  j["fit"] = fit_json(fit);
  j["q"] = q;
  j["kappa"] = kappa;
  if (noise) j["noise"] = {{"mu", noise->mu}, {"sigma", noise->sigma}};
  v.inputs = j.dump();
}

bool sigma_equals(const pert::NoiseBound& noise, int num, int q) {
  if (noise.q == q) return noise.sigma_num == num;
  return std::abs(noise.sigma - static_cast<double>(num) / q) < 1e-12;
}

}  // namespace

std::string kind_name(Kind k) {
  switch (k) {
    case Kind::ExponentiallyStable: return "ExponentiallyStable";
    case Kind::PolynomiallyStable: return "PolynomiallyStable";
    case Kind::NeutrallyStable: return "NeutrallyStable";
    case Kind::WeightedStable: return "WeightedStable";
    case Kind::Unstable: return "Unstable";
    case Kind::WeightedUnstable: return "WeightedUnstable";
    case Kind::PracticallyStable: return "PracticallyStable";
    case Kind::PolynomialDecayToZero: return "PolynomialDecayToZero";
    case Kind::StableCycle: return "StableCycle";
    case Kind::Inconclusive: return "Inconclusive";
  }
  return "Inconclusive";
}

double log_gamma_n(int n, int q, double t) {
  if (n == q) return std::log(t);
  double a = static_cast<double>(q) / static_cast<double>(q - n);
  return a * std::pow(t, 1.0 - static_cast<double>(n) / q);
}

WeightValue weight_eval(const WeightFunction& w, double t) {
  if (t < 1.0) throw Error("weight_eval: t must be >= 1");
  WeightValue out;
  out.log_value = w.prefactor * log_gamma_n(w.n, w.q, t) + 0.5 * w.extra * std::log(t);
  if (out.log_value > 700.0) {
    out.overflow = true;
    out.value = std::numeric_limits<double>::infinity();
  } else {
    out.value = std::exp(out.log_value);
  }
  return out;
}

StabilityVerdict classify_linear(const avg::ExponentFit& fit, int q,
                                 const std::optional<pert::NoiseBound>& noise, double kappa,
                                 const std::optional<HorizonSpec>& horizon) {
  if (!(kappa > 0.0 && kappa < 1.0)) throw BadKappa("kappa must lie in (0,1)");
  if (fit.case_tag != avg::CaseTag::Linear && fit.case_tag != avg::CaseTag::Cycle)
    throw HypothesisViolated("classify_linear needs a LINEAR exponent fit");
  if (!fit.lambda_n) throw HypothesisViolated("classify_linear: lambda_n missing");

  const int n = fit.n;
  const double lambda = *fit.lambda_n;
  StabilityVerdict v;
  record_inputs(v, fit, q, noise, kappa);

  if (std::abs(lambda) < kZeroLambda) {
    v.kind = Kind::Inconclusive;
    v.notes.push_back("lambda_n is zero within fit tolerance; no theorem applies");
    return v;
  }

  if (lambda < 0.0) {
    v.kind = n < q    ? Kind::ExponentiallyStable
             : n == q ? Kind::PolynomiallyStable
                      : Kind::NeutrallyStable;
    v.theorem = "Theorem 2";
    v.weight = WeightFunction{n, q, (1.0 - kappa) * std::abs(lambda) / 2.0, 0.0};
    return v;
  }

  // lambda > 0: the instability side needs the noise bound
  if (!noise) {
    v.kind = Kind::Inconclusive;
    v.notes.push_back("lambda_n > 0 but no noise bound supplied");
    return v;
  }
  if (n > q) {
    v.kind = Kind::Inconclusive;
    v.notes.push_back("lambda_n > 0 with n > q: outside the instability theorems");
    return v;
  }
  if (noise->sigma < static_cast<double>(n) / q - 1e-12) {
    v.kind = Kind::Inconclusive;
    v.notes.push_back("noise bound sigma < n/q: instability hypotheses not met");
    return v;
  }
  const bool critical = sigma_equals(*noise, n, q);  // sigma == n/q
  const double threshold = critical ? 0.5 * noise->mu * noise->mu : 0.0;
  if (lambda > threshold) {
    v.kind = Kind::Unstable;
    v.theorem = "Theorem 3";
    return v;
  }
  if (critical && lambda > 0.0) {
    v.kind = Kind::PracticallyStable;
    v.theorem = "Theorem AsL";
    v.instability_weight =
        WeightFunction{n, q, (0.5 * noise->mu * noise->mu - lambda + kappa) / 2.0, 0.0};
    v.notes.push_back("also unstable with the annotated weight (Theorem 3)");
    if (horizon && horizon->delta > 0.0 && horizon->epsilon > horizon->delta)
      v.horizon = practical_horizon(n, q, horizon->t0, horizon->delta, horizon->epsilon,
                                    noise->mu);
    return v;
  }
  v.kind = Kind::Inconclusive;
  v.notes.push_back("no theorem row matches the fitted parameters");
  return v;
}

StabilityVerdict classify_nonlinear(const avg::ExponentFit& fit, int q,
                                    const std::optional<pert::NoiseBound>& noise, double kappa) {
  if (!(kappa > 0.0 && kappa < 1.0)) throw BadKappa("kappa must lie in (0,1)");
  if (fit.case_tag != avg::CaseTag::Nonlinear || !fit.m || !fit.l || !fit.lambda_nm ||
      !fit.lambda_nl)
    throw HypothesisViolated("classify_nonlinear needs a NONLINEAR exponent fit");

  const int n = fit.n, m = *fit.m, l = *fit.l;
  const double lnm = *fit.lambda_nm, lnl = *fit.lambda_nl;
  const double theta = static_cast<double>(l) / (q * (m - 1));
  const bool resonant = (n + l == q);
  const double lambda_star = lnl + (resonant ? theta : 0.0);
  const double u_star = std::pow(std::abs(lambda_star) / std::abs(lnm), 1.0 / (m - 1));

  StabilityVerdict v;
  record_inputs(v, fit, q, noise, kappa);
  v.theta = theta;

  const bool plain_stable = lnm < 0.0 && lnl < 0.0;
  if (n + l <= q && lambda_star < 0.0) {
    v.kind = Kind::WeightedStable;
    v.theorem = "Theorem 4";
    v.weight = WeightFunction{n + l, q, (1.0 - kappa) * std::abs(lambda_star) / 2.0, theta};
    if (plain_stable) v.notes.push_back("also plainly stable in probability (Theorem 4)");
    return v;
  }
  if (plain_stable) {
    v.kind = Kind::NeutrallyStable;
    v.theorem = "Theorem 4";
    return v;
  }
  if (resonant && lnm < 0.0 && lnl > 0.0) {
    v.kind = Kind::PolynomialDecayToZero;
    v.theorem = "Theorem 4";
    v.u_star = u_star;
    v.notes.push_back("|z(t)| = O(t^{-theta/2}) with t^theta H0 -> u*");
    return v;
  }
  if (lnm > 0.0 && lnl > 0.0) {
    if (!noise)
      throw MissingNoiseBound("instability branch of Theorem 5 needs a noise bound");
    if (n + l <= q && noise->sigma >= static_cast<double>(n + l) / q - 1e-12) {
      double threshold = sigma_equals(*noise, n + l, q) ? 0.5 * noise->mu * noise->mu : 0.0;
      if (lnl > threshold) {
        v.kind = Kind::Unstable;
        v.theorem = "Theorem 5";
        return v;
      }
    }
  }
  v.kind = Kind::Inconclusive;
  v.notes.push_back("no row of the nonlinear tables matches");
  return v;
}

StabilityVerdict classify_cycle(const avg::AveragedDrift& drift, const avg::ExponentFit& fit,
                                int q) {
  if (fit.n != q)
    throw HypothesisViolated("stable-cycle theorem requires n = q (got n=" +
                             std::to_string(fit.n) + ", q=" + std::to_string(q) + ")");
  auto roots = avg::find_cycle_roots(drift, fit.n);
  StabilityVerdict v;
  nlohmann::json j;
  j["fit"] = fit_json(fit);
  j["q"] = q;
  v.inputs = j.dump();
  for (const auto& root : roots) {
    if (root.stable) {
      v.kind = Kind::StableCycle;
      v.theorem = "Theorem 6";
      v.cycle_energy = root.c;
      std::ostringstream note;
      note << "|z(t)| -> sqrt(2c) = " << std::sqrt(2.0 * root.c) << " with high probability";
      v.notes.push_back(note.str());
      return v;
    }
  }
  v.kind = Kind::Inconclusive;
  v.notes.push_back("only roots with Lambda' > 0; outside the stable-cycle theorem");
  return v;
}

double practical_horizon(int n, int q, double t0, double delta, double epsilon, double mu) {
  if (n > q) throw BadOrder("practical horizon requires n <= q");
  if (!(delta > 0.0 && delta < epsilon) || !(mu > 0.0))
    throw Error("practical_horizon: need 0 < delta < epsilon and mu > 0");
  double ratio = delta * delta / (epsilon * epsilon * mu * mu);
  if (n < q) return std::pow(t0, static_cast<double>(n) / q) * ratio;
  return t0 * std::expm1(ratio);
}

std::string table_label(const StabilityVerdict& v) {
  switch (v.kind) {
    case Kind::ExponentiallyStable: return "exponentially stable";
    case Kind::PolynomiallyStable: return "polynomially stable";
    case Kind::NeutrallyStable: return "stable";
    case Kind::Unstable: return "unstable";
    case Kind::PracticallyStable: return "practically stable";
    case Kind::PolynomialDecayToZero: return "polynomially stable";
    case Kind::StableCycle: return "stable cycle";
    case Kind::WeightedUnstable: return "unstable";
    case Kind::WeightedStable:
      if (!v.weight) return "stable";
      return v.weight->n < v.weight->q   ? "exponentially stable"
             : v.weight->n == v.weight->q ? "polynomially stable"
                                          : "stable";
    case Kind::Inconclusive: return "inconclusive";
  }
  return "inconclusive";
}

std::string to_json(const StabilityVerdict& v) {
  nlohmann::json j;
  j["kind"] = kind_name(v.kind);
  j["label"] = table_label(v);
  if (!v.theorem.empty()) j["theorem"] = v.theorem;
  if (v.weight) j["weight"] = weight_json(*v.weight);
  if (v.horizon) j["horizon"] = *v.horizon;
  if (v.cycle_energy) j["cycle_energy"] = *v.cycle_energy;
  if (v.u_star) j["u_star"] = *v.u_star;
  if (v.theta) j["theta"] = *v.theta;
  if (v.instability_weight) j["instability_weight"] = weight_json(*v.instability_weight);
  if (!v.notes.empty()) j["notes"] = v.notes;
  if (!v.inputs.empty()) j["inputs"] = nlohmann::json::parse(v.inputs);
  return j.dump(2);
}

}  // namespace fadebif::cls
