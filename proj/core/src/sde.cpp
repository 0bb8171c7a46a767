#include "fadebif/sde.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

#include "fadebif/gridmath.hpp"

namespace fadebif::sde {

namespace {

constexpr double kQNan = std::numeric_limits<double>::quiet_NaN();

struct Philox4x32 {
  static std::array<std::uint32_t, 4> round10(std::array<std::uint32_t, 4> ctr,
                                              std::uint32_t k0, std::uint32_t k1) {
    constexpr std::uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u;
    constexpr std::uint32_t W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
    for (int r = 0; r < 10; ++r) {
      std::uint64_t p0 = static_cast<std::uint64_t>(M0) * ctr[0];
      std::uint64_t p1 = static_cast<std::uint64_t>(M1) * ctr[2];
      std::array<std::uint32_t, 4> next;
      next[0] = static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ k0;
      next[1] = static_cast<std::uint32_t>(p1);
      next[2] = static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ k1;
      next[3] = static_cast<std::uint32_t>(p0);
      ctr = next;
      k0 += W0;
      k1 += W1;
    }
    return ctr;
  }
};

inline double to_unit(std::uint32_t hi, std::uint32_t lo) {
  std::uint64_t u = (static_cast<std::uint64_t>(hi) << 32) | lo;
  return (static_cast<double>(u >> 11) + 0.5) * 0x1.0p-53;  // in (0, 1)
}

}  // namespace

std::array<std::uint32_t, 4> PhiloxStream::words(std::uint64_t k) const {
  std::array<std::uint32_t, 4> ctr = {
      static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32),
      static_cast<std::uint32_t>(path_), static_cast<std::uint32_t>(path_ >> 32)};
  return Philox4x32::round10(ctr, key0_, key1_);
}

Vec2 PhiloxStream::normal_pair(std::uint64_t k) const {
  auto w = words(k);
  double u1 = to_unit(w[0], w[1]);
  double u2 = to_unit(w[2], w[3]);
  double r = std::sqrt(-2.0 * std::log(u1));
  return {r * std::cos(kTwoPi * u2), r * std::sin(kTwoPi * u2)};
}

void SimulationConfig::validate() const {
  if (!(t0 >= 1.0)) throw Error("simulation start time must satisfy t0 >= 1");
  if (!(t1 > t0)) throw Error("simulation needs t1 > t0");
  if (!(dt > 0.0) || dt > t1 - t0) throw Error("need 0 < dt <= t1 - t0");
  if (record_stride < 1) throw Error("record_stride must be >= 1");
}

Vec2 em_step(const pert::SdeSystem& sys, const Vec2& z, double t, double dt, const Vec2& dW) {
  Vec2 p;
  Mat2 B;
  sys.pert_eval(z, t, p, B);
  Vec2 g = sys.ham.grad(z.x, z.y);
  Vec2 n = B.apply(dW);
  return {z.x + dt * (g.y + p.x) + n.x, z.y + dt * (-g.x + p.y) + n.y};
}

namespace {

// One RK4 step of the limiting flow dX/dt = dH0/dy, dY/dt = -dH0/dx.
inline Vec2 limiting_rk4(const ham::LimitingHamiltonian& ham, const Vec2& z, double h) {
  auto f = [&ham](const Vec2& s) -> Vec2 { return {ham.dy(s.x, s.y), -ham.dx(s.x, s.y)}; };
  Vec2 k1 = f(z);
  Vec2 k2 = f({z.x + 0.5 * h * k1.x, z.y + 0.5 * h * k1.y});
  Vec2 k3 = f({z.x + 0.5 * h * k2.x, z.y + 0.5 * h * k2.y});
  Vec2 k4 = f({z.x + h * k3.x, z.y + h * k3.y});
  return {z.x + h / 6.0 * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x),
          z.y + h / 6.0 * (k1.y + 2.0 * k2.y + 2.0 * k3.y + k4.y)};
}

}  // namespace

Vec2 split_step(const pert::SdeSystem& sys, const Vec2& z, double t, double dt, const Vec2& dW) {
  Vec2 p;
  Mat2 B;
  sys.pert_eval(z, t, p, B);
  Vec2 n = B.apply(dW);
  Vec2 rot;
  if (sys.ham.is_harmonic()) {
    double c = std::cos(dt), s = std::sin(dt);
    rot = {c * z.x + s * z.y, -s * z.x + c * z.y};  // clockwise rotation
  } else {
    rot = limiting_rk4(sys.ham, z, dt);
  }
  return {rot.x + dt * p.x + n.x, rot.y + dt * p.y + n.y};
}

namespace {

struct StepperContext {
  const pert::SdeSystem* sys;
  double blowup_radius;
};

template <class Observer>
void run_path(const StepperContext& ctx, const SimulationConfig& cfg, std::uint64_t path_index,
              Observer&& observe, PathFlags& flags) {
  const pert::SdeSystem& sys = *ctx.sys;
  PhiloxStream stream(cfg.seed, path_index);
  const double sqrt_dt = std::sqrt(cfg.dt);
  const bool split = cfg.scheme == Scheme::SplitStep;
  const bool harmonic_rot = split && sys.ham.is_harmonic();
  const double rot_c = std::cos(cfg.dt), rot_s = std::sin(cfg.dt);
  Vec2 z = cfg.z0;
  double t = cfg.t0;
  std::uint64_t k = 0;
  const std::uint64_t n_steps =
      static_cast<std::uint64_t>(std::ceil((cfg.t1 - cfg.t0) / cfg.dt - 1e-12));
  observe(0, t, z);
  while (k < n_steps) {
    double dt = std::min(cfg.dt, cfg.t1 - t);
    double sd = dt == cfg.dt ? sqrt_dt : std::sqrt(dt);
    Vec2 xi = stream.normal_pair(k);
    Vec2 dW{sd * xi.x, sd * xi.y};
    if (harmonic_rot && dt == cfg.dt) {
      Vec2 p;
      Mat2 B;
      sys.pert_eval(z, t, p, B);
      Vec2 n = B.apply(dW);
      z = {rot_c * z.x + rot_s * z.y + dt * p.x + n.x,
           -rot_s * z.x + rot_c * z.y + dt * p.y + n.y};
    } else {
      z = split ? split_step(sys, z, t, dt, dW) : em_step(sys, z, t, dt, dW);
    }
    t += dt;
    ++k;
    if (!std::isfinite(z.x) || !std::isfinite(z.y)) {
      flags.nonfinite = true;
      flags.t_truncated = t;
      return;
    }
    if (z.norm() > ctx.blowup_radius) {
      flags.blowup = true;
      flags.t_truncated = t;
      return;
    }
    if (k % static_cast<std::uint64_t>(cfg.record_stride) == 0 || k == n_steps)
      observe(k, t, z);
  }
}

}  // namespace

Path simulate_path(const pert::SdeSystem& sys, const SimulationConfig& cfg,
                   std::uint64_t path_index, const ham::AngleAtlas* atlas) {
  cfg.validate();
  StepperContext ctx{&sys, 1e3 * sys.ham.r()};
  std::optional<ham::AngleAtlas> own;
  if (atlas == nullptr) {
    own.emplace(sys.ham);
    atlas = &*own;
  }
  Path path;
  path.seed_used = cfg.seed;
  path.path_index = path_index;
  auto observe = [&](std::uint64_t, double t, const Vec2& z) {
    path.times.push_back(t);
    path.x.push_back(z.x);
    path.y.push_back(z.y);
    path.absz.push_back(z.norm());
    path.energy.push_back(sys.ham.value(z.x, z.y));
    path.phi.push_back(atlas->phi(z.x, z.y));
  };
  run_path(ctx, cfg, path_index, observe, path.flags);
  return path;
}

Ensemble simulate_ensemble(const pert::SdeSystem& sys, const EnsembleConfig& cfg) {
  cfg.validate();
  if (cfg.n_paths < 1) throw Error("ensemble needs n_paths >= 1");

  Ensemble ens;
  ens.config = cfg;
  ens.system_name = sys.name;
  ens.system_params = sys.params;
  ens.paths.resize(static_cast<std::size_t>(cfg.n_paths));

  // Summary time grid: geometric between t0 and t1 (plus the endpoints),
  // snapped to recorded steps.
  const std::uint64_t n_steps =
      static_cast<std::uint64_t>(std::ceil((cfg.t1 - cfg.t0) / cfg.dt - 1e-12));
  std::vector<std::uint64_t> summary_steps;
  {
    const int n_summary = std::max(2, cfg.n_summary);
    const auto stride = static_cast<std::uint64_t>(cfg.record_stride);
    summary_steps.reserve(static_cast<std::size_t>(n_summary));
    double lo = cfg.t0 + cfg.dt, hi = cfg.t1;
    std::uint64_t prev = std::numeric_limits<std::uint64_t>::max();
    for (int i = 0; i < n_summary; ++i) {
      double tt = lo * std::pow(hi / lo, static_cast<double>(i) / (n_summary - 1));
      auto step = static_cast<std::uint64_t>(std::llround((tt - cfg.t0) / cfg.dt));
      step = (step / stride) * stride;  // snap onto the recording grid
      step = std::min<std::uint64_t>(std::max<std::uint64_t>(step, stride), n_steps);
      if (step != prev) {
        summary_steps.push_back(step);
        prev = step;
      }
    }
  }
  ens.summary.times.resize(summary_steps.size());
  for (std::size_t i = 0; i < summary_steps.size(); ++i)
    ens.summary.times[i] = cfg.t0 + static_cast<double>(summary_steps[i]) * cfg.dt;

  const std::size_t n_probes = cfg.probe_weights.size() + 1;
  StepperContext ctx{&sys, 1e3 * sys.ham.r()};

  auto worker_body = [&](std::uint64_t pi) {
    PathStats& stats = ens.paths[static_cast<std::size_t>(pi)];
    stats.log_max_weighted.assign(n_probes, -std::numeric_limits<double>::infinity());
    stats.absz_at_summary.assign(summary_steps.size(), kQNan);
    stats.energy_at_summary.assign(summary_steps.size(), kQNan);
    std::size_t summary_pos = 0;
    auto observe = [&](std::uint64_t k, double t, const Vec2& z) {
      double r = z.norm();
      double lr = r > 0.0 ? std::log(r) : -std::numeric_limits<double>::infinity();
      stats.log_max_weighted[0] = std::max(stats.log_max_weighted[0], lr);
      for (std::size_t p = 0; p < cfg.probe_weights.size(); ++p) {
        double lw = lr + cfg.probe_weights[p].prefactor *
                             cls::log_gamma_n(cfg.probe_weights[p].n, cfg.probe_weights[p].q, t) +
                    0.5 * cfg.probe_weights[p].extra * std::log(t);
        stats.log_max_weighted[p + 1] = std::max(stats.log_max_weighted[p + 1], lw);
      }
      while (summary_pos < summary_steps.size() && summary_steps[summary_pos] <= k) {
        stats.absz_at_summary[summary_pos] = r;
        stats.energy_at_summary[summary_pos] = sys.ham.value(z.x, z.y);
        ++summary_pos;
      }
      stats.final_state = z;
    };
    run_path(ctx, cfg, pi, observe, stats.flags);
    if (stats.flags.truncated()) {
      // escaped paths dominate every later statistic
      for (std::size_t i = summary_pos; i < summary_steps.size(); ++i) {
        stats.absz_at_summary[i] = std::numeric_limits<double>::infinity();
        stats.energy_at_summary[i] = std::numeric_limits<double>::infinity();
      }
      for (auto& m : stats.log_max_weighted) m = std::numeric_limits<double>::infinity();
    }
  };

  int jobs = cfg.jobs > 0 ? cfg.jobs
                          : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  jobs = std::min(jobs, cfg.n_paths);
  if (jobs <= 1) {
    for (int pi = 0; pi < cfg.n_paths; ++pi) worker_body(static_cast<std::uint64_t>(pi));
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(jobs));
    for (int w = 0; w < jobs; ++w)
      pool.emplace_back([&] {
        for (;;) {
          int pi = next.fetch_add(1);
          if (pi >= cfg.n_paths) return;
          worker_body(static_cast<std::uint64_t>(pi));
        }
      });
    for (auto& th : pool) th.join();
  }

  for (const auto& p : ens.paths)
    if (p.flags.truncated()) ++ens.truncated_count;

  // quantile summaries (deterministic: values gathered by path index)
  const double qs[5] = {0.05, 0.25, 0.5, 0.75, 0.95};
  for (int qi = 0; qi < 5; ++qi) {
    ens.summary.absz_q[static_cast<std::size_t>(qi)].resize(summary_steps.size());
    ens.summary.energy_q[static_cast<std::size_t>(qi)].resize(summary_steps.size());
  }
  std::vector<double> col(static_cast<std::size_t>(cfg.n_paths));
  for (std::size_t ti = 0; ti < summary_steps.size(); ++ti) {
    for (int pi = 0; pi < cfg.n_paths; ++pi)
      col[static_cast<std::size_t>(pi)] = ens.paths[static_cast<std::size_t>(pi)].absz_at_summary[ti];
    for (int qi = 0; qi < 5; ++qi)
      ens.summary.absz_q[static_cast<std::size_t>(qi)][ti] = grid::quantile(col, qs[qi]);
    for (int pi = 0; pi < cfg.n_paths; ++pi)
      col[static_cast<std::size_t>(pi)] = ens.paths[static_cast<std::size_t>(pi)].energy_at_summary[ti];
    for (int qi = 0; qi < 5; ++qi)
      ens.summary.energy_q[static_cast<std::size_t>(qi)][ti] = grid::quantile(col, qs[qi]);
  }
  return ens;
}

}  // namespace fadebif::sde
