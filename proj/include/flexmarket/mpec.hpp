#pragma once

#include <cstring>
#include <limits>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "flexmarket/vgne.hpp"

// Leader layer: searches the box Gamma for a local Stackelberg equilibrium of
// the bilevel program, using the follower equilibrium map as an oracle.
// Derivative-free multi-start pattern search with exact projection onto the
// box, a sampled local-optimality certificate, and a brute-force grid oracle
// for desk-scale verification.

namespace flexmarket {

/// Caching wrapper around the follower solve: J(z0) = J_DSO(z0, x(z0)).
/// Values are cached by the exact bytes of z0; the solver itself is reused so
/// the splitting path can warm start along the search trajectory.
class LeaderObjective {
 public:
  LeaderObjective(const AssembledGame& gm, SolveOptions fopts = {})
      : gm_(&gm), solver_(gm, fopts) {}

  /// Leader cost at z0 (followers at equilibrium). Propagates SolveError.
  double eval(const LeaderDecision& z0) {
    const std::string k = key(z0);
    auto it = cache_.find(k);
    if (it != cache_.end()) {
      if (!std::isfinite(it->second)) throw SolveError(SolveError::Kind::IterationLimit,
                                                       "follower solve failed at this z0 (cached)");
      return it->second;
    }
    ++evals_;
    try {
      last_solution_ = solver_.solve(z0);
      last_key_ = k;
    } catch (...) {
      cache_[k] = std::numeric_limits<double>::quiet_NaN();
      throw;
    }
    const double j = gm_->leader_cost(z0, last_solution_.x);
    cache_[k] = j;
    return j;
  }

  /// eval() with failures mapped to +inf, for search loops.
  double eval_or_inf(const LeaderDecision& z0) {
    try {
      return eval(z0);
    } catch (const SolveError&) {
      ++failures_;
      return std::numeric_limits<double>::infinity();
    }
  }

  /// Follower solution at z0 (re-solves if it is not the most recent point).
  const VgneSolution& solution(const LeaderDecision& z0) {
    const std::string k = key(z0);
    if (k != last_key_) {
      last_solution_ = solver_.solve(z0);
      last_key_ = k;
    }
    return last_solution_;
  }

  long evaluations() const { return evals_; }
  long failures() const { return failures_; }
  const AssembledGame& game() const { return *gm_; }

 private:
  static std::string key(const LeaderDecision& z0) {
    const VectorXd z = z0.stacked();
    return std::string(reinterpret_cast<const char*>(z.data()), sizeof(double) * z.size());
  }

  const AssembledGame* gm_;
  VgneSolver solver_;
  std::unordered_map<std::string, double> cache_;
  VgneSolution last_solution_;
  std::string last_key_;
  long evals_ = 0;
  long failures_ = 0;
};

struct Certificate {
  double radius = 0.0;
  int samples = 0;
  double worst_improvement = 0.0;  // min over samples of J(sample) - J(z0)
  bool pass = true;
  LeaderDecision worst_point;
};

struct LseOptions {
  int starts = 8;
  uint64_t seed = 0;
  double mesh_init = 0.25;    // fraction of each box width
  double contraction = 0.5;
  double expansion = 2.0;
  double mesh_tol = 1e-4;
  long max_evals_per_start = 20000;
  double tol_improve = 1e-6;
  double certify_radius = 1e-3;
  int certify_samples = 200;
  int max_certify_rounds = 25;  // certificate-driven restarts
  std::vector<LeaderDecision> extra_starts;
  SolveOptions follower;
};

struct EquilibriumResult {
  LeaderDecision z0_star;
  VectorXd x_star;
  VectorXd lambda, lambda_local;
  double J_dso = 0.0;
  VectorXd J_followers;
  KktResidual kkt;
  double eps = 0.0;
  Certificate certificate;
  std::vector<std::pair<VectorXd, double>> trace;  // incumbent updates
  long evaluations = 0;
};

namespace detail {

/// Axis bookkeeping for the normalized search box.
struct LeaderBox {
  const AssembledGame* gm;
  std::vector<int> free_axes;  // indices into the stacked z0
  VectorXd lo, hi;             // stacked bounds

  explicit LeaderBox(const AssembledGame& g) : gm(&g) {
    const int T = g.T;
    lo.resize(2 * T);
    hi.resize(2 * T);
    lo << g.scen.c0_lo, VectorXd::Zero(T);
    hi << g.scen.c0_hi, VectorXd::Ones(T);
    for (int j = 0; j < 2 * T; ++j)
      if (hi(j) > lo(j)) free_axes.push_back(j);
  }
  int dim() const { return static_cast<int>(free_axes.size()); }
  LeaderDecision at(const VectorXd& u) const {  // u over free axes, in [0,1]
    VectorXd z = lo;
    for (int a = 0; a < dim(); ++a) {
      const int j = free_axes[a];
      z(j) = lo(j) + u(a) * (hi(j) - lo(j));
    }
    return LeaderDecision::from_stacked(z);
  }
};

}  // namespace detail

/// Samples leader points uniformly in the radius-ball around z0 (intersected
/// with Gamma by exact projection), re-solves the followers and records the
/// worst cost improvement found.
inline Certificate certify_lse(LeaderObjective& oracle, const LeaderDecision& z0, double radius,
                               int samples, uint64_t seed, double tol_improve = 1e-6) {
  Certificate cert;
  cert.radius = radius;
  cert.samples = samples;
  cert.worst_point = z0;
  if (radius <= 0.0 || samples <= 0) return cert;

  const detail::LeaderBox box(oracle.game());
  const int d = box.dim();
  if (d == 0) return cert;
  const double j0 = oracle.eval(z0);
  std::mt19937_64 rng(seed);
  const VectorXd z0s = z0.stacked();
  for (int s = 0; s < samples; ++s) {
    VectorXd dir = VectorXd::Zero(d);
    for (int a = 0; a < d; ++a) dir(a) = gaussian(rng);
    const double nrm = dir.norm();
    if (nrm < 1e-14) continue;
    const double rad = radius * std::pow(uniform01(rng), 1.0 / d);
    VectorXd cand = z0s;
    for (int a = 0; a < d; ++a) cand(box.free_axes[a]) += rad * dir(a) / nrm;
    const LeaderDecision zc = oracle.game().project_gamma(LeaderDecision::from_stacked(cand));
    const double js = oracle.eval_or_inf(zc);
    const double improvement = js - j0;
    if (improvement < cert.worst_improvement) {
      cert.worst_improvement = improvement;
      cert.worst_point = zc;
    }
  }
  cert.pass = cert.worst_improvement >= -tol_improve;
  return cert;
}

/// Convenience overload building its own follower oracle. `x` is the claimed
/// equilibrium at z0; it is checked for feasibility at the usual tolerance.
inline Certificate certify_lse(const AssembledGame& gm, const LeaderDecision& z0,
                               const VectorXd& x, double radius, int samples,
                               uint64_t seed = 0, SolveOptions fopts = {},
                               double tol_improve = 1e-6) {
  ResidualReport rr = constraint_residuals(unstack_followers(x, gm.N), gm.scen);
  if (std::max(rr.max_inequality(), rr.max_equality_abs()) > 1e-6)
    throw Error("certify_lse: supplied x is not feasible");
  LeaderObjective oracle(gm, fopts);
  return certify_lse(oracle, z0, radius, samples, seed, tol_improve);
}

namespace detail {

struct PatternSearchOut {
  VectorXd u;
  double value = std::numeric_limits<double>::infinity();
};

/// Compass pattern search on the normalized box, opportunistic polling with
/// dynamic direction ordering, exact clamping onto [0,1].
template <typename F>
PatternSearchOut pattern_search(const F& f, VectorXd u, double mesh_init, double contraction,
                                double expansion, double mesh_tol, long max_evals,
                                long* eval_counter) {
  const int d = static_cast<int>(u.size());
  PatternSearchOut out;
  double j = f(u);
  long evals = 1;
  double mesh = mesh_init;
  int last_dir = 0;
  while (mesh >= mesh_tol && evals < max_evals) {
    bool improved = false;
    for (int step = 0; step < 2 * d; ++step) {
      const int dir = (last_dir + step) % (2 * d);
      const int axis = dir / 2;
      const double sgn = (dir % 2 == 0) ? 1.0 : -1.0;
      VectorXd v = u;
      v(axis) = std::clamp(u(axis) + sgn * mesh, 0.0, 1.0);
      if (v(axis) == u(axis)) continue;
      const double jv = f(v);
      ++evals;
      if (jv < j) {
        u = v;
        j = jv;
        last_dir = dir;
        improved = true;
        break;
      }
      if (evals >= max_evals) break;
    }
    mesh = improved ? std::min(mesh * expansion, mesh_init) : mesh * contraction;
  }
  if (eval_counter) *eval_counter += evals;
  out.u = u;
  out.value = j;
  return out;
}

}  // namespace detail

/// Multi-start pattern search for a local Stackelberg equilibrium, certified
/// by ball sampling; failing certificates restart the search from the best
/// improving sample until the certificate passes or the round budget is hit.
inline EquilibriumResult solve_lse(const AssembledGame& gm, const LseOptions& opts = {}) {
  detail::LeaderBox box(gm);
  const int d = box.dim();
  LeaderObjective oracle(gm, opts.follower);

  EquilibriumResult res;
  res.eps = opts.follower.eps();
  double best = std::numeric_limits<double>::infinity();
  VectorXd best_u;

  // Start list: caller-provided points, then the midpoint, then box vertices
  // of a 2-point stencil on a random coordinate subspace.
  std::vector<VectorXd> starts;
  for (const auto& z : opts.extra_starts) {
    const LeaderDecision zp = gm.project_gamma(z);
    VectorXd u(d);
    const VectorXd zs = zp.stacked();
    for (int a = 0; a < d; ++a) {
      const int jx = box.free_axes[a];
      u(a) = (zs(jx) - box.lo(jx)) / (box.hi(jx) - box.lo(jx));
    }
    starts.push_back(u);
  }
  starts.push_back(VectorXd::Constant(d, 0.5));
  std::mt19937_64 seed_rng(opts.seed);
  while (static_cast<int>(starts.size()) < opts.starts) {
    VectorXd u = VectorXd::Constant(d, 0.5);
    for (int a = 0; a < d; ++a)
      if (seed_rng() & 1) u(a) = (seed_rng() & 1) ? 1.0 : 0.0;
    starts.push_back(u);
  }
  if (static_cast<int>(starts.size()) > opts.starts && opts.starts > 0)
    starts.resize(opts.starts);

  auto fval = [&](const VectorXd& u) { return oracle.eval_or_inf(box.at(u)); };
  auto consider = [&](const VectorXd& u, double j) {
    if (j < best) {
      best = j;
      best_u = u;
      res.trace.emplace_back(box.at(u).stacked(), j);
    }
  };

  std::string failures;
  for (const auto& u0 : starts) {
    const double j0 = fval(u0);
    if (!std::isfinite(j0)) continue;
    consider(u0, j0);
    detail::PatternSearchOut ps =
        detail::pattern_search(fval, u0, opts.mesh_init, opts.contraction, opts.expansion,
                               opts.mesh_tol, opts.max_evals_per_start, nullptr);
    consider(ps.u, ps.value);
  }
  if (!std::isfinite(best))
    throw SolveError(SolveError::Kind::AllStartsFailed,
                     "every leader start failed the follower solve (" +
                         std::to_string(oracle.failures()) + " failures)");

  // Certificate-driven refinement.
  Certificate cert;
  for (int round = 0; round < std::max(1, opts.max_certify_rounds); ++round) {
    cert = certify_lse(oracle, box.at(best_u), opts.certify_radius, opts.certify_samples,
                       opts.seed + 7919 * (round + 1), opts.tol_improve);
    if (cert.pass) break;
    // restart from the improving sample
    const VectorXd zs = cert.worst_point.stacked();
    VectorXd u(d);
    for (int a = 0; a < d; ++a) {
      const int jx = box.free_axes[a];
      u(a) = (zs(jx) - box.lo(jx)) / (box.hi(jx) - box.lo(jx));
    }
    consider(u, oracle.eval_or_inf(cert.worst_point));
    detail::PatternSearchOut ps =
        detail::pattern_search(fval, u, opts.mesh_init * 0.25, opts.contraction, opts.expansion,
                               opts.mesh_tol, opts.max_evals_per_start, nullptr);
    consider(ps.u, ps.value);
  }

  const LeaderDecision z0 = box.at(best_u);
  const VgneSolution& sol = oracle.solution(z0);
  res.z0_star = z0;
  res.x_star = sol.x;
  res.lambda = sol.lambda;
  res.lambda_local = sol.lambda_local;
  res.J_dso = best;
  res.kkt = kkt_residual(gm, z0, sol.x, sol.lambda, sol.lambda_local, sol.eps);
  res.certificate = cert;
  res.evaluations = oracle.evaluations();
  const auto xs = unstack_followers(sol.x, gm.N);
  res.J_followers.resize(gm.N);
  for (int i = 0; i < gm.N; ++i) res.J_followers(i) = eval_prosumer_cost(i, xs, z0, gm.scen);
  return res;
}

struct GridResult {
  LeaderDecision best;
  double best_cost = std::numeric_limits<double>::infinity();
  long best_index = -1;
  long points = 0;
  VectorXd costs;  // lex order over free axes, last axis fastest
  std::vector<int> axis_counts;

  /// Reconstructs the grid point for a flat index (cell centers).
  LeaderDecision point_at(long index, const AssembledGame& gm) const {
    detail::LeaderBox box(gm);
    VectorXd u(box.dim());
    long rem = index;
    for (int a = box.dim() - 1; a >= 0; --a) {
      const int k = static_cast<int>(rem % axis_counts[a]);
      rem /= axis_counts[a];
      u(a) = (k + 0.5) / axis_counts[a];
    }
    return box.at(u);
  }
};

/// Exhaustive follower solve on a grid of cell centers, `resolution` points
/// per free leader coordinate. Guard: at most 10^6 grid points.
inline GridResult grid_oracle(const AssembledGame& gm, int resolution,
                              SolveOptions fopts = {}) {
  if (resolution < 1) throw Error("grid_oracle: resolution must be >= 1");
  detail::LeaderBox box(gm);
  const int d = box.dim();
  double total = 1;
  for (int a = 0; a < d; ++a) total *= resolution;
  if (total > 1e6)
    throw Error("grid_oracle: " + std::to_string(total) + " grid points exceed the 1e6 guard");

  GridResult out;
  out.axis_counts.assign(d, resolution);
  out.points = static_cast<long>(total);
  out.costs.resize(out.points);
  LeaderObjective oracle(gm, fopts);

  VectorXd u(d);
  std::vector<int> idx(d, 0);
  for (long flat = 0; flat < out.points; ++flat) {
    long rem = flat;
    for (int a = d - 1; a >= 0; --a) {
      idx[a] = static_cast<int>(rem % resolution);
      rem /= resolution;
    }
    for (int a = 0; a < d; ++a) u(a) = (idx[a] + 0.5) / resolution;
    const double j = oracle.eval_or_inf(box.at(u));
    out.costs(flat) = j;
    if (j < out.best_cost) {
      out.best_cost = j;
      out.best = box.at(u);
      out.best_index = flat;
    }
  }
  if (out.best_index < 0) throw SolveError(SolveError::Kind::AllStartsFailed,
                                           "grid oracle: every grid point failed");
  return out;
}

}  // namespace flexmarket
