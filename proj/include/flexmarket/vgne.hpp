#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "flexmarket/assemble.hpp"
#include "flexmarket/lcp.hpp"
#include "flexmarket/qp_admm.hpp"
#include "flexmarket/random.hpp"

// Computes variational generalized Nash equilibria of the followers' game for
// a fixed leader decision. The pseudo-gradient bigQ x + C z0 + q is the
// gradient of the convex potential 1/2 x' bigQ x + (C z0 + q)' x (bigQ is
// symmetric PSD), so the KKT system is solved as a convex QP over the
// collective feasible set: a Lemke complementary-pivoting core on the KKT
// LCP, with an operator-splitting fallback. Masked variables, the storage
// dynamics equalities and the plain sign bounds are eliminated structurally
// before pivoting; every eliminated multiplier is recovered exactly, so the
// returned triplet satisfies the full stacked KKT system.

namespace flexmarket {

enum class SolveMethod { Auto, Pivoting, Splitting };

struct SolveOptions {
  SolveMethod method = SolveMethod::Auto;
  bool tikhonov = true;        // add eps*||x_i||^2 to each follower cost
  double tikhonov_eps = 1e-8;
  double tol_stat = 1e-6;      // absolute, after row scaling
  double tol_feas = 1e-6;
  double tol_comp = 1e-8;
  int max_pivots = -1;         // Lemke; <= 0 picks 60n + 2000
  int max_iterations = 200000; // splitting
  int auto_pivot_dim = 700;    // Auto: pivot when the KKT LCP is below this
  bool warm_start = true;      // splitting reuses the previous iterate

  double eps() const { return tikhonov ? tikhonov_eps : 0.0; }
};

struct VgneSolution {
  VectorXd x;             // collective follower decision, length 7TN
  VectorXd lambda;        // coupling duals, one shared multiplier per row
  VectorXd lambda_local;  // local duals; equality rows carry free multipliers
  double stat_residual = 0, feas_residual = 0, comp_residual = 0;
  double eps = 0;         // Tikhonov weight the residuals refer to
  SolveMethod method_used = SolveMethod::Pivoting;
  int iterations = 0;

  std::vector<FollowerDecision> followers(int N) const { return unstack_followers(x, N); }
};

struct KktResidual {
  double stat = 0;       // stationarity, max-norm
  double feas = 0;       // primal feasibility (scaled rows)
  double comp = 0;       // complementarity gap, max over rows
  double dual_feas = 0;  // negative part of inequality multipliers
  double worst() const { return std::max(std::max(stat, feas), std::max(comp, dual_feas)); }
};

/// Residuals of the stacked KKT system at (x, lambda, lambda_local). `eps` is
/// the Tikhonov weight of the system being checked (0 = the raw game).
inline KktResidual kkt_residual(const AssembledGame& gm, const LeaderDecision& z0,
                                const VectorXd& x, const VectorXd& lambda,
                                const VectorXd& lambda_local, double eps = 0.0) {
  KktResidual res;
  VectorXd grad = gm.pseudo_gradient(z0.stacked(), x, eps);
  grad += gm.Acoup.transpose() * lambda;
  grad += gm.Flocal.transpose() * lambda_local;
  res.stat = grad.lpNorm<Eigen::Infinity>();

  const VectorXd ax = gm.Acoup * x;
  for (int r = 0; r < gm.mA(); ++r) {
    const double scale = std::max(1.0, gm.Acoup.row(r).cwiseAbs().maxCoeff());
    const double slack = gm.bcoup(r) - ax(r);
    res.feas = std::max(res.feas, -slack / scale);
    res.comp = std::max(res.comp, std::abs(lambda(r) * slack) / scale);
    res.dual_feas = std::max(res.dual_feas, -lambda(r));
  }
  const VectorXd fx = gm.Flocal * x;
  for (int r = 0; r < gm.mF(); ++r) {
    const double scale = std::max(1.0, gm.Flocal.row(r).cwiseAbs().maxCoeff());
    const double slack = gm.flocal(r) - fx(r);
    if (gm.local_rows[r].equality) {
      res.feas = std::max(res.feas, std::abs(slack) / scale);
    } else {
      res.feas = std::max(res.feas, -slack / scale);
      res.comp = std::max(res.comp, std::abs(lambda_local(r) * slack) / scale);
      res.dual_feas = std::max(res.dual_feas, -lambda_local(r));
    }
  }
  return res;
}

/// Reduced form of the follower QP: masked variables dropped, k and t sign
/// flipped to nonnegative, the storage states folded into (pc, pdc), plain
/// sign rows absorbed as variable bounds. full x = R xr + r0.
struct ReducedGame {
  int nred = 0;
  MatrixXd R;         // nx x nred
  VectorXd r0;        // nx
  MatrixXd Pred;      // nred x nred, includes the Tikhonov term
  MatrixXd Cred;      // nred x 2T
  VectorXd qred;      // nred
  MatrixXd G;         // general inequality rows, scaled
  VectorXd h;
  std::vector<int> row_src;       // per G row: global row id (local rows first, then coupling)
  std::vector<double> row_scale;  // G stored as (a / scale)
  std::vector<int> bound_src;     // per reduced var: global row id of its sign row
  std::vector<double> bound_coef; // reduced coefficient of that row (negative)
  std::vector<int> dropped_rows;  // rows that reduce to 0 <= rhs
  double eps = 0.0;

  int lcp_dim() const { return nred + static_cast<int>(G.rows()); }
};

inline ReducedGame build_reduced(const AssembledGame& gm, double eps) {
  const Scenario& sc = gm.scen;
  const int T = gm.T, N = gm.N;
  ReducedGame rd;
  rd.eps = eps;

  std::vector<int> red_of_full(gm.nx, -1);
  std::vector<int> full_of_red;
  std::vector<double> sign;
  auto keep = [&](int i, Var b, int tau, double sg) {
    const int fv = var_index(T, i, b, tau);
    red_of_full[fv] = static_cast<int>(full_of_red.size());
    full_of_red.push_back(fv);
    sign.push_back(sg);
  };
  for (int i = 0; i < N; ++i) {
    for (int tau = 0; tau < T; ++tau) keep(i, Var::P, tau, 1.0);
    for (int tau = 0; tau < T; ++tau)
      if (sc.is_response(tau)) keep(i, Var::Y, tau, 1.0);
    for (int tau = 0; tau < T; ++tau) keep(i, Var::PC, tau, 1.0);
    for (int tau = 0; tau < T; ++tau) keep(i, Var::PDC, tau, 1.0);
    for (int tau = 0; tau < T; ++tau)
      if (sc.is_rebound(tau)) keep(i, Var::K, tau, -1.0);
    for (int tau = 0; tau < T; ++tau)
      if (sc.is_response(tau)) keep(i, Var::TT, tau, -1.0);
  }
  rd.nred = static_cast<int>(full_of_red.size());

  rd.R = MatrixXd::Zero(gm.nx, rd.nred);
  rd.r0 = VectorXd::Zero(gm.nx);
  for (int j = 0; j < rd.nred; ++j) rd.R(full_of_red[j], j) = sign[j];
  // State of charge as the cumulative sum of (dis)charging decisions.
  for (int i = 0; i < N; ++i) {
    const ProsumerSpec& pr = sc.prosumers[i];
    for (int tau = 0; tau < T; ++tau) {
      const int ev = var_index(T, i, Var::E, tau);
      rd.r0(ev) = pr.e0;
      for (int s = 0; s <= tau; ++s) {
        rd.R(ev, red_of_full[var_index(T, i, Var::PC, s)]) = sc.dt * pr.eta_c;
        rd.R(ev, red_of_full[var_index(T, i, Var::PDC, s)]) = -sc.dt * pr.eta_dc;
      }
    }
  }

  rd.Pred = rd.R.transpose() * gm.bigQ * rd.R;
  if (eps != 0.0) rd.Pred += 2.0 * eps * rd.R.transpose() * rd.R;
  rd.Pred = 0.5 * (rd.Pred + rd.Pred.transpose());  // keep exactly symmetric
  rd.Cred = rd.R.transpose() * gm.Cmap;
  rd.qred = rd.R.transpose() * gm.qlin;
  if (eps != 0.0) rd.qred += 2.0 * eps * (rd.R.transpose() * rd.r0);

  rd.bound_src.assign(rd.nred, -1);
  rd.bound_coef.assign(rd.nred, 0.0);
  std::vector<VectorXd> grows;
  std::vector<double> ghs;

  auto add_full_row = [&](const Eigen::Ref<const Eigen::RowVectorXd>& a, double b, int global_id) {
    // Sparse-aware a * R.
    VectorXd ared = VectorXd::Zero(rd.nred);
    double b_red = b;
    double amax = 0.0;
    for (int v = 0; v < gm.nx; ++v) {
      const double c = a(v);
      if (c == 0.0) continue;
      amax = std::max(amax, std::abs(c));
      ared += c * rd.R.row(v).transpose();
      b_red -= c * rd.r0(v);
    }
    int nnz = 0, last = -1;
    double anorm = 0.0;
    for (int j = 0; j < rd.nred; ++j) {
      if (std::abs(ared(j)) > 1e-13 * std::max(1.0, amax)) {
        ++nnz;
        last = j;
        anorm = std::max(anorm, std::abs(ared(j)));
      }
    }
    if (nnz == 0) {
      rd.dropped_rows.push_back(global_id);
      return;
    }
    if (nnz == 1 && ared(last) < 0 && std::abs(b_red) <= 1e-12 && rd.bound_src[last] < 0) {
      rd.bound_src[last] = global_id;
      rd.bound_coef[last] = ared(last);
      return;
    }
    const double scale = std::max(1.0, anorm);
    grows.push_back(ared / scale);
    ghs.push_back(b_red / scale);
    rd.row_src.push_back(global_id);
    rd.row_scale.push_back(scale);
  };

  for (int r = 0; r < gm.mF(); ++r)
    if (!gm.local_rows[r].equality) add_full_row(gm.Flocal.row(r), gm.flocal(r), r);
  for (int r = 0; r < gm.mA(); ++r) add_full_row(gm.Acoup.row(r), gm.bcoup(r), gm.mF() + r);

  rd.G = MatrixXd::Zero(static_cast<int>(grows.size()), rd.nred);
  rd.h = VectorXd::Zero(static_cast<int>(ghs.size()));
  for (size_t r = 0; r < grows.size(); ++r) {
    rd.G.row(static_cast<int>(r)) = grows[r].transpose();
    rd.h(static_cast<int>(r)) = ghs[r];
  }

  for (int j = 0; j < rd.nred; ++j)
    if (rd.bound_src[j] < 0)
      throw SolveError(SolveError::Kind::Internal,
                       "reduced variable " + std::to_string(j) + " has no sign row");
  return rd;
}

/// Deterministic solver for the followers' vGNE at a fixed z0. Holds the
/// reduction and the splitting factorization, so repeated solves (the leader
/// search) only change the linear term.
class VgneSolver {
 public:
  VgneSolver(const AssembledGame& gm, SolveOptions opts = {})
      : gm_(&gm), opts_(opts), red_(build_reduced(gm, opts.eps())) {}

  const AssembledGame& game() const { return *gm_; }
  const ReducedGame& reduced() const { return red_; }
  const SolveOptions& options() const { return opts_; }
  void reset_warm() { have_warm_ = false; }

  VgneSolution solve(const LeaderDecision& z0) {
    if (!gm_->z0_in_gamma(z0, 1e-9))
      throw SolveError(SolveError::Kind::LeaderOutsideGamma, "z0 violates the leader box");
    const VectorXd cred = red_.Cred * z0.stacked() + red_.qred;

    SolveMethod method = opts_.method;
    if (method == SolveMethod::Auto)
      method = red_.lcp_dim() <= opts_.auto_pivot_dim ? SolveMethod::Pivoting : SolveMethod::Splitting;

    std::optional<VgneSolution> best;
    std::string first_error;
    auto consider = [&](SolveMethod m) -> bool {
      std::optional<VgneSolution> cand;
      try {
        cand = run_method(m, z0, cred);
      } catch (const SolveError& e) {
        if (first_error.empty()) first_error = e.what();
        return false;
      }
      if (!best || cand->stat_residual + cand->feas_residual + cand->comp_residual <
                       best->stat_residual + best->feas_residual + best->comp_residual)
        best = std::move(cand);
      return best->stat_residual <= opts_.tol_stat && best->feas_residual <= opts_.tol_feas &&
             best->comp_residual <= opts_.tol_comp;
    };

    bool ok = consider(method);
    if (!ok && opts_.method == SolveMethod::Auto) {
      ok = consider(method == SolveMethod::Pivoting ? SolveMethod::Splitting
                                                    : SolveMethod::Pivoting);
    }
    if (!best)
      throw SolveError(SolveError::Kind::RayTermination,
                       "follower equilibrium solve failed: " + first_error);
    if (!ok)
      throw SolveError(SolveError::Kind::IterationLimit,
                       "follower equilibrium solve did not reach tolerances",
                       best->stat_residual, best->comp_residual, best->feas_residual);
    return std::move(*best);
  }

 private:
  VgneSolution run_method(SolveMethod m, const LeaderDecision& z0, const VectorXd& cred) {
    const int n = red_.nred;
    const int mG = static_cast<int>(red_.G.rows());
    VectorXd xr, wbound, lamG;
    int iterations = 0;

    if (m == SolveMethod::Pivoting) {
      MatrixXd M(n + mG, n + mG);
      M.topLeftCorner(n, n) = red_.Pred;
      M.topRightCorner(n, mG) = red_.G.transpose();
      M.bottomLeftCorner(mG, n) = -red_.G;
      M.bottomRightCorner(mG, mG).setZero();
      VectorXd q(n + mG);
      q << cred, red_.h;
      LemkeOptions lo;
      lo.max_pivots = opts_.max_pivots;
      LcpResult lr = lemke_solve(M, q, lo);
      if (lr.status == LcpResult::Status::RayTermination)
        throw SolveError(SolveError::Kind::RayTermination,
                         "complementary pivoting hit a secondary ray (" + lr.message + ")");
      if (lr.status == LcpResult::Status::MaxPivots)
        throw SolveError(SolveError::Kind::IterationLimit, lr.message);
      xr = lr.z.head(n);
      lamG = lr.z.tail(mG);
      wbound = lr.w.head(n);
      iterations = lr.pivots;
    } else {
      if (!admm_) admm_ = std::make_unique<AdmmQp>(red_.Pred, red_.G, red_.h, admm_options());
      admm_->set_warm_sink(&warm_);
      const AdmmQp::Warm* w = (opts_.warm_start && have_warm_) ? &warm_ : nullptr;
      AdmmResult ar = admm_->solve(cred, w);
      have_warm_ = true;
      if (!ar.converged && !ar.polished)
        throw SolveError(SolveError::Kind::IterationLimit,
                         "splitting fallback stalled", ar.r_dual, -1.0, ar.r_prim);
      xr = ar.x.cwiseMax(0.0);
      lamG = ar.y.tail(mG).cwiseMax(0.0);
      wbound = (-ar.y.head(n)).cwiseMax(0.0);
      iterations = ar.iterations;
    }

    VgneSolution sol = recover(z0, xr, wbound, lamG);
    sol.method_used = m;
    sol.iterations = iterations;
    return sol;
  }

  AdmmOptions admm_options() const {
    AdmmOptions ao;
    ao.eps_abs = std::min({opts_.tol_stat, opts_.tol_feas, 1e-9});
    ao.max_iter = opts_.max_iterations;
    return ao;
  }

  // Maps the reduced primal/dual point back to the stacked system, recovering
  // the multipliers of the eliminated equality rows so the full KKT holds.
  VgneSolution recover(const LeaderDecision& z0, const VectorXd& xr, const VectorXd& wbound,
                       const VectorXd& lamG) const {
    const AssembledGame& gm = *gm_;
    const Scenario& sc = gm.scen;
    const int T = gm.T, N = gm.N;

    VgneSolution sol;
    sol.eps = red_.eps;
    sol.x = red_.R * xr + red_.r0;
    sol.lambda = VectorXd::Zero(gm.mA());
    sol.lambda_local = VectorXd::Zero(gm.mF());

    for (size_t r = 0; r < red_.row_src.size(); ++r) {
      const double lam = lamG(static_cast<int>(r)) / red_.row_scale[r];
      const int src = red_.row_src[r];
      if (src < gm.mF())
        sol.lambda_local(src) = lam;
      else
        sol.lambda(src - gm.mF()) = lam;
    }
    for (int j = 0; j < red_.nred; ++j) {
      const int src = red_.bound_src[j];
      const double lam = wbound(j) / (-red_.bound_coef[j]);
      if (src < gm.mF())
        sol.lambda_local(src) = lam;
      else
        sol.lambda(src - gm.mF()) = lam;
    }

    // Free multipliers of the eliminated equality rows, from stationarity.
    VectorXd resid = gm.pseudo_gradient(z0.stacked(), sol.x, red_.eps);
    resid += gm.Acoup.transpose() * sol.lambda;
    resid += gm.Flocal.transpose() * sol.lambda_local;

    std::vector<std::vector<int>> dyn_row(N, std::vector<int>(T, -1));
    for (int r = 0; r < gm.mF(); ++r) {
      const RowInfo& ri = gm.local_rows[r];
      if (ri.kind == RowKind::DynamicsEq) dyn_row[ri.follower][ri.tau] = r;
    }
    for (int i = 0; i < N; ++i) {
      double nu_next = 0.0;
      for (int tau = T - 1; tau >= 0; --tau) {
        const double nu = nu_next - resid(var_index(T, i, Var::E, tau));
        sol.lambda_local(dyn_row[i][tau]) = nu;
        nu_next = nu;
      }
    }
    for (int r = 0; r < gm.mF(); ++r) {
      const RowInfo& ri = gm.local_rows[r];
      Var b;
      if (ri.kind == RowKind::MaskY)
        b = Var::Y;
      else if (ri.kind == RowKind::MaskK)
        b = Var::K;
      else if (ri.kind == RowKind::MaskT)
        b = Var::TT;
      else
        continue;
      sol.lambda_local(r) = -resid(var_index(T, ri.follower, b, ri.tau));
    }

    const KktResidual kr =
        kkt_residual(gm, z0, sol.x, sol.lambda, sol.lambda_local, red_.eps);
    sol.stat_residual = kr.stat;
    sol.feas_residual = std::max(kr.feas, kr.dual_feas);
    sol.comp_residual = kr.comp;
    return sol;
  }

  const AssembledGame* gm_;
  SolveOptions opts_;
  ReducedGame red_;
  std::unique_ptr<AdmmQp> admm_;
  AdmmQp::Warm warm_;
  bool have_warm_ = false;
};

/// One-shot convenience wrapper; identical inputs give identical outputs.
inline VgneSolution solve_vgne(const AssembledGame& gm, const LeaderDecision& z0,
                               const SolveOptions& opts = {}) {
  VgneSolver solver(gm, opts);
  return solver.solve(z0);
}

/// Draws a random point of the collective feasible set. Throws when the
/// generator cannot fit the sampled throughput under the grid capacity.
inline VectorXd sample_feasible(const AssembledGame& gm, std::mt19937_64& rng) {
  const Scenario& sc = gm.scen;
  const int T = gm.T, N = gm.N;
  std::vector<FollowerDecision> xs(N, FollowerDecision::zero(T));

  for (int i = 0; i < N; ++i) {
    const ProsumerSpec& pr = sc.prosumers[i];
    FollowerDecision& x = xs[i];
    double e_prev = pr.e0;
    for (int tau = 0; tau < T; ++tau) {
      double pc = uniform(rng, 0.0, pr.p_max);
      double pdc = uniform(rng, 0.0, pr.p_max);
      double e = e_prev + sc.dt * (pr.eta_c * pc - pr.eta_dc * pdc);
      if (e > pr.e_max) {
        pc = (pr.e_max - e_prev + sc.dt * pr.eta_dc * pdc) / (sc.dt * pr.eta_c);
        e = pr.e_max;
      } else if (e < 0.0) {
        pdc = (e_prev + sc.dt * pr.eta_c * pc) / (sc.dt * pr.eta_dc);
        e = 0.0;
      }
      x.pc(tau) = pc;
      x.pdc(tau) = pdc;
      x.e(tau) = e;
      e_prev = e;
    }
  }
  for (int tau = 0; tau < T; ++tau) {
    if (!sc.is_rebound(tau)) continue;
    double usum = 0.0;
    std::vector<double> u(N);
    for (int i = 0; i < N; ++i) {
      u[i] = uniform01(rng);
      usum += u[i];
    }
    for (int i = 0; i < N; ++i)
      xs[i].k(tau) = -(u[i] * 0.9 / std::max(1.0, usum)) * (-sc.r(tau));
  }
  for (int tau = 0; tau < T; ++tau)
    if (sc.is_response(tau))
      for (int i = 0; i < N; ++i) xs[i].y(tau) = uniform(rng, 0.0, sc.r(tau));
  for (int i = 0; i < N; ++i) {
    const ProsumerSpec& pr = sc.prosumers[i];
    for (int tau = 0; tau < T; ++tau) {
      const double need =
          pr.d(tau) - pr.s(tau) + xs[i].pc(tau) - xs[i].pdc(tau) + xs[i].k(tau);
      xs[i].p(tau) = std::max(0.0, need) + uniform(rng, 0.0, 0.2 * (1.0 + pr.p_max));
    }
  }

  // Scale the response offers down until every epigraph expression stays
  // nonnegative; the set of admissible scalings is an interval around 0.
  const VectorXd cap = sc.capacity_rhs();
  for (int tau = 0; tau < T; ++tau) {
    if (sc.is_response(tau)) {
      double sum_y = 0.0;
      for (auto& x : xs) sum_y += x.y(tau);
      double smax = 1.0;
      for (int i = 0; i < N; ++i) {
        const double coef =
            (sc.p_bar - sc.beta) * xs[i].y(tau) - sc.beta * (sum_y - xs[i].y(tau));
        if (coef < 0.0) smax = std::min(smax, 0.9 * sc.beta * sc.r(tau) / (-coef));
      }
      if (smax < 1.0)
        for (auto& x : xs) x.y(tau) *= smax;
    }
    // Capacity: shrink the discretionary parts if the row overflows.
    double load = 0.0, base = 0.0;
    for (int i = 0; i < N; ++i) {
      const FollowerDecision& x = xs[i];
      const ProsumerSpec& pr = sc.prosumers[i];
      load += x.p(tau) + x.y(tau) - x.k(tau);
      base += std::max(0.0, pr.d(tau) - pr.s(tau) + x.pc(tau) - x.pdc(tau) + x.k(tau)) - x.k(tau);
    }
    if (load > cap(tau)) {
      if (base >= cap(tau))
        throw Error("feasible-point sampler: capacity too tight at interval " +
                    std::to_string(tau + 1));
      const double f = 0.98 * (cap(tau) - base) / (load - base);
      for (int i = 0; i < N; ++i) {
        const ProsumerSpec& pr = sc.prosumers[i];
        const double pmin =
            std::max(0.0, pr.d(tau) - pr.s(tau) + xs[i].pc(tau) - xs[i].pdc(tau) + xs[i].k(tau));
        xs[i].p(tau) = pmin + f * (xs[i].p(tau) - pmin);
        xs[i].y(tau) *= f;
      }
    }
  }
  for (int tau = 0; tau < T; ++tau) {
    if (!sc.is_response(tau)) continue;
    double sum_y = 0.0;
    for (auto& x : xs) sum_y += x.y(tau);
    for (int i = 0; i < N; ++i) {
      const double expr = (sc.p_bar - sc.beta) * xs[i].y(tau) +
                          sc.beta * (sc.r(tau) - (sum_y - xs[i].y(tau)));
      const double lb = std::max(-sc.p_bar * xs[i].y(tau), -expr);
      xs[i].t(tau) = lb + uniform01(rng) * (0.0 - lb);
    }
  }
  return stack_followers(xs);
}

struct ViCheck {
  double worst = 0.0;  // min over samples of (w - x)' H(z0, x)
  int samples = 0;
};

/// Samples feasible points w and reports the worst value of the variational
/// inequality (w - x)' H(z0, x); x itself is always included (contributes 0).
inline ViCheck verify_vi(const AssembledGame& gm, const LeaderDecision& z0, const VectorXd& x,
                         int samples, uint64_t seed = 0, double eps = 0.0) {
  ViCheck out;
  const VectorXd H = gm.pseudo_gradient(z0.stacked(), x, eps);
  out.worst = 0.0;  // w = x
  out.samples = 1;
  std::mt19937_64 rng(seed);
  for (int s = 1; s < samples; ++s) {
    const VectorXd w = sample_feasible(gm, rng);
    out.worst = std::min(out.worst, (w - x).dot(H));
    ++out.samples;
  }
  return out;
}

}  // namespace flexmarket
