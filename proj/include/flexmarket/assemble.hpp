#pragma once

#include <algorithm>
#include <limits>
#include <string>
#include <vector>

#include "flexmarket/rewards.hpp"
#include "flexmarket/scenario.hpp"

// Turns a Scenario into the stacked matrix objects defining the followers'
// variational game and the leader's cost: per-follower quadratic blocks, the
// leader-coupling map, block-diagonal local constraints, shared coupling
// constraints and the leader polytope.

namespace flexmarket {

enum class RowKind {
  // local, per follower
  DynamicsEq,  // e_tau - e_{tau-1} - dt*(eta_c*pc - eta_dc*pdc) = [tau==0]*e0
  MaskY,       // y_tau = 0 off response blocks
  MaskK,       // k_tau = 0 off rebound blocks
  MaskT,       // t_tau = 0 off response blocks
  PLower,      // -p <= 0
  YLower,      // -y <= 0 (response intervals)
  KUpper,      // k <= 0 (rebound intervals)
  PcLower, PcUpper,
  PdcLower, PdcUpper,
  ELower, EUpper,
  Balance,     // d - s + pc - pdc - (p - k) <= 0
  TUpper,      // t <= 0 (response intervals)
  EpiLocal,    // -t - p_bar*y <= 0 (response intervals)
  // coupling, shared
  Capacity,    // sum_i (p + y - k) <= max(g, g - r)
  ReboundCap,  // sum_i (-k) <= -r (rebound intervals)
  EpiCoupling  // -t_i - (p_bar-beta)*y_i + beta*sum_{j!=i} y_j <= beta*r
};

struct RowInfo {
  RowKind kind;
  int follower;  // -1 for rows not owned by a single follower
  int tau;
  bool equality;
};

/// The epigraph reformulation rows of the per-prosumer response reward, in
/// symbolic form; `assemble` materializes the same rows into Flocal / Acoup.
struct EpigraphRows {
  struct LocalRow {
    int follower, tau;
    RowKind kind;  // TUpper or EpiLocal
  };
  struct CouplingRow {
    int follower, tau;  // row references y of every other follower
  };
  struct MaskRow {
    int follower, tau;  // t = 0
  };
  std::vector<LocalRow> local;
  std::vector<CouplingRow> coupling;
  std::vector<MaskRow> masks;
};

inline EpigraphRows build_epigraph(const Scenario& sc) {
  EpigraphRows rows;
  for (int i = 0; i < sc.N; ++i) {
    for (int tau = 0; tau < sc.T; ++tau) {
      if (sc.is_response(tau)) {
        rows.local.push_back({i, tau, RowKind::TUpper});
        rows.local.push_back({i, tau, RowKind::EpiLocal});
        rows.coupling.push_back({i, tau});
      } else {
        rows.masks.push_back({i, tau});
      }
    }
  }
  return rows;
}

/// Stacked matrix form of the followers' game and the leader objective.
///
/// Follower pseudo-gradient: H(z0, x) = bigQ x + Cmap z0 + qlin.
/// Local constraints:        Flocal x (<=,=) flocal, block diagonal.
/// Coupling constraints:     Acoup x <= bcoup, one shared dual per row.
/// Leader polytope:          Fdso z0 <= gdso (the box Gamma).
/// Leader cost:              f0(z0) + fx(x) + (sum_i f0i(x_i))' z0, f0 = 0.
struct AssembledGame {
  Scenario scen;
  int T = 0, N = 0;
  int nx = 0;  // 7*T*N

  MatrixXd Qblock;  // 7T x 7T, diag(c1) on the p block
  MatrixXd bigQ;    // (I_N + 1_{NxN}) (x) Qblock
  MatrixXd Cmap;    // nx x 2T
  VectorXd qlin;    // nx

  MatrixXd Flocal;  // mF x nx
  VectorXd flocal;
  std::vector<RowInfo> local_rows;
  std::vector<int> local_row_begin;  // per-follower group offsets, size N+1

  MatrixXd Acoup;  // mA x nx
  VectorXd bcoup;
  std::vector<RowInfo> coupling_rows;

  MatrixXd Fdso;  // 4T x 2T
  VectorXd gdso;

  // Selectors behind the leader-cost pieces: Sp x = sum_i p_i, St x = sum_i t_i,
  // Sk x = sum_i k_i restricted to rebound intervals.
  MatrixXd Sp, St, Sk;  // T x nx

  double lipschitz_H = 0.0;  // largest eigenvalue of bigQ

  int mF() const { return static_cast<int>(Flocal.rows()); }
  int mA() const { return static_cast<int>(Acoup.rows()); }
  int num_local_ineq() const {
    int n = 0;
    for (const auto& r : local_rows) n += !r.equality;
    return n;
  }
  int num_complementarity_rows() const { return mA() + num_local_ineq(); }

  VectorXd pseudo_gradient(const VectorXd& z0, const VectorXd& x, double eps = 0.0) const {
    VectorXd h = bigQ * x + Cmap * z0 + qlin;
    if (eps != 0.0) h += 2.0 * eps * x;
    return h;
  }

  // Leader cost pieces per the compact matrix form.
  double fx(const VectorXd& x) const {
    const VectorXd sp = Sp * x;
    return -sp.dot(scen.c1.cwiseProduct(sp)) + (St * x).sum() + scen.p_tilde * (Sk * x).sum();
  }
  VectorXd f0i_sum(const VectorXd& x) const {
    VectorXd v(2 * T);
    v << -(Sp * x), -(St * x);
    return v;
  }
  double leader_cost(const LeaderDecision& z0, const VectorXd& x) const {
    return fx(x) + f0i_sum(x).dot(z0.stacked());  // f0 == 0
  }

  bool z0_in_gamma(const LeaderDecision& z0, double tol = 0.0) const {
    return (z0.c0.array() >= scen.c0_lo.array() - tol).all() &&
           (z0.c0.array() <= scen.c0_hi.array() + tol).all() &&
           (z0.alpha.array() >= -tol).all() && (z0.alpha.array() <= 1.0 + tol).all();
  }
  LeaderDecision project_gamma(const LeaderDecision& z0) const {
    LeaderDecision p;
    p.c0 = z0.c0.cwiseMax(scen.c0_lo).cwiseMin(scen.c0_hi);
    p.alpha = z0.alpha.cwiseMax(0.0).cwiseMin(1.0);
    return p;
  }
  LeaderDecision gamma_midpoint() const {
    return {0.5 * (scen.c0_lo + scen.c0_hi), VectorXd::Constant(T, 0.5)};
  }
};

namespace detail {
struct MatEntry {
  int row, col;
  double val;
};
}  // namespace detail

inline AssembledGame assemble(const Scenario& sc) {
  require_valid(sc);

  AssembledGame gm;
  gm.scen = sc;
  gm.T = sc.T;
  gm.N = sc.N;
  const int T = sc.T, N = sc.N;
  const int per = kVarBlocks * T;
  gm.nx = per * N;

  // Quadratic blocks. x_i' Q x_i = p_i' C1 p_i, so Q carries c1 on the
  // p diagonal; the unit diagonal in the reference form is the c1 = 1 case.
  gm.Qblock = MatrixXd::Zero(per, per);
  for (int tau = 0; tau < T; ++tau) gm.Qblock(tau, tau) = sc.c1(tau);
  gm.bigQ = MatrixXd::Zero(gm.nx, gm.nx);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j)
      gm.bigQ.block(i * per, j * per, per, per) = (i == j ? 2.0 : 1.0) * gm.Qblock;
  gm.lipschitz_H = (N + 1) * sc.c1.maxCoeff();  // eigenvalues of I + 11' are {1, N+1}

  // Leader coupling: c0 enters the p block, alpha the t block.
  gm.Cmap = MatrixXd::Zero(gm.nx, 2 * T);
  gm.qlin = VectorXd::Zero(gm.nx);
  for (int i = 0; i < N; ++i) {
    for (int tau = 0; tau < T; ++tau) {
      gm.Cmap(var_index(T, i, Var::P, tau), tau) = 1.0;
      gm.Cmap(var_index(T, i, Var::TT, tau), T + tau) = 1.0;
      gm.qlin(var_index(T, i, Var::Y, tau)) = sc.mu;
      gm.qlin(var_index(T, i, Var::PC, tau)) = sc.delta;
      gm.qlin(var_index(T, i, Var::PDC, tau)) = sc.delta;
    }
  }

  // Local rows, grouped per follower in a fixed order. The epigraph and mask
  // rows follow build_epigraph's classification.
  std::vector<detail::MatEntry> trip;
  std::vector<double> rhs;
  auto add_row = [&](RowKind kind, int i, int tau, bool eq) {
    gm.local_rows.push_back({kind, i, tau, eq});
    rhs.push_back(0.0);
    return static_cast<int>(gm.local_rows.size()) - 1;
  };
  auto set = [&](int row, int i, Var b, int tau, double v) {
    trip.push_back({row, var_index(T, i, b, tau), v});
  };

  gm.local_row_begin.assign(N + 1, 0);
  for (int i = 0; i < N; ++i) {
    gm.local_row_begin[i] = static_cast<int>(gm.local_rows.size());
    const ProsumerSpec& pr = sc.prosumers[i];
    for (int tau = 0; tau < T; ++tau) {
      int row = add_row(RowKind::DynamicsEq, i, tau, true);
      set(row, i, Var::E, tau, 1.0);
      if (tau > 0) set(row, i, Var::E, tau - 1, -1.0);
      set(row, i, Var::PC, tau, -sc.dt * pr.eta_c);
      set(row, i, Var::PDC, tau, sc.dt * pr.eta_dc);
      rhs[row] = (tau == 0) ? pr.e0 : 0.0;
    }
    for (int tau = 0; tau < T; ++tau)
      if (!sc.is_response(tau)) set(add_row(RowKind::MaskY, i, tau, true), i, Var::Y, tau, 1.0);
    for (int tau = 0; tau < T; ++tau)
      if (!sc.is_rebound(tau)) set(add_row(RowKind::MaskK, i, tau, true), i, Var::K, tau, 1.0);
    for (int tau = 0; tau < T; ++tau)
      if (!sc.is_response(tau)) set(add_row(RowKind::MaskT, i, tau, true), i, Var::TT, tau, 1.0);

    for (int tau = 0; tau < T; ++tau)
      set(add_row(RowKind::PLower, i, tau, false), i, Var::P, tau, -1.0);
    for (int tau = 0; tau < T; ++tau)
      if (sc.is_response(tau)) set(add_row(RowKind::YLower, i, tau, false), i, Var::Y, tau, -1.0);
    for (int tau = 0; tau < T; ++tau)
      if (sc.is_rebound(tau)) set(add_row(RowKind::KUpper, i, tau, false), i, Var::K, tau, 1.0);
    for (int tau = 0; tau < T; ++tau)
      set(add_row(RowKind::PcLower, i, tau, false), i, Var::PC, tau, -1.0);
    for (int tau = 0; tau < T; ++tau) {
      int row = add_row(RowKind::PcUpper, i, tau, false);
      set(row, i, Var::PC, tau, 1.0);
      rhs[row] = pr.p_max;
    }
    for (int tau = 0; tau < T; ++tau)
      set(add_row(RowKind::PdcLower, i, tau, false), i, Var::PDC, tau, -1.0);
    for (int tau = 0; tau < T; ++tau) {
      int row = add_row(RowKind::PdcUpper, i, tau, false);
      set(row, i, Var::PDC, tau, 1.0);
      rhs[row] = pr.p_max;
    }
    for (int tau = 0; tau < T; ++tau)
      set(add_row(RowKind::ELower, i, tau, false), i, Var::E, tau, -1.0);
    for (int tau = 0; tau < T; ++tau) {
      int row = add_row(RowKind::EUpper, i, tau, false);
      set(row, i, Var::E, tau, 1.0);
      rhs[row] = pr.e_max;
    }
    for (int tau = 0; tau < T; ++tau) {
      // d - s + pc - pdc + k - p <= 0
      int row = add_row(RowKind::Balance, i, tau, false);
      set(row, i, Var::P, tau, -1.0);
      set(row, i, Var::K, tau, 1.0);
      set(row, i, Var::PC, tau, 1.0);
      set(row, i, Var::PDC, tau, -1.0);
      rhs[row] = -(pr.d(tau) - pr.s(tau));
    }
    for (int tau = 0; tau < T; ++tau) {
      if (!sc.is_response(tau)) continue;
      set(add_row(RowKind::TUpper, i, tau, false), i, Var::TT, tau, 1.0);
      int row = add_row(RowKind::EpiLocal, i, tau, false);  // -t - p_bar*y <= 0
      set(row, i, Var::TT, tau, -1.0);
      set(row, i, Var::Y, tau, -sc.p_bar);
    }
  }
  gm.local_row_begin[N] = static_cast<int>(gm.local_rows.size());

  gm.Flocal = MatrixXd::Zero(static_cast<int>(gm.local_rows.size()), gm.nx);
  for (const auto& t3 : trip) gm.Flocal(t3.row, t3.col) = t3.val;
  gm.flocal = Eigen::Map<VectorXd>(rhs.data(), static_cast<int>(rhs.size()));

  // Coupling rows.
  std::vector<detail::MatEntry> atrip;
  std::vector<double> brhs;
  auto add_crow = [&](RowKind kind, int i, int tau, double rhsv) {
    gm.coupling_rows.push_back({kind, i, tau, false});
    brhs.push_back(rhsv);
    return static_cast<int>(gm.coupling_rows.size()) - 1;
  };
  const VectorXd cap = sc.capacity_rhs();
  for (int tau = 0; tau < T; ++tau) {
    int row = add_crow(RowKind::Capacity, -1, tau, cap(tau));
    for (int i = 0; i < N; ++i) {
      atrip.push_back({row, var_index(T, i, Var::P, tau), 1.0});
      atrip.push_back({row, var_index(T, i, Var::Y, tau), 1.0});
      atrip.push_back({row, var_index(T, i, Var::K, tau), -1.0});
    }
  }
  for (int tau = 0; tau < T; ++tau) {
    if (!sc.is_rebound(tau)) continue;
    int row = add_crow(RowKind::ReboundCap, -1, tau, -sc.r(tau));
    for (int i = 0; i < N; ++i) atrip.push_back({row, var_index(T, i, Var::K, tau), -1.0});
  }
  for (const auto& cr : build_epigraph(sc).coupling) {
    // -t_i - (p_bar - beta) y_i + beta sum_{j != i} y_j <= beta r
    int row = add_crow(RowKind::EpiCoupling, cr.follower, cr.tau, sc.beta * sc.r(cr.tau));
    atrip.push_back({row, var_index(T, cr.follower, Var::TT, cr.tau), -1.0});
    atrip.push_back({row, var_index(T, cr.follower, Var::Y, cr.tau), -(sc.p_bar - sc.beta)});
    for (int j = 0; j < N; ++j)
      if (j != cr.follower) atrip.push_back({row, var_index(T, j, Var::Y, cr.tau), sc.beta});
  }
  gm.Acoup = MatrixXd::Zero(static_cast<int>(gm.coupling_rows.size()), gm.nx);
  for (const auto& t3 : atrip) gm.Acoup(t3.row, t3.col) = t3.val;
  gm.bcoup = Eigen::Map<VectorXd>(brhs.data(), static_cast<int>(brhs.size()));

  // Leader polytope: c0_lo <= c0 <= c0_hi, 0 <= alpha <= 1.
  gm.Fdso = MatrixXd::Zero(4 * T, 2 * T);
  gm.gdso = VectorXd::Zero(4 * T);
  for (int tau = 0; tau < T; ++tau) {
    gm.Fdso(tau, tau) = 1.0;              gm.gdso(tau) = sc.c0_hi(tau);
    gm.Fdso(T + tau, tau) = -1.0;         gm.gdso(T + tau) = -sc.c0_lo(tau);
    gm.Fdso(2 * T + tau, T + tau) = 1.0;  gm.gdso(2 * T + tau) = 1.0;
    gm.Fdso(3 * T + tau, T + tau) = -1.0; gm.gdso(3 * T + tau) = 0.0;
  }

  // Leader cost selectors.
  gm.Sp = MatrixXd::Zero(T, gm.nx);
  gm.St = MatrixXd::Zero(T, gm.nx);
  gm.Sk = MatrixXd::Zero(T, gm.nx);
  for (int i = 0; i < N; ++i)
    for (int tau = 0; tau < T; ++tau) {
      gm.Sp(tau, var_index(T, i, Var::P, tau)) = 1.0;
      gm.St(tau, var_index(T, i, Var::TT, tau)) = 1.0;
      if (sc.is_rebound(tau)) gm.Sk(tau, var_index(T, i, Var::K, tau)) = 1.0;
    }

  return gm;
}

/// Constructive interior-point probe for Slater's qualification: builds a
/// collective point with strictly positive slack on every inequality row and
/// exact equalities. Fails (margin <= 0) when the grid capacity cannot cover
/// demand with room to spare.
struct ProbeResult {
  bool strict = false;
  double margin = 0.0;  // min inequality slack
  std::vector<FollowerDecision> point;
};

inline ProbeResult feasibility_probe(const Scenario& sc) {
  const int T = sc.T, N = sc.N;
  ProbeResult res;
  std::vector<FollowerDecision> xs;
  for (int i = 0; i < N; ++i) {
    const ProsumerSpec& pr = sc.prosumers[i];
    FollowerDecision x = FollowerDecision::zero(T);
    if (pr.e_max > 0 && pr.p_max > 0) {
      const double j = pr.p_max / 100.0;
      double e_prev = pr.e0;
      for (int tau = 0; tau < T; ++tau) {
        const double cap = std::min(pr.eta_c, pr.eta_dc) * pr.p_max / 2.0;
        double drift = 0.25 * (pr.e_max / 2.0 - e_prev) / sc.dt;
        drift = std::clamp(drift, -cap, cap);
        double pc = j, pdc = j * pr.eta_c / pr.eta_dc;
        if (drift >= 0)
          pc += drift / pr.eta_c;
        else
          pdc += -drift / pr.eta_dc;
        x.pc(tau) = std::min(pc, 0.9 * pr.p_max);
        x.pdc(tau) = std::min(pdc, 0.9 * pr.p_max);
        e_prev += sc.dt * (pr.eta_c * x.pc(tau) - pr.eta_dc * x.pdc(tau));
        x.e(tau) = e_prev;
      }
    }
    for (int tau = 0; tau < T; ++tau) {
      if (sc.is_rebound(tau)) x.k(tau) = sc.r(tau) / (2.0 * N);  // sum |k| = |r|/2
      const double need = pr.d(tau) - pr.s(tau) + x.pc(tau) - x.pdc(tau) + x.k(tau);
      x.p(tau) = std::max(0.0, need) + 0.01 + pr.p_max / 100.0;
    }
    xs.push_back(std::move(x));
  }
  // Response flexibility sized against the remaining capacity slack.
  const VectorXd cap = sc.capacity_rhs();
  for (int tau = 0; tau < T; ++tau) {
    if (!sc.is_response(tau)) continue;
    double used = 0.0;
    for (const auto& x : xs) used += x.p(tau) - x.k(tau);
    const double slack = cap(tau) - used;
    if (slack <= 0) continue;  // leave y at 0; the margin will come out <= 0
    const double v = std::min(sc.r(tau) / (2.0 * N), slack / (2.0 * N));
    for (auto& x : xs) {
      x.y(tau) = v;
      x.t(tau) = -sc.p_bar * v / 2.0;
    }
  }
  res.point = xs;

  // Margin: minimum slack over all inequality entries (equalities hold by
  // construction). The epigraph rows are not part of the model-core report,
  // so they are checked directly.
  ResidualReport rep = constraint_residuals(xs, sc);
  double m = std::numeric_limits<double>::infinity();
  for (const auto& e : rep.entries)
    if (!e.equality) m = std::min(m, -e.value);
  for (int tau = 0; tau < T; ++tau) {
    if (!sc.is_response(tau)) continue;
    double sum_y = 0.0;
    for (const auto& x : xs) sum_y += x.y(tau);
    for (int i = 0; i < N; ++i) {
      const double yi = xs[i].y(tau), ti = xs[i].t(tau);
      m = std::min(m, -ti);                 // t <= 0
      m = std::min(m, ti + sc.p_bar * yi);  // t >= -p_bar y
      m = std::min(m, ti + (sc.p_bar - sc.beta) * yi +
                           sc.beta * (sc.r(tau) - (sum_y - yi)));  // coupling row
    }
  }
  res.margin = m;
  res.strict = m > 0.0;
  return res;
}

}  // namespace flexmarket
