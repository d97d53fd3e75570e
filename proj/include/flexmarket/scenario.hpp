#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "flexmarket/errors.hpp"

namespace flexmarket {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Per-prosumer physical data. Load/generation profiles are in kW, storage
/// in kWh. The storage dynamics are evaluated verbatim as
///   e_tau = e_{tau-1} + dt * (eta_c * pc_tau - eta_dc * pdc_tau),
/// so a lossy device corresponds to eta_c <= 1 and eta_dc >= 1.
struct ProsumerSpec {
  VectorXd d;          // fixed load, length T
  VectorXd s;          // renewable generation, length T
  double e_max = 0.0;  // storage capacity, kWh
  double p_max = 0.0;  // charge/discharge power limit, kW
  double eta_c = 1.0;  // charging efficiency, in (0, 1]
  double eta_dc = 1.0; // discharging efficiency, > 0
  double e0 = 0.0;     // initial state of charge, kWh
};

/// A full market instance for one scheduling day: horizon, request signal,
/// prices, prosumer fleet, grid capacity and the leader's decision bounds.
struct Scenario {
  int T = 0;        // number of intervals
  double dt = 1.0;  // interval length, hours
  int N = 0;        // prosumer count

  VectorXd r;       // flexibility request, kW; > 0 response, < 0 rebound

  double p_bar = 0.0;    // price per unit of response provided
  double p_tilde = 0.0;  // price per unit of rebound provided
  double beta = 0.0;     // saturation coefficient of the response reward

  VectorXd c1;     // pricing-map slope per interval, >= 0
  VectorXd c0_lo;  // lower bound on the price offset
  VectorXd c0_hi;  // upper bound on the price offset
  VectorXd g;      // grid capacity, kW

  double mu = 0.0;     // discomfort weight on response flexibility
  double delta = 0.0;  // storage degradation weight

  std::vector<ProsumerSpec> prosumers;

  bool is_response(int tau) const { return r(tau) > 0.0; }
  bool is_rebound(int tau) const { return r(tau) < 0.0; }

  int response_count() const {
    int n = 0;
    for (int tau = 0; tau < T; ++tau) n += is_response(tau);
    return n;
  }
  int rebound_count() const {
    int n = 0;
    for (int tau = 0; tau < T; ++tau) n += is_rebound(tau);
    return n;
  }

  /// Capacity right-hand side per interval: max(g, g - r).
  VectorXd capacity_rhs() const { return g.cwiseMax(g - r); }
};

/// Leader decision z0 = col(c0, alpha).
struct LeaderDecision {
  VectorXd c0;     // price offset, length T
  VectorXd alpha;  // incentive share in [0, 1], length T

  VectorXd stacked() const {
    VectorXd z(c0.size() + alpha.size());
    z << c0, alpha;
    return z;
  }
  static LeaderDecision from_stacked(const VectorXd& z) {
    const int T = static_cast<int>(z.size()) / 2;
    return {z.head(T), z.tail(T)};
  }
};

// Variable blocks of one follower, in stacking order.
enum class Var : int { P = 0, Y = 1, E = 2, PC = 3, PDC = 4, K = 5, TT = 6 };
constexpr int kVarBlocks = 7;

inline int var_index(int T, int follower, Var block, int tau) {
  return follower * kVarBlocks * T + static_cast<int>(block) * T + tau;
}

/// One follower's decision x_i = col(p, y, e, pc, pdc, k, t).
struct FollowerDecision {
  VectorXd p;    // purchased power, >= 0
  VectorXd y;    // response flexibility, >= 0, zero off response blocks
  VectorXd e;    // state of charge, in [0, e_max]
  VectorXd pc;   // charging power, in [0, p_max]
  VectorXd pdc;  // discharging power, in [0, p_max]
  VectorXd k;    // rebound flexibility, <= 0, zero off rebound blocks
  VectorXd t;    // epigraph auxiliary, <= 0, zero off response blocks

  static FollowerDecision zero(int T) {
    FollowerDecision x;
    x.p = x.y = x.e = x.pc = x.pdc = x.k = x.t = VectorXd::Zero(T);
    return x;
  }

  VectorXd stacked() const {
    VectorXd v(7 * p.size());
    v << p, y, e, pc, pdc, k, t;
    return v;
  }
  static FollowerDecision from_stacked(const VectorXd& v) {
    const int T = static_cast<int>(v.size()) / kVarBlocks;
    FollowerDecision x;
    x.p = v.segment(0 * T, T);
    x.y = v.segment(1 * T, T);
    x.e = v.segment(2 * T, T);
    x.pc = v.segment(3 * T, T);
    x.pdc = v.segment(4 * T, T);
    x.k = v.segment(5 * T, T);
    x.t = v.segment(6 * T, T);
    return x;
  }
};

inline VectorXd stack_followers(const std::vector<FollowerDecision>& xs) {
  if (xs.empty()) return VectorXd();
  const int per = static_cast<int>(xs[0].p.size()) * kVarBlocks;
  VectorXd v(per * static_cast<int>(xs.size()));
  for (size_t i = 0; i < xs.size(); ++i) v.segment(per * i, per) = xs[i].stacked();
  return v;
}

inline std::vector<FollowerDecision> unstack_followers(const VectorXd& v, int N) {
  const int per = static_cast<int>(v.size()) / N;
  std::vector<FollowerDecision> xs;
  xs.reserve(N);
  for (int i = 0; i < N; ++i) xs.push_back(FollowerDecision::from_stacked(v.segment(per * i, per)));
  return xs;
}

/// Outcome of scenario validation. `errors` are hard failures (the scenario
/// cannot be assembled); `warnings` flag modelling-assumption violations that
/// are still well-posed numerically.
struct ValidationReport {
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
  bool ok() const { return errors.empty(); }
};

namespace detail {
inline bool finite(const VectorXd& v) { return v.allFinite(); }
}  // namespace detail

inline ValidationReport validate(const Scenario& sc) {
  ValidationReport rep;
  auto err = [&](const std::string& m) { rep.errors.push_back(m); };
  auto warn = [&](const std::string& m) { rep.warnings.push_back(m); };

  if (sc.T < 1) err("T must be >= 1, got " + std::to_string(sc.T));
  if (!(sc.dt > 0)) err("dt must be > 0, got " + std::to_string(sc.dt));
  if (sc.N < 1) err("N must be >= 1, got " + std::to_string(sc.N));
  if (!rep.errors.empty()) return rep;  // sizes below are meaningless

  auto check_len = [&](const VectorXd& v, const std::string& name) {
    if (static_cast<int>(v.size()) != sc.T)
      err(name + " has length " + std::to_string(v.size()) + ", expected T=" + std::to_string(sc.T));
    else if (!detail::finite(v))
      err(name + " contains non-finite entries");
  };
  check_len(sc.r, "r");
  check_len(sc.c1, "c1");
  check_len(sc.c0_lo, "c0_lo");
  check_len(sc.c0_hi, "c0_hi");
  check_len(sc.g, "g");
  if (static_cast<int>(sc.prosumers.size()) != sc.N)
    err("prosumers has size " + std::to_string(sc.prosumers.size()) + ", expected N=" + std::to_string(sc.N));
  if (!rep.errors.empty()) return rep;

  if (!(sc.p_bar > 0)) err("p_bar must be > 0, got " + std::to_string(sc.p_bar));
  if (sc.p_tilde < 0) err("p_tilde must be >= 0, got " + std::to_string(sc.p_tilde));
  if (sc.beta < 0) err("beta must be >= 0, got " + std::to_string(sc.beta));
  if (sc.p_bar > 0 && sc.beta < sc.p_bar / sc.N)
    warn("beta < p_bar/N: response reward keeps growing past the requested amount");
  if (sc.p_bar > 0 && sc.beta > sc.p_bar)
    warn("beta > p_bar: per-prosumer reward slope turns negative past the kink");

  if ((sc.c1.array() < 0).any()) err("c1 must be >= 0 elementwise");
  if ((sc.c0_lo.array() < 0).any()) err("c0_lo must be >= 0 elementwise");
  if ((sc.c0_lo.array() > sc.c0_hi.array()).any()) err("c0_lo must be <= c0_hi elementwise");
  if ((sc.g.array() < 0).any()) err("g must be >= 0 elementwise");

  if (sc.mu < 0) err("mu must be >= 0, got " + std::to_string(sc.mu));
  if (sc.p_bar > 0 && sc.mu >= 0.1 * sc.p_bar)
    warn("mu >= 0.1*p_bar: discomfort weight is not small relative to the response price");
  if (sc.delta < 0) err("delta must be >= 0, got " + std::to_string(sc.delta));
  if (sc.delta == 0) warn("delta == 0: storage throughput is free, schedules may be non-unique");

  for (int i = 0; i < sc.N; ++i) {
    const ProsumerSpec& pr = sc.prosumers[i];
    const std::string who = "prosumer " + std::to_string(i + 1);
    if (static_cast<int>(pr.d.size()) != sc.T || static_cast<int>(pr.s.size()) != sc.T) {
      err(who + ": d/s profile length mismatch with T");
      continue;
    }
    if (!detail::finite(pr.d) || !detail::finite(pr.s)) {
      err(who + ": non-finite profile entries");
      continue;
    }
    for (int tau = 0; tau < sc.T; ++tau) {
      if (pr.d(tau) < pr.s(tau))
        err(who + ", interval " + std::to_string(tau + 1) + ": generation s=" + std::to_string(pr.s(tau)) +
            " exceeds demand d=" + std::to_string(pr.d(tau)));
    }
    if (pr.e_max < 0) err(who + ": e_max must be >= 0");
    if (pr.e_max == 0) warn(who + ": e_max == 0, prosumer has no usable storage");
    if (pr.p_max < 0) err(who + ": p_max must be >= 0");
    if (pr.p_max == 0) warn(who + ": p_max == 0, storage cannot be cycled");
    if (pr.e0 < 0 || pr.e0 > pr.e_max) err(who + ": e0 must lie in [0, e_max]");
    if (!(pr.eta_c > 0) || pr.eta_c > 1) err(who + ": eta_c must lie in (0, 1]");
    if (!(pr.eta_dc > 0)) err(who + ": eta_dc must be > 0");
  }
  return rep;
}

/// Throws ValidationError listing every violated hard invariant.
inline void require_valid(const Scenario& sc) {
  ValidationReport rep = validate(sc);
  if (!rep.ok()) throw ValidationError(rep.errors);
}

}  // namespace flexmarket
