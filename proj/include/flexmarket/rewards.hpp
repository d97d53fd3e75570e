#pragma once

#include <algorithm>
#include <limits>
#include <string>
#include <vector>

#include "flexmarket/scenario.hpp"

// Closed-form evaluation of the market's reward, pricing and cost functions,
// plus the raw constraint residuals. Everything here is solver-independent
// and pure; the assembler and the equilibrium layers are checked against
// these definitions.

namespace flexmarket {

namespace detail {
inline void require_len(const VectorXd& v, int T, const char* name) {
  if (static_cast<int>(v.size()) != T)
    throw std::invalid_argument(std::string(name) + ": expected length " + std::to_string(T) +
                                ", got " + std::to_string(v.size()));
}
}  // namespace detail

/// Aggregate response reward paid to the DSO, per interval.
/// Zero off response blocks; below the request it pays p_bar per unit, past
/// it the rate drops to (p_bar - N*beta).
inline VectorXd eval_pi_R(const VectorXd& ybar, const Scenario& sc) {
  detail::require_len(ybar, sc.T, "ybar");
  if ((ybar.array() < -1e-12).any()) throw std::invalid_argument("eval_pi_R: ybar must be >= 0");
  VectorXd out = VectorXd::Zero(sc.T);
  for (int tau = 0; tau < sc.T; ++tau) {
    if (!sc.is_response(tau)) continue;
    if (ybar(tau) <= sc.r(tau))
      out(tau) = sc.p_bar * ybar(tau);
    else
      out(tau) = (sc.p_bar - sc.N * sc.beta) * ybar(tau) + sc.N * sc.beta * sc.r(tau);
  }
  return out;
}

/// Per-prosumer incentive share, per interval. `y_others` is the summed
/// response of every other prosumer. May be negative in the over-provision
/// regime (others already exceed the request).
inline VectorXd eval_phi_R(const VectorXd& y_i, const VectorXd& y_others, const Scenario& sc) {
  detail::require_len(y_i, sc.T, "y_i");
  detail::require_len(y_others, sc.T, "y_others");
  if ((y_i.array() < -1e-12).any()) throw std::invalid_argument("eval_phi_R: y_i must be >= 0");
  if ((y_others.array() < -1e-12).any()) throw std::invalid_argument("eval_phi_R: y_others must be >= 0");
  VectorXd out = VectorXd::Zero(sc.T);
  for (int tau = 0; tau < sc.T; ++tau) {
    if (!sc.is_response(tau)) continue;
    const double residual = sc.r(tau) - y_others(tau);
    if (y_i(tau) <= residual)
      out(tau) = sc.p_bar * y_i(tau);
    else
      out(tau) = (sc.p_bar - sc.beta) * y_i(tau) + sc.beta * residual;
  }
  return out;
}

/// Aggregate rebound reward paid to the DSO, per interval.
inline VectorXd eval_pi_B(const VectorXd& kbar, const Scenario& sc) {
  detail::require_len(kbar, sc.T, "kbar");
  if ((kbar.array() > 1e-12).any()) throw std::invalid_argument("eval_pi_B: kbar must be <= 0");
  VectorXd out = VectorXd::Zero(sc.T);
  for (int tau = 0; tau < sc.T; ++tau)
    if (sc.is_rebound(tau)) out(tau) = -sc.p_tilde * kbar(tau);
  return out;
}

/// Affine pricing map h = C1 * pbar + c0 for an aggregate purchase pbar.
inline VectorXd eval_price(const VectorXd& pbar, const VectorXd& c0, const Scenario& sc) {
  detail::require_len(pbar, sc.T, "pbar");
  detail::require_len(c0, sc.T, "c0");
  return sc.c1.cwiseProduct(pbar) + c0;
}

namespace detail {
inline VectorXd sum_block(const std::vector<FollowerDecision>& xs, Var b, int T) {
  VectorXd acc = VectorXd::Zero(T);
  for (const auto& x : xs) {
    switch (b) {
      case Var::P: acc += x.p; break;
      case Var::Y: acc += x.y; break;
      case Var::E: acc += x.e; break;
      case Var::PC: acc += x.pc; break;
      case Var::PDC: acc += x.pdc; break;
      case Var::K: acc += x.k; break;
      case Var::TT: acc += x.t; break;
    }
  }
  return acc;
}
}  // namespace detail

/// Per-interval reward bookkeeping for one collective decision.
struct RewardLedger {
  VectorXd pi_R;            // aggregate response reward to the DSO
  VectorXd pi_B;            // aggregate rebound reward to the DSO
  MatrixXd phi;             // N x T, per-prosumer incentive
  VectorXd dso_net;         // (1 - alpha) * pi_R per interval
  VectorXd energy_revenue;  // h(sum p) .* sum p per interval
};

inline RewardLedger build_reward_ledger(const LeaderDecision& z0,
                                        const std::vector<FollowerDecision>& xs,
                                        const Scenario& sc) {
  const int T = sc.T;
  RewardLedger led;
  VectorXd sum_y = detail::sum_block(xs, Var::Y, T);
  VectorXd sum_k = detail::sum_block(xs, Var::K, T);
  VectorXd sum_p = detail::sum_block(xs, Var::P, T);
  led.pi_R = eval_pi_R(sum_y, sc);
  led.pi_B = eval_pi_B(sum_k.cwiseMin(0.0), sc);
  led.phi.resize(sc.N, T);
  for (int i = 0; i < sc.N; ++i)
    led.phi.row(i) = eval_phi_R(xs[i].y, sum_y - xs[i].y, sc).transpose();
  led.dso_net = (VectorXd::Ones(T) - z0.alpha).cwiseProduct(led.pi_R);
  led.energy_revenue = eval_price(sum_p, z0.c0, sc).cwiseProduct(sum_p);
  return led;
}

/// DSO cost, raw branch formulas: minus energy revenue, minus the retained
/// response reward, minus the rebound reward.
inline double eval_dso_cost(const LeaderDecision& z0, const std::vector<FollowerDecision>& xs,
                            const Scenario& sc) {
  const int T = sc.T;
  VectorXd sum_p = detail::sum_block(xs, Var::P, T);
  VectorXd sum_y = detail::sum_block(xs, Var::Y, T);
  VectorXd sum_k = detail::sum_block(xs, Var::K, T);
  VectorXd phi_total = VectorXd::Zero(T);
  for (int i = 0; i < sc.N; ++i) phi_total += eval_phi_R(xs[i].y, sum_y - xs[i].y, sc);
  const VectorXd pi_net = (VectorXd::Ones(T) - z0.alpha).cwiseProduct(phi_total);
  const VectorXd pi_b = eval_pi_B(sum_k.cwiseMin(0.0), sc);
  return -eval_price(sum_p, z0.c0, sc).dot(sum_p) - pi_net.sum() - pi_b.sum();
}

/// Prosumer cost, raw branch formulas: purchasing + degradation + discomfort
/// minus the incentive alpha' * phi_i.
inline double eval_prosumer_cost(int i, const std::vector<FollowerDecision>& xs,
                                 const LeaderDecision& z0, const Scenario& sc) {
  const int T = sc.T;
  VectorXd sum_p = detail::sum_block(xs, Var::P, T);
  VectorXd sum_y = detail::sum_block(xs, Var::Y, T);
  const FollowerDecision& xi = xs[i];
  const VectorXd phi = eval_phi_R(xi.y, sum_y - xi.y, sc);
  return eval_price(sum_p, z0.c0, sc).dot(xi.p) + sc.delta * (xi.pc.sum() + xi.pdc.sum()) +
         sc.mu * xi.y.sum() - z0.alpha.dot(phi);
}

/// Prosumer cost in epigraph coordinates: the incentive term is alpha' * t_i
/// instead of -alpha' * phi_i. Coincides with eval_prosumer_cost wherever
/// t = -phi; this is the quadratic form the equilibrium layer optimizes.
inline double eval_prosumer_cost_epigraph(int i, const std::vector<FollowerDecision>& xs,
                                          const LeaderDecision& z0, const Scenario& sc) {
  const int T = sc.T;
  VectorXd sum_p = detail::sum_block(xs, Var::P, T);
  const FollowerDecision& xi = xs[i];
  return eval_price(sum_p, z0.c0, sc).dot(xi.p) + sc.delta * (xi.pc.sum() + xi.pdc.sum()) +
         sc.mu * xi.y.sum() + z0.alpha.dot(xi.t);
}

/// One named constraint residual. Inequalities are reported as lhs - rhs of
/// their "<= 0" form (feasible iff <= 0); equalities as the signed defect.
struct ResidualEntry {
  std::string name;
  int follower;  // -1 for coupling rows
  int tau;
  double value;
  bool equality;
};

struct ResidualReport {
  std::vector<ResidualEntry> entries;

  // Signed: negative means every inequality holds with margin.
  double max_inequality() const {
    double m = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (const auto& e : entries)
      if (!e.equality) {
        m = std::max(m, e.value);
        any = true;
      }
    return any ? m : 0.0;
  }
  double max_equality_abs() const {
    double m = 0.0;
    for (const auto& e : entries)
      if (e.equality) m = std::max(m, std::abs(e.value));
    return m;
  }
  double worst() const { return std::max(max_inequality(), max_equality_abs()); }
};

/// Signed violations of every market constraint at a collective decision.
inline ResidualReport constraint_residuals(const std::vector<FollowerDecision>& xs,
                                           const Scenario& sc) {
  const int T = sc.T;
  ResidualReport rep;
  auto add = [&](const std::string& name, int i, int tau, double v, bool eq) {
    rep.entries.push_back({name, i, tau, v, eq});
  };

  for (int i = 0; i < sc.N; ++i) {
    const FollowerDecision& x = xs[i];
    const ProsumerSpec& pr = sc.prosumers[i];
    for (int tau = 0; tau < T; ++tau) {
      const double e_prev = tau == 0 ? pr.e0 : x.e(tau - 1);
      add("dynamics", i, tau,
          x.e(tau) - e_prev - sc.dt * (pr.eta_c * x.pc(tau) - pr.eta_dc * x.pdc(tau)), true);
      add("p_lower", i, tau, -x.p(tau), false);
      add("pc_lower", i, tau, -x.pc(tau), false);
      add("pc_upper", i, tau, x.pc(tau) - pr.p_max, false);
      add("pdc_lower", i, tau, -x.pdc(tau), false);
      add("pdc_upper", i, tau, x.pdc(tau) - pr.p_max, false);
      add("e_lower", i, tau, -x.e(tau), false);
      add("e_upper", i, tau, x.e(tau) - pr.e_max, false);
      add("balance", i, tau,
          pr.d(tau) - pr.s(tau) + x.pc(tau) - x.pdc(tau) - (x.p(tau) - x.k(tau)), false);
      if (sc.is_response(tau)) {
        add("y_lower", i, tau, -x.y(tau), false);
        add("t_upper", i, tau, x.t(tau), false);
      } else {
        add("mask_y", i, tau, x.y(tau), true);
        add("mask_t", i, tau, x.t(tau), true);
      }
      if (sc.is_rebound(tau))
        add("k_upper", i, tau, x.k(tau), false);
      else
        add("mask_k", i, tau, x.k(tau), true);
    }
  }

  const VectorXd sum_p = detail::sum_block(xs, Var::P, T);
  const VectorXd sum_y = detail::sum_block(xs, Var::Y, T);
  const VectorXd sum_k = detail::sum_block(xs, Var::K, T);
  const VectorXd cap = sc.capacity_rhs();
  for (int tau = 0; tau < T; ++tau) {
    add("coupling_capacity", -1, tau, sum_p(tau) + sum_y(tau) - sum_k(tau) - cap(tau), false);
    if (sc.is_rebound(tau)) add("rebound_cap", -1, tau, -sum_k(tau) - (-sc.r(tau)), false);
  }
  return rep;
}

}  // namespace flexmarket
