#include <catch2/catch_amalgamated.hpp>

#include "flexmarket/rewards.hpp"
#include "support/test_instances.hpp"

using namespace flexmarket;
namespace fmt = flexmarket::testing;

namespace {

Scenario one_interval(double r, double p_bar = 10, double beta = 4, int N = 3) {
  Scenario sc;
  sc.T = 1;
  sc.N = N;
  sc.dt = 1.0;
  sc.r = VectorXd::Constant(1, r);
  sc.p_bar = p_bar;
  sc.beta = beta;
  sc.p_tilde = 3.0;
  sc.c1 = VectorXd::Constant(1, 0.1);
  sc.c0_lo = VectorXd::Constant(1, 0.0);
  sc.c0_hi = VectorXd::Constant(1, 5.0);
  sc.g = VectorXd::Constant(1, 100.0);
  sc.mu = 0.5;
  sc.delta = 0.01;
  for (int i = 0; i < N; ++i) {
    ProsumerSpec pr;
    pr.d = VectorXd::Constant(1, 5.0);
    pr.s = VectorXd::Constant(1, 1.0);
    pr.e_max = 10;
    pr.p_max = 3;
    pr.e0 = 5;
    sc.prosumers.push_back(pr);
  }
  return sc;
}

}  // namespace

TEST_CASE("pi_R branches") {
  // r <= 0: no response reward regardless of offer
  CHECK(eval_pi_R(VectorXd::Constant(1, 3.0), one_interval(-1))(0) == 0.0);
  // below the request: p_bar per unit
  CHECK(eval_pi_R(VectorXd::Constant(1, 3.0), one_interval(5))(0) == Catch::Approx(30.0));
  // past the request: min of the two affine pieces, min(80, -2*8+60) = 44
  CHECK(eval_pi_R(VectorXd::Constant(1, 8.0), one_interval(5))(0) == Catch::Approx(44.0));

  CHECK_THROWS_AS(eval_pi_R(VectorXd::Zero(3), one_interval(5)), std::invalid_argument);
  CHECK_THROWS_AS(eval_pi_R(VectorXd::Constant(1, -1.0), one_interval(5)), std::invalid_argument);
}

TEST_CASE("phi_R branches") {
  CHECK(eval_phi_R(VectorXd::Constant(1, 2.0), VectorXd::Zero(1), one_interval(0))(0) == 0.0);
  // residual 3 >= y_i = 2: full rate
  CHECK(eval_phi_R(VectorXd::Constant(1, 2.0), VectorXd::Constant(1, 2.0), one_interval(5))(0) ==
        Catch::Approx(20.0));
  // past the kink: min(40, 6*4+4*3) = 36
  CHECK(eval_phi_R(VectorXd::Constant(1, 4.0), VectorXd::Constant(1, 2.0), one_interval(5))(0) ==
        Catch::Approx(36.0));
}

TEST_CASE("pi_B branches") {
  CHECK(eval_pi_B(VectorXd::Constant(1, 0.0), one_interval(2))(0) == 0.0);
  CHECK(eval_pi_B(VectorXd::Constant(1, -2.0), one_interval(-4))(0) == Catch::Approx(6.0));
  CHECK(eval_pi_B(VectorXd::Constant(1, 0.0), one_interval(-4))(0) == 0.0);
}

TEST_CASE("pricing map") {
  Scenario sc = one_interval(0);
  CHECK(eval_price(VectorXd::Constant(1, 10.0), VectorXd::Constant(1, 2.0), sc)(0) ==
        Catch::Approx(3.0));
  sc.c1.setZero();
  CHECK(eval_price(VectorXd::Constant(1, 99.0), VectorXd::Constant(1, 2.0), sc)(0) ==
        Catch::Approx(2.0));
  sc.c1.setConstant(0.05);
  CHECK(eval_price(VectorXd::Constant(1, 40.0), VectorXd::Constant(1, 1.5), sc)(0) ==
        Catch::Approx(3.5));
}

TEST_CASE("revenue consistency: sum of phi equals pi_R") {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 400; ++rep) {
    Scenario sc = fmt::random_scenario(rng, 5, 8);
    MatrixXd y(sc.N, sc.T);
    for (int i = 0; i < sc.N; ++i)
      for (int tau = 0; tau < sc.T; ++tau)
        y(i, tau) = uniform(rng, 0.0, 2.0 * std::abs(sc.r(tau)) + 1.0);
    VectorXd ybar = y.colwise().sum().transpose();
    VectorXd total = VectorXd::Zero(sc.T);
    for (int i = 0; i < sc.N; ++i)
      total += eval_phi_R(y.row(i).transpose(), ybar - y.row(i).transpose(), sc);
    VectorXd pi = eval_pi_R(ybar, sc);
    for (int tau = 0; tau < sc.T; ++tau)
      CHECK(total(tau) == Catch::Approx(pi(tau)).margin(1e-12 * std::max(1.0, std::abs(pi(tau)))));
  }
}

TEST_CASE("continuity at the kink and min-form equivalence") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 200; ++rep) {
    const double p_bar = uniform(rng, 5, 15);
    const int N = uniform_int(rng, 1, 5);
    const double beta = uniform(rng, p_bar / N, p_bar);
    Scenario sc = one_interval(uniform(rng, 0.5, 5.0), p_bar, beta, N);

    // pi_R: both branches agree at sum y = r.
    VectorXd at_kink = VectorXd::Constant(1, sc.r(0));
    const double lhs = sc.p_bar * sc.r(0);
    const double rhs = (sc.p_bar - N * beta) * sc.r(0) + N * beta * sc.r(0);
    CHECK(lhs == Catch::Approx(rhs));
    CHECK(eval_pi_R(at_kink, sc)(0) == Catch::Approx(lhs));

    // min-form equivalence on random offers.
    const double ybar = uniform(rng, 0.0, 3.0 * sc.r(0));
    const double branch = eval_pi_R(VectorXd::Constant(1, ybar), sc)(0);
    const double minform =
        std::min(p_bar * ybar, (p_bar - N * beta) * ybar + N * beta * sc.r(0));
    CHECK(branch == Catch::Approx(minform).margin(1e-10));

    const double yi = uniform(rng, 0.0, 2.0 * sc.r(0));
    const double yo = uniform(rng, 0.0, 2.0 * sc.r(0));
    const double phib = eval_phi_R(VectorXd::Constant(1, yi), VectorXd::Constant(1, yo), sc)(0);
    const double phim =
        std::min(p_bar * yi, (p_bar - beta) * yi + beta * (sc.r(0) - yo));
    CHECK(phib == Catch::Approx(phim).margin(1e-10));
  }
}

TEST_CASE("saturation behaviour past the kink") {
  const double p_bar = 10;
  const int N = 4;
  SECTION("beta = p_bar/N gives a flat plateau") {
    Scenario sc = one_interval(3.0, p_bar, p_bar / N, N);
    const double v1 = eval_pi_R(VectorXd::Constant(1, 3.0), sc)(0);
    const double v2 = eval_pi_R(VectorXd::Constant(1, 5.0), sc)(0);
    const double v3 = eval_pi_R(VectorXd::Constant(1, 9.0), sc)(0);
    CHECK(v1 == Catch::Approx(v2));
    CHECK(v2 == Catch::Approx(v3));
  }
  SECTION("beta > p_bar/N strictly decreases") {
    Scenario sc = one_interval(3.0, p_bar, 4.0, N);
    const double v1 = eval_pi_R(VectorXd::Constant(1, 3.0), sc)(0);
    const double v2 = eval_pi_R(VectorXd::Constant(1, 5.0), sc)(0);
    const double v3 = eval_pi_R(VectorXd::Constant(1, 9.0), sc)(0);
    CHECK(v2 < v1);
    CHECK(v3 < v2);
  }
}

TEST_CASE("negative phi in the over-provision regime") {
  Scenario sc = one_interval(2.0, 10, 8, 2);
  // others already provide 4 > r = 2; at y_i = 0 the share is beta*(r - 4) < 0
  const double phi = eval_phi_R(VectorXd::Zero(1), VectorXd::Constant(1, 4.0), sc)(0);
  CHECK(phi == Catch::Approx(8.0 * (2.0 - 4.0)));
  CHECK(phi < 0);
}

TEST_CASE("dso cost examples") {
  SECTION("all zero decisions cost nothing") {
    Scenario sc = one_interval(1.0);
    std::vector<FollowerDecision> xs(sc.N, FollowerDecision::zero(1));
    LeaderDecision z0{VectorXd::Constant(1, 3.0), VectorXd::Constant(1, 0.7)};
    CHECK(eval_dso_cost(z0, xs, sc) == 0.0);
  }
  SECTION("energy revenue only") {
    Scenario sc = one_interval(0.0, 10, 4, 1);
    std::vector<FollowerDecision> xs(1, FollowerDecision::zero(1));
    xs[0].p(0) = 10.0;
    LeaderDecision z0{VectorXd::Constant(1, 2.0), VectorXd::Constant(1, 0.5)};
    CHECK(eval_dso_cost(z0, xs, sc) == Catch::Approx(-30.0));
  }
}

TEST_CASE("prosumer cost examples") {
  SECTION("zero decision costs nothing") {
    Scenario sc = one_interval(1.0);
    std::vector<FollowerDecision> xs(sc.N, FollowerDecision::zero(1));
    xs[1].p(0) = 4.0;  // others may act
    LeaderDecision z0{VectorXd::Constant(1, 2.0), VectorXd::Constant(1, 0.0)};
    CHECK(eval_prosumer_cost(0, xs, z0, sc) == 0.0);
  }
  SECTION("purchasing plus degradation") {
    Scenario sc = one_interval(0.0, 10, 4, 1);
    std::vector<FollowerDecision> xs(1, FollowerDecision::zero(1));
    xs[0].p(0) = 10.0;
    xs[0].pc(0) = 1.0;
    LeaderDecision z0{VectorXd::Constant(1, 2.0), VectorXd::Constant(1, 0.0)};
    CHECK(eval_prosumer_cost(0, xs, z0, sc) == Catch::Approx(30.01));
  }
}

// Independent term-by-term recomputation, written against the reward
// definitions with plain loops; the library path is vectorized.
namespace {
double dso_cost_naive(const LeaderDecision& z0, const std::vector<FollowerDecision>& xs,
                      const Scenario& sc) {
  double cost = 0.0;
  for (int tau = 0; tau < sc.T; ++tau) {
    double sp = 0.0, sy = 0.0, sk = 0.0;
    for (const auto& x : xs) {
      sp += x.p(tau);
      sy += x.y(tau);
      sk += x.k(tau);
    }
    const double h = sc.c1(tau) * sp + z0.c0(tau);
    cost -= h * sp;
    double phi_sum = 0.0;
    for (int i = 0; i < sc.N; ++i) {
      const double yi = xs[i].y(tau);
      if (sc.r(tau) > 0) {
        const double res = sc.r(tau) - (sy - yi);
        phi_sum += yi <= res ? sc.p_bar * yi : (sc.p_bar - sc.beta) * yi + sc.beta * res;
      }
    }
    cost -= (1.0 - z0.alpha(tau)) * phi_sum;
    if (sc.r(tau) < 0) cost -= -sc.p_tilde * sk;
  }
  return cost;
}

double prosumer_cost_naive(int i, const LeaderDecision& z0,
                           const std::vector<FollowerDecision>& xs, const Scenario& sc) {
  double cost = 0.0;
  for (int tau = 0; tau < sc.T; ++tau) {
    double sp = 0.0, sy = 0.0;
    for (const auto& x : xs) {
      sp += x.p(tau);
      sy += x.y(tau);
    }
    cost += (sc.c1(tau) * sp + z0.c0(tau)) * xs[i].p(tau);
    cost += sc.delta * (xs[i].pc(tau) + xs[i].pdc(tau));
    cost += sc.mu * xs[i].y(tau);
    if (sc.r(tau) > 0) {
      const double yi = xs[i].y(tau);
      const double res = sc.r(tau) - (sy - yi);
      const double phi = yi <= res ? sc.p_bar * yi : (sc.p_bar - sc.beta) * yi + sc.beta * res;
      cost -= z0.alpha(tau) * phi;
    }
  }
  return cost;
}
}  // namespace

TEST_CASE("cost evaluation matches independent ledger recomputation") {
  std::mt19937_64 rng(23);
  for (int rep = 0; rep < 100; ++rep) {
    Scenario sc = fmt::random_scenario(rng, 3, 4);
    auto xs = fmt::random_decisions_t_pinned(rng, sc);
    LeaderDecision z0 = fmt::random_z0(rng, sc);
    const double scale = std::max(1.0, std::abs(dso_cost_naive(z0, xs, sc)));
    CHECK(eval_dso_cost(z0, xs, sc) ==
          Catch::Approx(dso_cost_naive(z0, xs, sc)).margin(1e-10 * scale));
    for (int i = 0; i < sc.N; ++i)
      CHECK(eval_prosumer_cost(i, xs, z0, sc) ==
            Catch::Approx(prosumer_cost_naive(i, z0, xs, sc)).margin(1e-10 * scale));
  }
}

TEST_CASE("reward ledger invariants") {
  std::mt19937_64 rng(31);
  for (int rep = 0; rep < 50; ++rep) {
    Scenario sc = fmt::random_scenario(rng, 4, 6);
    auto xs = fmt::random_decisions_t_pinned(rng, sc);
    LeaderDecision z0 = fmt::random_z0(rng, sc);
    RewardLedger led = build_reward_ledger(z0, xs, sc);
    for (int tau = 0; tau < sc.T; ++tau) {
      CHECK(led.phi.col(tau).sum() ==
            Catch::Approx(led.pi_R(tau)).margin(1e-12 * std::max(1.0, std::abs(led.pi_R(tau)))));
      CHECK(led.dso_net(tau) == Catch::Approx((1 - z0.alpha(tau)) * led.pi_R(tau)));
      // split identity: retained + distributed = total
      CHECK(led.dso_net(tau) + z0.alpha(tau) * led.phi.col(tau).sum() ==
            Catch::Approx(led.pi_R(tau)).margin(1e-10));
    }
  }
}

TEST_CASE("constraint residuals") {
  Scenario sc = one_interval(1.0, 10, 4, 2);

  SECTION("hand-built feasible point has no violations") {
    std::vector<FollowerDecision> xs;
    for (int i = 0; i < 2; ++i) {
      FollowerDecision x = FollowerDecision::zero(1);
      x.p(0) = 4.0;  // d - s = 4
      x.e(0) = 5.0;  // e0 = 5, no cycling
      x.y(0) = 0.1;
      x.t(0) = -0.5;
      xs.push_back(x);
    }
    ResidualReport rep = constraint_residuals(xs, sc);
    CHECK(rep.max_inequality() <= 0.0);
    CHECK(rep.max_equality_abs() == 0.0);
  }

  SECTION("one-step dynamics") {
    Scenario s2 = one_interval(-1.0, 10, 4, 1);
    s2.prosumers[0].e0 = 0.0;
    s2.prosumers[0].eta_c = 0.9;
    std::vector<FollowerDecision> xs(1, FollowerDecision::zero(1));
    xs[0].pc(0) = s2.prosumers[0].p_max;
    xs[0].e(0) = s2.dt * 0.9 * s2.prosumers[0].p_max;
    xs[0].p(0) = 10.0;
    ResidualReport rep = constraint_residuals(xs, s2);
    for (const auto& e : rep.entries)
      if (e.name == "dynamics") CHECK(e.value == 0.0);
  }

  SECTION("random infeasible point matches naive recomputation") {
    std::mt19937_64 rng(47);
    for (int rep = 0; rep < 25; ++rep) {
      Scenario s2 = fmt::random_scenario(rng, 3, 4);
      std::vector<FollowerDecision> xs;
      for (int i = 0; i < s2.N; ++i) {
        FollowerDecision x = FollowerDecision::zero(s2.T);
        for (int tau = 0; tau < s2.T; ++tau) {
          x.p(tau) = uniform(rng, -1.0, 8.0);
          x.y(tau) = uniform(rng, -1.0, 3.0);
          x.e(tau) = uniform(rng, -2.0, s2.prosumers[i].e_max + 2.0);
          x.pc(tau) = uniform(rng, -1.0, s2.prosumers[i].p_max + 1.0);
          x.pdc(tau) = uniform(rng, -1.0, s2.prosumers[i].p_max + 1.0);
          x.k(tau) = uniform(rng, -3.0, 1.0);
          x.t(tau) = uniform(rng, -2.0, 1.0);
        }
        xs.push_back(x);
      }
      ResidualReport report = constraint_residuals(xs, s2);
      for (const auto& e : report.entries) {
        if (e.name == "balance") {
          const auto& pr = s2.prosumers[e.follower];
          const auto& x = xs[e.follower];
          const double naive = pr.d(e.tau) - pr.s(e.tau) + x.pc(e.tau) - x.pdc(e.tau) -
                               (x.p(e.tau) - x.k(e.tau));
          CHECK(e.value == Catch::Approx(naive).margin(1e-14));
        } else if (e.name == "coupling_capacity") {
          double lhs = 0.0;
          for (const auto& x : xs) lhs += x.p(e.tau) + x.y(e.tau) - x.k(e.tau);
          const double naive = lhs - std::max(s2.g(e.tau), s2.g(e.tau) - s2.r(e.tau));
          CHECK(e.value == Catch::Approx(naive).margin(1e-12));
        } else if (e.name == "rebound_cap") {
          double mk = 0.0;
          for (const auto& x : xs) mk += -x.k(e.tau);
          CHECK(e.value == Catch::Approx(mk - (-s2.r(e.tau))).margin(1e-12));
        } else if (e.name == "e_upper") {
          CHECK(e.value ==
                Catch::Approx(xs[e.follower].e(e.tau) - s2.prosumers[e.follower].e_max)
                    .margin(1e-14));
        }
      }
    }
  }
}

TEST_CASE("epigraph-form prosumer cost agrees with the raw form at t = -phi") {
  std::mt19937_64 rng(59);
  for (int rep = 0; rep < 50; ++rep) {
    Scenario sc = fmt::random_scenario(rng, 3, 5);
    auto xs = fmt::random_decisions_t_pinned(rng, sc);
    LeaderDecision z0 = fmt::random_z0(rng, sc);
    for (int i = 0; i < sc.N; ++i) {
      const double raw = eval_prosumer_cost(i, xs, z0, sc);
      const double epi = eval_prosumer_cost_epigraph(i, xs, z0, sc);
      CHECK(raw == Catch::Approx(epi).margin(1e-10 * std::max(1.0, std::abs(raw))));
    }
  }
}

TEST_CASE("scenario validation") {
  Scenario sc = one_interval(1.0);
  CHECK(validate(sc).ok());

  SECTION("generation above demand is a hard error naming the prosumer") {
    sc.prosumers[1].s(0) = sc.prosumers[1].d(0) + 1.0;
    ValidationReport rep = validate(sc);
    REQUIRE_FALSE(rep.ok());
    bool found = false;
    for (const auto& e : rep.errors)
      if (e.find("prosumer 2") != std::string::npos && e.find("interval 1") != std::string::npos)
        found = true;
    CHECK(found);
  }
  SECTION("beta outside the recommended band only warns") {
    sc.beta = 0.5 * sc.p_bar / sc.N;
    ValidationReport rep = validate(sc);
    CHECK(rep.ok());
    CHECK_FALSE(rep.warnings.empty());
  }
  SECTION("dimension mismatch is an error") {
    sc.g = VectorXd::Zero(3);
    CHECK_FALSE(validate(sc).ok());
  }
  SECTION("invariant violations are all listed") {
    sc.mu = -1;
    sc.delta = -1;
    sc.prosumers[0].e0 = 99;
    ValidationReport rep = validate(sc);
    CHECK(rep.errors.size() >= 3);
  }
}
