#include <catch2/catch_amalgamated.hpp>

#include "flexmarket/lcp.hpp"
#include "flexmarket/random.hpp"
#include "support/brute_qp.hpp"

using namespace flexmarket;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

void check_lcp_conditions(const MatrixXd& M, const VectorXd& q, const LcpResult& r,
                          double tol = 1e-8) {
  REQUIRE(r.ok());
  const VectorXd w = q + M * r.z;
  CHECK(r.z.minCoeff() >= -tol);
  CHECK(w.minCoeff() >= -tol);
  CHECK(std::abs(r.z.dot(w)) <= tol * std::max(1.0, q.lpNorm<Eigen::Infinity>()) * q.size());
}

}  // namespace

TEST_CASE("trivial LCP with nonnegative q") {
  MatrixXd M = MatrixXd::Identity(3, 3);
  VectorXd q(3);
  q << 1, 0, 2;
  LcpResult r = lemke_solve(M, q);
  REQUIRE(r.ok());
  CHECK(r.z.isZero(0));
  CHECK(r.pivots == 0);
}

TEST_CASE("small textbook LCP") {
  MatrixXd M(2, 2);
  M << 2, 1, 1, 2;
  VectorXd q(2);
  q << -5, -6;
  LcpResult r = lemke_solve(M, q);
  check_lcp_conditions(M, q, r);
  // unique solution of the SPD system M z = -q with both w = 0
  VectorXd zstar = M.ldlt().solve(-q);
  CHECK((r.z - zstar).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("random strictly convex QPs against brute-force enumeration") {
  std::mt19937_64 rng(101);
  for (int rep = 0; rep < 120; ++rep) {
    const int n = uniform_int(rng, 1, 4);
    const int m = uniform_int(rng, 0, 6);
    MatrixXd B(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) B(i, j) = uniform(rng, -1, 1);
    MatrixXd P = B.transpose() * B + 0.3 * MatrixXd::Identity(n, n);
    VectorXd c(n);
    for (int i = 0; i < n; ++i) c(i) = uniform(rng, -2, 2);
    MatrixXd G(m, n);
    VectorXd h(m);
    for (int r2 = 0; r2 < m; ++r2) {
      for (int j = 0; j < n; ++j) G(r2, j) = uniform(rng, -1, 1);
      h(r2) = uniform(rng, 0.2, 2.0);  // x = 0 stays feasible
    }

    // KKT of min 1/2 x'Px + c'x, x >= 0, Gx <= h as an LCP.
    const int dim = n + m;
    MatrixXd M = MatrixXd::Zero(dim, dim);
    M.topLeftCorner(n, n) = P;
    M.topRightCorner(n, m) = G.transpose();
    M.bottomLeftCorner(m, n) = -G;
    VectorXd q(dim);
    q << c, h;

    LcpResult r = lemke_solve(M, q);
    check_lcp_conditions(M, q, r);

    // Oracle: brute-force with bounds folded into A.
    MatrixXd A(m + n, n);
    A.topRows(m) = G;
    A.bottomRows(n) = -MatrixXd::Identity(n, n);
    VectorXd b(m + n);
    b.head(m) = h;
    b.tail(n).setZero();
    auto oracle = testing::brute_qp(P, c, A, b, MatrixXd(0, n), VectorXd(0));
    REQUIRE(oracle.found);
    CHECK((r.z.head(n) - oracle.x).lpNorm<Eigen::Infinity>() < 1e-7);
  }
}

TEST_CASE("positive semidefinite objective still solves") {
  std::mt19937_64 rng(202);
  for (int rep = 0; rep < 60; ++rep) {
    const int n = uniform_int(rng, 2, 5);
    // rank-1 PSD block plus a linear term bounded below by box rows
    VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = uniform(rng, -1, 1);
    MatrixXd P = v * v.transpose();
    VectorXd c(n);
    for (int i = 0; i < n; ++i) c(i) = uniform(rng, -1, 1);
    MatrixXd G = MatrixXd::Identity(n, n);  // x <= h keeps it bounded
    VectorXd h = VectorXd::Constant(n, 3.0);

    const int dim = 2 * n;
    MatrixXd M = MatrixXd::Zero(dim, dim);
    M.topLeftCorner(n, n) = P;
    M.topRightCorner(n, n) = G.transpose();
    M.bottomLeftCorner(n, n) = -G;
    VectorXd q(dim);
    q << c, h;
    LcpResult r = lemke_solve(M, q);
    check_lcp_conditions(M, q, r);
  }
}

TEST_CASE("infeasible constraints produce a ray certificate") {
  // x >= 0 with x <= -1 cannot hold; the QP-KKT LCP has no solution.
  MatrixXd M(2, 2);
  M << 1, 1, -1, 0;
  VectorXd q(2);
  q << 0, -1;  // slack row: -1 - x >= 0 never
  LcpResult r = lemke_solve(M, q);
  CHECK(r.status == LcpResult::Status::RayTermination);
  CHECK_FALSE(r.message.empty());
}

TEST_CASE("deterministic pivoting") {
  std::mt19937_64 rng(303);
  const int n = 8;
  MatrixXd B(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) B(i, j) = uniform(rng, -1, 1);
  MatrixXd M = B.transpose() * B;
  VectorXd q(n);
  for (int i = 0; i < n; ++i) q(i) = uniform(rng, -2, 2);
  LcpResult a = lemke_solve(M, q);
  LcpResult b = lemke_solve(M, q);
  REQUIRE(a.ok());
  REQUIRE(b.ok());
  CHECK(std::memcmp(a.z.data(), b.z.data(), sizeof(double) * n) == 0);
  CHECK(a.pivots == b.pivots);
}

TEST_CASE("degenerate duplicated rows do not cycle") {
  const int n = 3;
  MatrixXd P = MatrixXd::Identity(n, n);
  VectorXd c = VectorXd::Constant(n, -1.0);
  MatrixXd G(4, n);
  G << 1, 1, 0,
       1, 1, 0,
       0, 1, 1,
       0, 1, 1;  // duplicates on purpose
  VectorXd h = VectorXd::Constant(4, 0.5);
  const int dim = n + 4;
  MatrixXd M = MatrixXd::Zero(dim, dim);
  M.topLeftCorner(n, n) = P;
  M.topRightCorner(n, 4) = G.transpose();
  M.bottomLeftCorner(4, n) = -G;
  VectorXd q(dim);
  q << c, h;
  LcpResult r = lemke_solve(M, q);
  check_lcp_conditions(M, q, r);
}
