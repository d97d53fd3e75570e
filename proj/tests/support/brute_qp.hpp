#pragma once

#include <Eigen/Dense>
#include <limits>
#include <optional>
#include <vector>

// Brute-force convex QP solver by active-set enumeration, used as an
// independent oracle against the pivoting/splitting paths. Exponential in the
// number of inequality rows; keep instances small.

namespace flexmarket::testing {

struct BruteQp {
  Eigen::VectorXd x;
  double value = std::numeric_limits<double>::infinity();
  bool found = false;
};

/// minimize 1/2 x'Px + c'x  s.t.  A x <= b,  E x = e.
inline BruteQp brute_qp(const Eigen::MatrixXd& P, const Eigen::VectorXd& c,
                        const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                        const Eigen::MatrixXd& E, const Eigen::VectorXd& e,
                        double tol = 1e-8) {
  using Eigen::MatrixXd;
  using Eigen::VectorXd;
  const int n = static_cast<int>(P.rows());
  const int mA = static_cast<int>(A.rows());
  const int mE = static_cast<int>(E.rows());
  BruteQp best;

  for (uint64_t mask = 0; mask < (uint64_t(1) << mA); ++mask) {
    std::vector<int> act;
    for (int r = 0; r < mA; ++r)
      if (mask & (uint64_t(1) << r)) act.push_back(r);
    const int na = static_cast<int>(act.size());
    const int dim = n + na + mE;
    MatrixXd K = MatrixXd::Zero(dim, dim);
    VectorXd rhs(dim);
    K.topLeftCorner(n, n) = P;
    for (int a = 0; a < na; ++a) {
      K.block(0, n + a, n, 1) = A.row(act[a]).transpose();
      K.block(n + a, 0, 1, n) = A.row(act[a]);
      rhs(n + a) = b(act[a]);
    }
    if (mE > 0) {
      K.block(0, n + na, n, mE) = E.transpose();
      K.block(n + na, 0, mE, n) = E;
      rhs.tail(mE) = e;
    }
    rhs.head(n) = -c;

    Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(K);
    VectorXd sol = cod.solve(rhs);
    if ((K * sol - rhs).lpNorm<Eigen::Infinity>() > 1e-7) continue;  // inconsistent subset

    VectorXd x = sol.head(n);
    bool ok = true;
    for (int a = 0; a < na && ok; ++a)
      if (sol(n + a) < -tol) ok = false;  // dual feasibility
    if (ok && mA > 0) ok = ((A * x - b).array() <= tol).all();
    if (ok && mE > 0) ok = ((E * x - e).cwiseAbs().array() <= 1e-7).all();
    if (!ok) continue;

    const double val = 0.5 * x.dot(P * x) + c.dot(x);
    if (!best.found || val < best.value - 1e-12) {
      best.found = true;
      best.value = val;
      best.x = x;
    }
  }
  return best;
}

}  // namespace flexmarket::testing
