#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

// Lemke's complementary pivoting method for the linear complementarity
// problem  w = q + M z,  w >= 0,  z >= 0,  w'z = 0,  with the all-ones
// covering vector. Ratio tests are lexicographic (the w-columns of the
// tableau hold B^{-1}) with a least-index final tie-break, so runs are
// deterministic and cycling-free. For copositive-plus M a ray termination
// certifies infeasibility.

namespace flexmarket {

struct LemkeOptions {
  int max_pivots = -1;        // <= 0: use 60*n + 2000
  double piv_tol = 1e-9;      // entries below this never pivot/block
  double ratio_tie = 1e-11;   // relative tie width before lexicographic stage
  double q_tol = 1e-12;       // q >= -q_tol counts as already solved
};

struct LcpResult {
  enum class Status { Solved, RayTermination, MaxPivots };
  Status status = Status::MaxPivots;
  Eigen::VectorXd z, w;
  int pivots = 0;
  std::string message;
  bool ok() const { return status == Status::Solved; }
};

inline LcpResult lemke_solve(const Eigen::MatrixXd& M, const Eigen::VectorXd& q,
                             const LemkeOptions& opt = {}) {
  using Eigen::MatrixXd;
  using Eigen::VectorXd;
  const int n = static_cast<int>(q.size());
  LcpResult res;
  res.z = VectorXd::Zero(n);
  res.w = q;
  if (n == 0 || q.minCoeff() >= -opt.q_tol) {
    res.status = LcpResult::Status::Solved;
    res.w = res.w.cwiseMax(0.0);
    return res;
  }

  const int max_pivots = opt.max_pivots > 0 ? opt.max_pivots : 60 * n + 2000;
  const int art = 2 * n;  // artificial variable column

  // Tableau over columns [w | z | z0]; rhs kept separately.
  MatrixXd tab(n, 2 * n + 1);
  tab.leftCols(n) = MatrixXd::Identity(n, n);
  tab.middleCols(n, n) = -M;
  tab.col(art) = -VectorXd::Ones(n);
  VectorXd rhs = q;
  std::vector<int> basis(n);
  for (int i = 0; i < n; ++i) basis[i] = i;

  auto pivot = [&](int r, int c) {
    const double piv = tab(r, c);
    tab.row(r) /= piv;
    rhs(r) /= piv;
    for (int i = 0; i < n; ++i) {
      if (i == r) continue;
      const double f = tab(i, c);
      if (f == 0.0) continue;
      tab.row(i) -= f * tab.row(r);
      rhs(i) -= f * rhs(r);
    }
    basis[r] = c;
  };

  // Lexicographic comparison of candidate leaving rows a and b for entering
  // column col: compares (rhs, B^{-1}) / col entrywise.
  auto lex_less = [&](int a, int b, int c) {
    const double ra = rhs(a) / tab(a, c), rb = rhs(b) / tab(b, c);
    const double scale = std::max({1.0, std::abs(ra), std::abs(rb)});
    if (ra < rb - opt.ratio_tie * scale) return true;
    if (rb < ra - opt.ratio_tie * scale) return false;
    for (int k = 0; k < n; ++k) {
      const double va = tab(a, k) / tab(a, c), vb = tab(b, k) / tab(b, c);
      const double s2 = std::max({1.0, std::abs(va), std::abs(vb)});
      if (va < vb - 1e-12 * s2) return true;
      if (vb < va - 1e-12 * s2) return false;
    }
    return a < b;  // least-index fallback
  };

  // First pivot: bring z0 in against the most negative rhs row.
  int r0 = 0;
  for (int i = 1; i < n; ++i)
    if (rhs(i) < rhs(r0) || (rhs(i) == rhs(r0) && i < r0)) r0 = i;
  int leaving_var = basis[r0];
  pivot(r0, art);
  int entering = (leaving_var < n) ? leaving_var + n : leaving_var - n;

  for (res.pivots = 1; res.pivots <= max_pivots; ++res.pivots) {
    // Ratio test over rows with positive entering coefficient.
    int r = -1;
    for (int i = 0; i < n; ++i) {
      if (tab(i, entering) <= opt.piv_tol) continue;
      if (r < 0 || lex_less(i, r, entering)) r = i;
    }
    if (r < 0) {
      res.status = LcpResult::Status::RayTermination;
      res.message = "secondary ray while driving variable " + std::to_string(entering);
      break;
    }
    leaving_var = basis[r];
    pivot(r, entering);
    if (leaving_var == art) {
      res.status = LcpResult::Status::Solved;
      break;
    }
    entering = (leaving_var < n) ? leaving_var + n : leaving_var - n;
  }
  if (res.status == LcpResult::Status::MaxPivots)
    res.message = "pivot limit reached (" + std::to_string(max_pivots) + ")";

  // Read the point off the basis; w is recomputed from scratch for accuracy.
  res.z = VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    const int v = basis[i];
    if (v >= n && v < 2 * n) res.z(v - n) = std::max(0.0, rhs(i));
  }
  res.w = (q + M * res.z).cwiseMax(0.0);
  return res;
}

}  // namespace flexmarket
