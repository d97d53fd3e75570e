#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <limits>
#include <vector>

// Operator-splitting solver for the follower QP
//   min 1/2 x'Px + c'x   s.t.  x >= 0,  G x <= h,
// i.e. ADMM on the splitting (x, Kx) with K = [I; G], fixed penalty, plus an
// active-set polish step that re-solves the identified equality system
// directly. The linear-system factorization depends only on (P, G), so one
// instance can serve many right-hand sides (the leader only moves the linear
// term), warm-started from the previous solution.

namespace flexmarket {

struct AdmmOptions {
  double rho = 0.5;     // penalty
  double sigma = 1e-6;  // proximal regularization on x
  double alpha = 1.6;   // relaxation
  double eps_abs = 1e-9;
  int max_iter = 100000;
  int check_every = 25;
  bool polish = true;
  double polish_delta = 1e-9;
};

struct AdmmResult {
  Eigen::VectorXd x;
  Eigen::VectorXd y;  // row duals, size n+m: bound rows first, then G rows
  int iterations = 0;
  bool converged = false;
  bool polished = false;
  double r_prim = std::numeric_limits<double>::infinity();
  double r_dual = std::numeric_limits<double>::infinity();
};

class AdmmQp {
 public:
  AdmmQp(Eigen::MatrixXd P, Eigen::MatrixXd G, Eigen::VectorXd h, AdmmOptions opt = {})
      : P_(std::move(P)), G_(std::move(G)), h_(std::move(h)), opt_(opt) {
    n_ = static_cast<int>(P_.rows());
    m_ = static_cast<int>(G_.rows());
    Eigen::MatrixXd S = P_ + (opt_.sigma + opt_.rho) * Eigen::MatrixXd::Identity(n_, n_) +
                        opt_.rho * G_.transpose() * G_;
    llt_.compute(S);
  }

  struct Warm {
    Eigen::VectorXd x, z, y;
  };

  AdmmResult solve(const Eigen::VectorXd& c, const Warm* warm = nullptr) const {
    using Eigen::VectorXd;
    const int nm = n_ + m_;
    VectorXd x = VectorXd::Zero(n_), z = VectorXd::Zero(nm), y = VectorXd::Zero(nm);
    if (warm && warm->x.size() == n_ && warm->z.size() == nm && warm->y.size() == nm) {
      x = warm->x;
      z = warm->z;
      y = warm->y;
    }

    AdmmResult res;
    VectorXd kx(nm), xt(n_), zt(nm), zc(nm);
    int it = 0;
    for (; it < opt_.max_iter; ++it) {
      // x-update through the cached factorization.
      VectorXd rhs = opt_.sigma * x - c;
      rhs += opt_.rho * z.head(n_) - y.head(n_);
      rhs.noalias() += G_.transpose() * (opt_.rho * z.tail(m_) - y.tail(m_));
      xt = llt_.solve(rhs);
      zt.head(n_) = xt;
      zt.tail(m_).noalias() = G_ * xt;

      x = opt_.alpha * xt + (1.0 - opt_.alpha) * x;
      zc = opt_.alpha * zt + (1.0 - opt_.alpha) * z + y / opt_.rho;
      // Projection: rows [0,n) live in [0, inf), rows [n, n+m) in (-inf, h].
      z.head(n_) = zc.head(n_).cwiseMax(0.0);
      z.tail(m_) = zc.tail(m_).cwiseMin(h_);
      y = opt_.rho * (zc - z);

      if ((it + 1) % opt_.check_every == 0) {
        kx.head(n_) = x;
        kx.tail(m_).noalias() = G_ * x;
        const double rp = (kx - z).lpNorm<Eigen::Infinity>();
        VectorXd dual = P_ * x + c + y.head(n_) + G_.transpose() * y.tail(m_);
        const double rd = dual.lpNorm<Eigen::Infinity>();
        if (rp < opt_.eps_abs && rd < opt_.eps_abs) {
          res.converged = true;
          res.r_prim = rp;
          res.r_dual = rd;
          break;
        }
      }
    }
    res.iterations = it + 1;
    res.x = x;
    res.y = y;
    if (!res.converged) {
      kx.head(n_) = x;
      kx.tail(m_).noalias() = G_ * x;
      res.r_prim = (kx - z).lpNorm<Eigen::Infinity>();
      res.r_dual = (P_ * x + c + y.head(n_) + G_.transpose() * y.tail(m_)).lpNorm<Eigen::Infinity>();
    }
    if (opt_.polish) polish(c, res);
    if (warm_out_) {
      warm_out_->x = x;
      warm_out_->z = z;
      warm_out_->y = y;
    }
    return res;
  }

  /// Where to store the raw (un-polished) iterates for the next warm start.
  void set_warm_sink(Warm* sink) const { warm_out_ = sink; }

  int n() const { return n_; }
  int m() const { return m_; }

 private:
  // Re-solves the equality system of the active set identified from (z, y);
  // keeps the polished point only when it beats the iterate on both primal
  // and dual residuals.
  void polish(const Eigen::VectorXd& c, AdmmResult& res) const {
    using Eigen::MatrixXd;
    using Eigen::VectorXd;
    const double ythr = 1e-12 + 1e-9 * res.y.lpNorm<Eigen::Infinity>();

    std::vector<int> act_low, act_row;
    for (int i = 0; i < n_; ++i)
      if (res.y(i) < -ythr || res.x(i) < 1e-11) act_low.push_back(i);
    VectorXd gx = G_ * res.x;
    for (int j = 0; j < m_; ++j)
      if (res.y(n_ + j) > ythr || h_(j) - gx(j) < 1e-11 * std::max(1.0, std::abs(h_(j))))
        act_row.push_back(j);

    const int na = static_cast<int>(act_low.size() + act_row.size());
    MatrixXd Ka = MatrixXd::Zero(na, n_);
    VectorXd ba = VectorXd::Zero(na);
    for (size_t a = 0; a < act_low.size(); ++a) Ka(static_cast<int>(a), act_low[a]) = 1.0;
    for (size_t a = 0; a < act_row.size(); ++a) {
      Ka.row(static_cast<int>(act_low.size() + a)) = G_.row(act_row[a]);
      ba(static_cast<int>(act_low.size() + a)) = h_(act_row[a]);
    }

    const double delta = opt_.polish_delta * std::max(1.0, P_.diagonal().cwiseAbs().maxCoeff());
    Eigen::LLT<MatrixXd> pr(P_ + delta * MatrixXd::Identity(n_, n_));
    if (pr.info() != Eigen::Success) return;
    MatrixXd S = Ka * pr.solve(Ka.transpose()) + delta * MatrixXd::Identity(na, na);
    Eigen::LLT<MatrixXd> slt(S);
    if (slt.info() != Eigen::Success) return;

    VectorXd xp, ya;
    {
      VectorXd t = pr.solve(-c);
      ya = slt.solve(Ka * t - ba);
      xp = pr.solve(-c - Ka.transpose() * ya);
    }
    for (int pass = 0; pass < 3; ++pass) {  // refinement against delta = 0
      VectorXd r1 = P_ * xp + c + Ka.transpose() * ya;
      VectorXd r2 = Ka * xp - ba;
      VectorXd dy = slt.solve(Ka * pr.solve(-r1) + r2);
      VectorXd dx = pr.solve(-r1 - Ka.transpose() * dy);
      xp += dx;
      ya += dy;
    }

    VectorXd yp = VectorXd::Zero(n_ + m_);
    for (size_t a = 0; a < act_low.size(); ++a) yp(act_low[a]) = std::min(0.0, ya(static_cast<int>(a)));
    for (size_t a = 0; a < act_row.size(); ++a)
      yp(n_ + act_row[a]) = std::max(0.0, ya(static_cast<int>(act_low.size() + a)));

    VectorXd gxp = G_ * xp;
    double rp = std::max(0.0, (-xp).maxCoeff());
    if (m_ > 0) rp = std::max(rp, (gxp - h_).maxCoeff());
    const double rd =
        (P_ * xp + c + yp.head(n_) + G_.transpose() * yp.tail(m_)).lpNorm<Eigen::Infinity>();
    if (rp <= std::max(res.r_prim, 1e-10) && rd <= std::max(res.r_dual, 1e-10)) {
      res.x = xp;
      res.y = yp;
      res.r_prim = rp;
      res.r_dual = rd;
      res.polished = true;
      res.converged = res.converged || (rp < opt_.eps_abs && rd < opt_.eps_abs) ||
                      (rp < 1e-9 && rd < 1e-9);
    }
  }

  Eigen::MatrixXd P_, G_;
  Eigen::VectorXd h_;
  AdmmOptions opt_;
  int n_ = 0, m_ = 0;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  mutable Warm* warm_out_ = nullptr;
};

}  // namespace flexmarket
