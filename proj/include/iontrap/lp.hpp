#pragma once

// Dense bounded-variable primal simplex:
//   minimize c'x  subject to  A x = b,  lo <= x <= hi
// Bounds may be infinite. Sized for problems with few rows and many columns.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "iontrap/error.hpp"

namespace iontrap::lp {

inline constexpr double inf = std::numeric_limits<double>::infinity();

struct Problem {
  Eigen::MatrixXd A;
  Eigen::VectorXd b, c, lo, hi;
};

struct Options {
  double feasibility_tol = 1e-9;
  double optimality_tol = 1e-9;
  int max_iterations = 50000;
  int degenerate_switch = 50;  // consecutive degenerate pivots before Bland's rule
};

struct Solution {
  Eigen::VectorXd x;
  double objective = 0.0;
  Eigen::VectorXd duals;          // one per row of the scaled problem
  Eigen::VectorXd reduced_costs;  // c - A'y, scaled problem
  std::vector<int> basis;         // indices of basic columns (may include artificials >= n)
  double primal_residual = 0.0;   // max |A x - b| on the scaled problem
  double dual_infeasibility = 0.0;
  double complementary_slackness = 0.0;
  int iterations = 0;
};

namespace detail {

enum class At { Lower, Upper, Zero, Basic };

class Simplex {
 public:
  Simplex(const Problem& p, const Options& opt) : opt_(opt) {
    m_ = static_cast<int>(p.A.rows());
    n_ = static_cast<int>(p.A.cols());
    if (p.b.size() != m_ || p.c.size() != n_ || p.lo.size() != n_ || p.hi.size() != n_)
      throw Error(ErrorKind::DimensionMismatch, "LP dimensions are inconsistent");
    for (int j = 0; j < n_; ++j)
      if (p.lo[j] > p.hi[j]) throw Error(ErrorKind::Infeasible, "variable bounds are inconsistent");
    row_scale_ = Eigen::VectorXd::Ones(m_);
    for (int i = 0; i < m_; ++i) {
      const double s = p.A.row(i).cwiseAbs().maxCoeff();
      if (s > 0.0) row_scale_[i] = 1.0 / s;
    }
    A_.resize(m_, n_ + m_);
    A_.leftCols(n_) = row_scale_.asDiagonal() * p.A;
    b_ = row_scale_.asDiagonal() * p.b;
    c_orig_ = p.c;
    lo_.resize(n_ + m_);
    hi_.resize(n_ + m_);
    lo_.head(n_) = p.lo;
    hi_.head(n_) = p.hi;
    x_ = Eigen::VectorXd::Zero(n_ + m_);
    state_.assign(static_cast<std::size_t>(n_ + m_), At::Zero);
    for (int j = 0; j < n_; ++j) {
      if (std::isfinite(lo_[j])) {
        x_[j] = lo_[j];
        state_[static_cast<std::size_t>(j)] = At::Lower;
      } else if (std::isfinite(hi_[j])) {
        x_[j] = hi_[j];
        state_[static_cast<std::size_t>(j)] = At::Upper;
      }
    }
    const Eigen::VectorXd r = b_ - A_.leftCols(n_) * x_.head(n_);
    A_.rightCols(m_).setZero();
    basis_.resize(static_cast<std::size_t>(m_));
    for (int i = 0; i < m_; ++i) {
      const int a = n_ + i;
      A_(i, a) = r[i] >= 0.0 ? 1.0 : -1.0;
      lo_[a] = 0.0;
      hi_[a] = inf;
      x_[a] = std::abs(r[i]);
      state_[static_cast<std::size_t>(a)] = At::Basic;
      basis_[static_cast<std::size_t>(i)] = a;
    }
  }

  Solution solve() {
    // Phase I: drive artificials to zero.
    Eigen::VectorXd c1 = Eigen::VectorXd::Zero(n_ + m_);
    c1.tail(m_).setOnes();
    run(c1);
    const double infeas = x_.tail(m_).sum();
    if (infeas > opt_.feasibility_tol * std::max(1.0, b_.cwiseAbs().maxCoeff()))
      throw Error(ErrorKind::Infeasible, "LP has no feasible point (phase I residual " + std::to_string(infeas) + ")");
    for (int i = 0; i < m_; ++i) {
      const int a = n_ + i;
      hi_[a] = 0.0;
      if (state_[static_cast<std::size_t>(a)] != At::Basic) {
        x_[a] = 0.0;
        state_[static_cast<std::size_t>(a)] = At::Lower;
      }
    }
    // Phase II
    Eigen::VectorXd c2 = Eigen::VectorXd::Zero(n_ + m_);
    c2.head(n_) = c_orig_;
    run(c2);

    Solution s;
    s.x = x_.head(n_);
    s.objective = c_orig_.dot(s.x);
    s.iterations = iterations_;
    s.basis = basis_;
    const Eigen::MatrixXd B = basis_matrix();
    Eigen::VectorXd cb(m_);
    for (int i = 0; i < m_; ++i) cb[i] = c2[basis_[static_cast<std::size_t>(i)]];
    s.duals = B.transpose().fullPivLu().solve(cb);
    s.reduced_costs = c_orig_ - A_.leftCols(n_).transpose() * s.duals;
    s.primal_residual = (A_.leftCols(n_) * s.x - b_).cwiseAbs().maxCoeff();
    if (m_ == 0) s.primal_residual = 0.0;
    for (int j = 0; j < n_; ++j) {
      const double d = s.reduced_costs[j];
      const double gap_lo = std::isfinite(lo_[j]) ? s.x[j] - lo_[j] : inf;
      const double gap_hi = std::isfinite(hi_[j]) ? hi_[j] - s.x[j] : inf;
      // dual sign conditions: d > 0 needs x at lower, d < 0 needs x at upper
      if (d > 0.0) {
        if (!std::isfinite(lo_[j])) s.dual_infeasibility = std::max(s.dual_infeasibility, d);
        else s.complementary_slackness = std::max(s.complementary_slackness, d * gap_lo);
      } else if (d < 0.0) {
        if (!std::isfinite(hi_[j])) s.dual_infeasibility = std::max(s.dual_infeasibility, -d);
        else s.complementary_slackness = std::max(s.complementary_slackness, -d * gap_hi);
      }
    }
    s.duals = row_scale_.asDiagonal() * s.duals;
    return s;
  }

 private:
  Eigen::MatrixXd basis_matrix() const {
    Eigen::MatrixXd B(m_, m_);
    for (int i = 0; i < m_; ++i) B.col(i) = A_.col(basis_[static_cast<std::size_t>(i)]);
    return B;
  }

  void recompute_basics(const Eigen::PartialPivLU<Eigen::MatrixXd>& lu) {
    Eigen::VectorXd rhs = b_;
    for (int j = 0; j < n_ + m_; ++j)
      if (state_[static_cast<std::size_t>(j)] != At::Basic && x_[j] != 0.0) rhs -= A_.col(j) * x_[j];
    const Eigen::VectorXd xb = lu.solve(rhs);
    for (int i = 0; i < m_; ++i) x_[basis_[static_cast<std::size_t>(i)]] = xb[i];
  }

  void run(const Eigen::VectorXd& cost) {
    int degenerate = 0;
    for (;;) {
      if (++iterations_ > opt_.max_iterations)
        throw Error(ErrorKind::NonConvergence, "simplex iteration limit reached");
      if (m_ == 0) {
        // No rows: each variable goes to its cheaper bound.
        for (int j = 0; j < n_; ++j) {
          if (cost[j] > 0.0) {
            if (!std::isfinite(lo_[j])) throw Error(ErrorKind::Unbounded, "LP objective is unbounded");
            x_[j] = lo_[j];
          } else if (cost[j] < 0.0) {
            if (!std::isfinite(hi_[j])) throw Error(ErrorKind::Unbounded, "LP objective is unbounded");
            x_[j] = hi_[j];
          }
        }
        return;
      }
      const Eigen::MatrixXd B = basis_matrix();
      const Eigen::PartialPivLU<Eigen::MatrixXd> lu(B);
      recompute_basics(lu);
      Eigen::VectorXd cb(m_);
      for (int i = 0; i < m_; ++i) cb[i] = cost[basis_[static_cast<std::size_t>(i)]];
      const Eigen::VectorXd y = lu.transpose().solve(cb);
      const Eigen::VectorXd d = cost - A_.transpose() * y;

      const bool bland = degenerate >= opt_.degenerate_switch;
      int enter = -1;
      double dir = 0.0, best = 0.0;
      for (int j = 0; j < n_ + m_; ++j) {
        const At st = state_[static_cast<std::size_t>(j)];
        if (st == At::Basic || lo_[j] == hi_[j]) continue;
        double gain = 0.0, s = 0.0;
        if ((st == At::Lower || st == At::Zero) && d[j] < -opt_.optimality_tol) {
          gain = -d[j];
          s = 1.0;
        } else if ((st == At::Upper || st == At::Zero) && d[j] > opt_.optimality_tol) {
          gain = d[j];
          s = -1.0;
        }
        if (gain == 0.0) continue;
        if (bland) {
          enter = j;
          dir = s;
          break;
        }
        if (gain > best) {
          best = gain;
          enter = j;
          dir = s;
        }
      }
      if (enter < 0) return;  // optimal for this cost

      const Eigen::VectorXd w = lu.solve(A_.col(enter));
      // Entering moves by dir * theta; basic i moves by -dir * theta * w_i.
      double theta = hi_[enter] - lo_[enter];
      int leave = -1;
      double leave_piv = 0.0;
      for (int i = 0; i < m_; ++i) {
        const double rate = -dir * w[i];
        if (std::abs(rate) <= 1e-11) continue;
        const int bj = basis_[static_cast<std::size_t>(i)];
        double limit;
        if (rate < 0.0) {
          if (!std::isfinite(lo_[bj])) continue;
          limit = std::max(0.0, (x_[bj] - lo_[bj]) / -rate);
        } else {
          if (!std::isfinite(hi_[bj])) continue;
          limit = std::max(0.0, (hi_[bj] - x_[bj]) / rate);
        }
        const bool better = limit < theta - 1e-14 ||
                            (limit <= theta + 1e-14 && leave >= 0 &&
                             (bland ? bj < basis_[static_cast<std::size_t>(leave)] : std::abs(rate) > leave_piv));
        if (better || (leave < 0 && limit <= theta)) {
          theta = limit;
          leave = i;
          leave_piv = std::abs(rate);
        }
      }
      if (!std::isfinite(theta)) throw Error(ErrorKind::Unbounded, "LP objective is unbounded");
      degenerate = theta <= 1e-12 ? degenerate + 1 : 0;

      x_[enter] += dir * theta;
      if (leave < 0) {
        // bound flip
        state_[static_cast<std::size_t>(enter)] = dir > 0.0 ? At::Upper : At::Lower;
        x_[enter] = dir > 0.0 ? hi_[enter] : lo_[enter];
        continue;
      }
      const int out = basis_[static_cast<std::size_t>(leave)];
      const double rate = -dir * w[leave];
      if (rate < 0.0) {
        x_[out] = lo_[out];
        state_[static_cast<std::size_t>(out)] = At::Lower;
      } else {
        x_[out] = hi_[out];
        state_[static_cast<std::size_t>(out)] = At::Upper;
      }
      state_[static_cast<std::size_t>(enter)] = At::Basic;
      basis_[static_cast<std::size_t>(leave)] = enter;
    }
  }

  Options opt_;
  int m_ = 0, n_ = 0;
  Eigen::MatrixXd A_;
  Eigen::VectorXd b_, c_orig_, lo_, hi_, x_, row_scale_;
  std::vector<At> state_;
  std::vector<int> basis_;
  int iterations_ = 0;
};

}  // namespace detail

/// Throws Infeasible or Unbounded. The returned certificates refer to the
/// row-scaled problem the solver works on.
inline Solution solve(const Problem& p, const Options& opt = {}) {
  detail::Simplex s(p, opt);
  return s.solve();
}

}  // namespace iontrap::lp
