#pragma once

// Dense two-phase tableau simplex for small standard-form LPs
//
//   minimize c^T x  subject to  A x = b,  x >= 0.
//
// Pricing is Dantzig's rule while pivots make progress; after a run of
// degenerate pivots it switches to Bland's rule, which cannot cycle. Once an
// optimal basis is found the basic solution is recomputed from a fresh LU
// factorization of the basis matrix, so accumulated tableau round-off does not
// leak into the reported point.

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "krgcg/error.hpp"

namespace krgcg::lp {

struct Problem {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  Eigen::VectorXd c;
};

enum class Status { optimal, infeasible, unbounded, iteration_limit };

struct Solution {
  Status status = Status::optimal;
  Eigen::VectorXd x;
  double objective = 0.0;
  std::vector<Eigen::Index> basis;
  long pivots = 0;
};

struct Settings {
  double pivot_tol = 1e-11;
  double cost_tol = 1e-12;
  double feas_tol = 1e-9;
  long max_pivots = 1'000'000;
  int degenerate_run_before_bland = 20;
};

namespace detail {

// Tableau layout: rows 0..m-1 are constraints, row m holds reduced costs;
// the last column is the right-hand side (and minus the objective in row m).
class Tableau {
 public:
  Tableau(Eigen::MatrixXd t, std::vector<Eigen::Index> basis, const Settings& s)
      : t_(std::move(t)), basis_(std::move(basis)), s_(s) {}

  Eigen::Index rows() const { return t_.rows() - 1; }
  Eigen::Index cols() const { return t_.cols() - 1; }
  Eigen::MatrixXd& data() { return t_; }
  std::vector<Eigen::Index>& basis() { return basis_; }
  long pivots() const { return pivots_; }

  void pivot(Eigen::Index r, Eigen::Index c) {
    t_.row(r) /= t_(r, c);
    for (Eigen::Index i = 0; i < t_.rows(); ++i) {
      if (i == r) continue;
      const double f = t_(i, c);
      if (f != 0.0) t_.row(i) -= f * t_.row(r);
    }
    t_(r, c) = 1.0;
    basis_[static_cast<std::size_t>(r)] = c;
    ++pivots_;
  }

  // Columns with index >= `allowed_cols` never enter.
  Status optimize(Eigen::Index allowed_cols) {
    const Eigen::Index m = rows();
    const Eigen::Index rhs = cols();
    int degenerate_run = 0;
    while (pivots_ < s_.max_pivots) {
      const bool bland = degenerate_run >= s_.degenerate_run_before_bland;
      Eigen::Index enter = -1;
      double best = -s_.cost_tol;
      for (Eigen::Index j = 0; j < allowed_cols; ++j) {
        const double rc = t_(m, j);
        if (rc < best) {
          enter = j;
          if (bland) break;
          best = rc;
        }
      }
      if (enter < 0) return Status::optimal;

      Eigen::Index leave = -1;
      double ratio = std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < m; ++i) {
        const double a = t_(i, enter);
        if (a <= s_.pivot_tol) continue;
        const double r = std::max(t_(i, rhs), 0.0) / a;
        if (r < ratio - 1e-15 ||
            (r <= ratio + 1e-15 && leave >= 0 &&
             basis_[static_cast<std::size_t>(i)] < basis_[static_cast<std::size_t>(leave)])) {
          ratio = std::min(ratio, r);
          leave = i;
        }
      }
      if (leave < 0) return Status::unbounded;
      degenerate_run = ratio <= 1e-14 ? degenerate_run + 1 : 0;
      pivot(leave, enter);
    }
    return Status::iteration_limit;
  }

 private:
  Eigen::MatrixXd t_;
  std::vector<Eigen::Index> basis_;
  const Settings& s_;
  long pivots_ = 0;
};

inline void price_out(Eigen::MatrixXd& t, const std::vector<Eigen::Index>& basis, const Eigen::VectorXd& cost) {
  const Eigen::Index m = t.rows() - 1;
  t.row(m).setZero();
  t.row(m).head(cost.size()) = cost.transpose();
  for (Eigen::Index i = 0; i < m; ++i) {
    const double cb = cost[basis[static_cast<std::size_t>(i)]];
    if (cb != 0.0) t.row(m) -= cb * t.row(i);
  }
}

}  // namespace detail

/// Solves the LP. `initial_basis`, when given, must name one column per row
/// whose basis matrix is nonsingular with a nonnegative basic solution; phase
/// one is then skipped.
inline Solution solve(const Problem& prob, std::optional<std::vector<Eigen::Index>> initial_basis = std::nullopt,
                      const Settings& settings = {}) {
  const Eigen::Index n = prob.A.cols();
  Eigen::Index m = prob.A.rows();
  if (prob.b.size() != m || prob.c.size() != n) throw Error(ErrorCode::lp_failure, "inconsistent LP dimensions");

  Solution out;
  long pivots = 0;
  Eigen::MatrixXd A = prob.A;
  Eigen::VectorXd b = prob.b;
  std::vector<Eigen::Index> basis;

  if (initial_basis) {
    basis = *initial_basis;
    if (static_cast<Eigen::Index>(basis.size()) != m) throw Error(ErrorCode::lp_failure, "initial basis has wrong size");
    Eigen::MatrixXd B(m, m);
    for (Eigen::Index i = 0; i < m; ++i) B.col(i) = A.col(basis[static_cast<std::size_t>(i)]);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(B);
    Eigen::MatrixXd t(m + 1, n + 1);
    t.topLeftCorner(m, n) = lu.solve(A);
    t.block(0, n, m, 1) = lu.solve(b);
    if ((t.block(0, n, m, 1).array() < -settings.feas_tol).any()) {
      throw Error(ErrorCode::lp_failure, "initial basis is not primal feasible");
    }
    detail::price_out(t, basis, prob.c);
    detail::Tableau tab(std::move(t), basis, settings);
    out.status = tab.optimize(n);
    pivots = tab.pivots();
    basis = tab.basis();
  } else {
    for (Eigen::Index i = 0; i < m; ++i) {
      if (b[i] < 0.0) {
        A.row(i) *= -1.0;
        b[i] = -b[i];
      }
    }
    // Phase one on [A | I] with artificial columns n..n+m-1.
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(m + 1, n + m + 1);
    t.topLeftCorner(m, n) = A;
    t.block(0, n, m, m).setIdentity();
    t.block(0, n + m, m, 1) = b;
    for (Eigen::Index i = 0; i < m; ++i) basis.push_back(n + i);
    Eigen::VectorXd phase1_cost = Eigen::VectorXd::Zero(n + m);
    phase1_cost.tail(m).setOnes();
    detail::price_out(t, basis, phase1_cost);
    detail::Tableau tab1(std::move(t), basis, settings);
    const Status s1 = tab1.optimize(n + m);
    pivots += tab1.pivots();
    if (s1 != Status::optimal) {
      out.status = s1 == Status::unbounded ? Status::infeasible : s1;
      out.pivots = pivots;
      return out;
    }
    const double infeas = -tab1.data()(m, n + m);
    if (infeas > settings.feas_tol * (1.0 + b.lpNorm<1>())) {
      out.status = Status::infeasible;
      out.pivots = pivots;
      return out;
    }
    // Drive remaining artificials out of the basis; rows where that is
    // impossible are linear combinations of the others and are dropped.
    std::vector<Eigen::Index> keep_rows;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (tab1.basis()[static_cast<std::size_t>(i)] < n) {
        keep_rows.push_back(i);
        continue;
      }
      Eigen::Index col = -1;
      double best = settings.pivot_tol;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (std::abs(tab1.data()(i, j)) > best) {
          best = std::abs(tab1.data()(i, j));
          col = j;
        }
      }
      if (col >= 0) {
        tab1.pivot(i, col);
        keep_rows.push_back(i);
      }
    }
    pivots = tab1.pivots();
    const auto mk = static_cast<Eigen::Index>(keep_rows.size());
    Eigen::MatrixXd t2(mk + 1, n + 1);
    std::vector<Eigen::Index> basis2;
    Eigen::MatrixXd A2(mk, n);
    Eigen::VectorXd b2(mk);
    for (Eigen::Index k = 0; k < mk; ++k) {
      const Eigen::Index i = keep_rows[static_cast<std::size_t>(k)];
      t2.row(k).head(n) = tab1.data().row(i).head(n);
      t2(k, n) = tab1.data()(i, n + m);
      basis2.push_back(tab1.basis()[static_cast<std::size_t>(i)]);
      A2.row(k) = A.row(i);
      b2[k] = b[i];
    }
    detail::price_out(t2, basis2, prob.c);
    detail::Tableau tab2(std::move(t2), basis2, settings);
    out.status = tab2.optimize(n);
    pivots += tab2.pivots();
    basis = tab2.basis();
    A = std::move(A2);
    b = std::move(b2);
    m = mk;
  }

  out.pivots = pivots;
  out.basis = basis;
  if (out.status != Status::optimal) return out;

  Eigen::MatrixXd B(m, m);
  for (Eigen::Index i = 0; i < m; ++i) B.col(i) = A.col(basis[static_cast<std::size_t>(i)]);
  const Eigen::VectorXd xb = Eigen::PartialPivLU<Eigen::MatrixXd>(B).solve(b);
  out.x = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < m; ++i) out.x[basis[static_cast<std::size_t>(i)]] = std::max(xb[i], 0.0);
  out.objective = prob.c.dot(out.x);
  return out;
}

}  // namespace krgcg::lp
