#pragma once

// Conic coefficient problem over a fixed set of atoms:
//
//   phi(lambda) = gamma/2 lambda^T G lambda - gamma g^T lambda + gamma/2 ||t||^2 + 1^T lambda,
//   lambda >= 0,
//
// with G_ij = <K mu_i, K mu_j>_Y and g_j = <K mu_j, t>_Y.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

namespace krgcg {

struct CoefficientProblem {
  Eigen::MatrixXd gram;      // G
  Eigen::VectorXd linear;    // g
  double gamma = 1.0;
  double target_norm2 = 0.0;  // ||t||_Y^2
  Eigen::VectorXd initial;   // feasible start, lambda >= 0

  Eigen::Index size() const { return linear.size(); }
};

struct CoefficientSolution {
  Eigen::VectorXd lambda;
  double objective = 0.0;
  double kkt_residual = 0.0;
  bool converged = false;
  int iterations = 0;
};

struct SubproblemSettings {
  double tol = -1.0;  // negative: 1e-12 * (1 + |phi(0)|)
  int max_iter = 20000;
  int power_iterations = 50;
  double lipschitz_safety = 1.05;
  bool active_set_polish = true;
  int stagnation_window = 500;  // stop after this many steps without objective decrease
};

inline double objective_value(const CoefficientProblem& prob, const Eigen::VectorXd& lambda) {
  return 0.5 * prob.gamma * lambda.dot(prob.gram * lambda) - prob.gamma * prob.linear.dot(lambda) +
         0.5 * prob.gamma * prob.target_norm2 + lambda.sum();
}

inline Eigen::VectorXd objective_gradient(const CoefficientProblem& prob, const Eigen::VectorXd& lambda) {
  return prob.gamma * (prob.gram * lambda - prob.linear) + Eigen::VectorXd::Ones(lambda.size());
}

/// max_j |min(lambda_j, d_j phi(lambda))|
inline double kkt_residual(const CoefficientProblem& prob, const Eigen::VectorXd& lambda) {
  const Eigen::VectorXd grad = objective_gradient(prob, lambda);
  double r = 0.0;
  for (Eigen::Index j = 0; j < lambda.size(); ++j) r = std::max(r, std::abs(std::min(lambda[j], grad[j])));
  return r;
}

namespace detail {

inline double power_lipschitz(const Eigen::MatrixXd& A, int iters) {
  if (A.rows() == 0) return 0.0;
  Eigen::VectorXd v = Eigen::VectorXd::Ones(A.rows()) / std::sqrt(static_cast<double>(A.rows()));
  double est = 0.0;
  for (int k = 0; k < iters; ++k) {
    const Eigen::VectorXd w = A * v;
    const double nw = w.norm();
    if (nw == 0.0) return 0.0;
    est = v.dot(w);
    v = w / nw;
  }
  return std::max(est, (A * v).norm());
}

// Lawson-Hanson active set from lambda = 0 on
//   min 1/2 l^T G l - b^T l,  l >= 0,  b = g - 1/gamma,
// which has the same minimizers as phi. The free Gram block is kept
// nonsingular: a column lying in the span of the free ones (G has rank at most
// the observation dimension) enters by an exchange along the null direction
// of G, on which the objective is linear.
inline Eigen::VectorXd lawson_hanson(const CoefficientProblem& prob, double tol, int max_rounds) {
  const Eigen::Index n = prob.size();
  const Eigen::VectorXd b = prob.linear - Eigen::VectorXd::Constant(n, 1.0 / prob.gamma);
  const double grad_tol = tol / prob.gamma;
  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(n);
  std::vector<Eigen::Index> P;
  std::vector<bool> in_p(static_cast<std::size_t>(n), false), blocked(static_cast<std::size_t>(n), false);

  // Solves G_PP s = rhs_P with one refinement step; nullopt if G_PP is singular.
  auto solve_p = [&](const Eigen::VectorXd& rhs) -> std::optional<Eigen::VectorXd> {
    const auto m = static_cast<Eigen::Index>(P.size());
    Eigen::MatrixXd Gp(m, m);
    Eigen::VectorXd bp(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      bp[i] = rhs[P[static_cast<std::size_t>(i)]];
      for (Eigen::Index j = 0; j < m; ++j) Gp(i, j) = prob.gram(P[static_cast<std::size_t>(i)], P[static_cast<std::size_t>(j)]);
    }
    const Eigen::LLT<Eigen::MatrixXd> llt(Gp);
    if (llt.info() != Eigen::Success) return std::nullopt;
    const Eigen::VectorXd d = Eigen::MatrixXd(llt.matrixL()).diagonal();
    if (m > 0 && d.minCoeff() <= 1e-7 * d.maxCoeff()) return std::nullopt;
    Eigen::VectorXd sp = llt.solve(bp);
    sp += llt.solve(bp - Gp * sp);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < m; ++i) out[P[static_cast<std::size_t>(i)]] = sp[i];
    return out;
  };
  auto add = [&](Eigen::Index j) {
    P.push_back(j);
    in_p[static_cast<std::size_t>(j)] = true;
  };
  auto drop = [&](Eigen::Index j) {
    P.erase(std::find(P.begin(), P.end(), j));
    in_p[static_cast<std::size_t>(j)] = false;
  };
  // Ratio test: largest t with lambda - t d >= 0 on P; -1 if unbounded.
  auto ratio = [&](const Eigen::VectorXd& dir, double& t) {
    Eigen::Index leaving = -1;
    t = std::numeric_limits<double>::infinity();
    for (Eigen::Index j : P) {
      if (dir[j] > 0.0 && lambda[j] / dir[j] < t) {
        t = lambda[j] / dir[j];
        leaving = j;
      }
    }
    return leaving;
  };

  for (int round = 0; round < max_rounds; ++round) {
    const Eigen::VectorXd w = b - prob.gram * lambda;
    Eigen::Index pick = -1;
    double best = grad_tol;
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto sj = static_cast<std::size_t>(j);
      if (!in_p[sj] && !blocked[sj] && w[j] > best) {
        best = w[j];
        pick = j;
      }
    }
    if (pick < 0) break;
    add(pick);
    auto s = solve_p(b);
    if (!s) {
      drop(pick);
      const auto d = solve_p(prob.gram.col(pick));
      double t = 0.0;
      const Eigen::Index leaving = d ? ratio(*d, t) : -1;
      if (leaving < 0) {
        blocked[static_cast<std::size_t>(pick)] = true;
        continue;
      }
      lambda -= t * (*d);
      lambda[pick] = t;
      lambda[leaving] = 0.0;
      drop(leaving);
      add(pick);
      s = solve_p(b);
      if (!s) {
        blocked[static_cast<std::size_t>(pick)] = true;
        continue;
      }
    }
    for (Eigen::Index inner = 0; inner <= n && s; ++inner) {
      Eigen::Index leaving = -1;
      double step = std::numeric_limits<double>::infinity();
      for (Eigen::Index j : P) {
        if ((*s)[j] <= 0.0) {
          const double denom = lambda[j] - (*s)[j];
          const double t = denom > 0.0 ? lambda[j] / denom : 0.0;
          if (t < step) {
            step = t;
            leaving = j;
          }
        }
      }
      if (leaving < 0) {
        lambda = *s;
        break;
      }
      lambda += std::min(step, 1.0) * (*s - lambda);
      lambda[leaving] = 0.0;
      for (std::size_t i = P.size(); i-- > 0;) {
        const Eigen::Index j = P[i];
        if (lambda[j] <= 0.0) {
          lambda[j] = 0.0;
          drop(j);
        }
      }
      s = solve_p(b);
    }
    std::fill(blocked.begin(), blocked.end(), false);
  }
  return lambda.cwiseMax(0.0);
}

}  // namespace detail

/// Accelerated projected gradient (FISTA with adaptive restart and
/// backtracking on the Lipschitz estimate). If that stalls above `tol`, an
/// exact active-set solve replaces it when it is at least as good. The
/// returned point never has a larger objective than the initial one beyond
/// rounding.
inline CoefficientSolution solve_coefficients(const CoefficientProblem& prob, const SubproblemSettings& settings = {}) {
  const Eigen::Index n = prob.size();
  CoefficientSolution out;
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(n);
  if (prob.initial.size() == n) x0 = prob.initial.cwiseMax(0.0);
  const double phi_zero = 0.5 * prob.gamma * prob.target_norm2;
  const double tol = settings.tol > 0.0 ? settings.tol : 1e-12 * (1.0 + std::abs(phi_zero));
  if (n == 0) {
    out.lambda = x0;
    out.objective = phi_zero;
    out.converged = true;
    return out;
  }

  double L = settings.lipschitz_safety * prob.gamma * detail::power_lipschitz(prob.gram, settings.power_iterations);
  L = std::max(L, 1e-12);

  Eigen::VectorXd x = x0, x_prev = x0, y = x0;
  double fx = objective_value(prob, x);
  double t = 1.0;
  int it = 0;
  double kkt = kkt_residual(prob, x);
  int stagnant = 0;
  for (; it < settings.max_iter && kkt > tol && stagnant < settings.stagnation_window; ++it) {
    const Eigen::VectorXd gy = objective_gradient(prob, y);
    const double fy = objective_value(prob, y);
    Eigen::VectorXd xn;
    for (;;) {
      xn = (y - gy / L).cwiseMax(0.0);
      const Eigen::VectorXd d = xn - y;
      if (objective_value(prob, xn) <= fy + gy.dot(d) + 0.5 * L * d.squaredNorm() + 1e-15 * (1.0 + std::abs(fy))) break;
      L *= 2.0;
    }
    const double fxn = objective_value(prob, xn);
    if (fxn > fx) {
      // Momentum overshoot: restart from the last accepted point.
      t = 1.0;
      y = x;
      continue;
    }
    stagnant = fx - fxn <= 1e-15 * (1.0 + std::abs(fx)) ? stagnant + 1 : 0;
    const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    x_prev = x;
    x = xn;
    fx = fxn;
    y = x + ((t - 1.0) / tn) * (x - x_prev);
    t = tn;
    kkt = kkt_residual(prob, x);
  }
  out.iterations = it;

  if (settings.active_set_polish && kkt > tol) {
    const Eigen::VectorXd refined = detail::lawson_hanson(prob, tol, static_cast<int>(5 * n + 20));
    const double fr = objective_value(prob, refined);
    const double kr = kkt_residual(prob, refined);
    if (fr <= fx + 1e-13 * (1.0 + std::abs(fx)) && kr < kkt) {
      x = refined;
      fx = fr;
      kkt = kr;
    }
  }

  // Monotone against the feasible start, up to rounding in phi.
  const double f0 = objective_value(prob, x0);
  if (fx > f0 + 1e-13 * (1.0 + std::abs(f0))) {
    x = x0;
    fx = f0;
    kkt = kkt_residual(prob, x);
  }
  out.lambda = x;
  out.objective = fx;
  out.kkt_residual = kkt;
  out.converged = kkt <= tol;
  return out;
}

}  // namespace krgcg
