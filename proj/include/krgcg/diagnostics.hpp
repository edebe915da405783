#pragma once

// Post-hoc checks on a solver result: first-order optimality of the final
// measure, the quantities behind the local linear-rate assumptions, and a
// fitted tail rate of the approximate residual.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "krgcg/agcg.hpp"
#include "krgcg/certificate.hpp"
#include "krgcg/measures.hpp"
#include "krgcg/operators.hpp"

namespace krgcg {

template <int Dim>
struct DiracGap {
  Point<Dim> z;
  int sign = 1;
  double q = 0.0;
  double gap = 0.0;  // |q(z)| - alpha
  bool sign_ok = true;
};

template <int Dim>
struct DipoleGap {
  Point<Dim> x, y;
  double psi = 0.0;
  double gap = 0.0;  // 1 - Psi(x, y)
};

template <int Dim>
struct OptimalityReport {
  double tol = 0.0;
  std::vector<DiracGap<Dim>> diracs;
  std::vector<DipoleGap<Dim>> dipoles;
  double max_abs_q_over_alpha = 0.0;
  double max_psi = 0.0;
  bool pass = false;
};

/// Rebuilds the certificate from the final measure and checks that every
/// active atom sits on the boundary of the dual ball while the global maxima
/// stay below 1 + tol.
template <ForwardOperator Op, int Dim = Op::dim>
OptimalityReport<Dim> check_first_order(const SolveResult<Dim>& result, const Op& op,
                                        const QuadraticFidelity& fidelity, const KRParams& params,
                                        const Domain<Dim>& domain, double tol,
                                        const MaximizerSettings& settings = {}) {
  OptimalityReport<Dim> rep;
  rep.tol = tol;
  const auto cert = build_certificate(op, fidelity, result.measure);
  bool ok = true;
  for (const auto& atom : result.active.atoms) {
    if (const auto* d = std::get_if<DiracAtom<Dim>>(&atom)) {
      DiracGap<Dim> g;
      g.z = d->z;
      g.sign = d->sign;
      g.q = cert.q_value(d->z);
      g.gap = std::abs(g.q) - params.alpha;
      g.sign_ok = g.q * d->sign > 0.0;
      ok = ok && g.sign_ok && std::abs(g.gap) <= tol * params.alpha;
      rep.diracs.push_back(g);
    } else {
      const auto& p = std::get<DipoleAtom<Dim>>(atom);
      DipoleGap<Dim> g;
      g.x = p.x;
      g.y = p.y;
      g.psi = cert.psi_value(params, p.x, p.y);
      g.gap = 1.0 - g.psi;
      ok = ok && std::abs(g.gap) <= tol;
      rep.dipoles.push_back(g);
    }
  }
  rep.max_abs_q_over_alpha = maximize_abs_q(cert, domain, settings).value / params.alpha;
  rep.max_psi = maximize_psi(cert, params, domain, settings).value;
  rep.pass = ok && rep.max_abs_q_over_alpha <= 1.0 + tol && rep.max_psi <= 1.0 + tol;
  return rep;
}

template <int Dim>
struct DiracCurvature {
  Point<Dim> z;
  double lambda = 0.0;
  double det_hess = 0.0;
  bool definite = false;  // negative definite for a maximum of sign * q
};

template <int Dim>
struct DipoleCurvature {
  Point<Dim> x, y;
  double lambda = 0.0;
  double det_hess = 0.0;
  bool definite = false;  // Hessian of Psi negative definite
};

template <int Dim>
struct AssumptionReport {
  double gamma = 0.0;
  bool strong_convexity_structural = true;  // quadratic fidelity: constant curvature gamma
  std::vector<DiracCurvature<Dim>> diracs;
  std::vector<DipoleCurvature<Dim>> dipoles;
  std::vector<double> singular_values;           // columns K(atom) over all active atoms
  std::vector<double> clustered_singular_values;  // one column per distinct critical point
  double condition_number = std::numeric_limits<double>::infinity();
  double min_lambda = 0.0;
  int distinct_diracs = 0;   // N1
  int distinct_dipoles = 0;  // N2
  int near_global_q = 0;     // distinct maxima of |q| / alpha within 1e-6 of the global
  int near_global_psi = 0;
};

namespace detail {

template <int N>
bool negative_definite(const Eigen::Matrix<double, N, N>& H) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, N, N>> es(0.5 * (H + H.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff() < 0.0;
}

inline std::vector<double> singular_values(const Eigen::MatrixXd& M) {
  std::vector<double> out;
  if (M.cols() == 0) return out;
  const Eigen::VectorXd s = Eigen::JacobiSVD<Eigen::MatrixXd>(M).singularValues();
  out.assign(s.data(), s.data() + s.size());
  return out;
}

// Y-orthonormal coordinates: rows scaled by sqrt of the inner-product weights,
// so singular values are those of the operator columns in Y.
template <ForwardOperator Op>
Eigen::MatrixXd weighted_columns(const Op& op, const std::vector<Eigen::VectorXd>& cols) {
  const Eigen::Index m = op.observation_size();
  Eigen::VectorXd scale(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(m);
    e[i] = 1.0;
    scale[i] = std::sqrt(op.inner(e, e));
  }
  Eigen::MatrixXd M(m, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) M.col(static_cast<Eigen::Index>(j)) = scale.cwiseProduct(cols[j]);
  return M;
}

}  // namespace detail

/// Curvature of the certificate at the active atoms, conditioning of the
/// observation columns and strict-complementarity margin. Atoms of one kind
/// closer than `cluster_fraction * diam(Omega)` count as one critical point.
template <ForwardOperator Op, int Dim = Op::dim>
AssumptionReport<Dim> check_linear_assumptions(const SolveResult<Dim>& result, const Op& op,
                                               const QuadraticFidelity& fidelity, const KRParams& params,
                                               const Domain<Dim>& domain, const MaximizerSettings& settings = {},
                                               double cluster_fraction = 1e-3) {
  AssumptionReport<Dim> rep;
  rep.gamma = fidelity.gamma;
  const auto cert = build_certificate(op, fidelity, result.measure);
  const double tube = 1e-12 * std::max(1.0, domain.diameter());
  const auto& atoms = result.active.atoms;
  const auto& lambdas = result.active.lambdas;

  std::vector<Eigen::VectorXd> cols;
  for (std::size_t j = 0; j < atoms.size(); ++j) {
    cols.push_back(gram_column(op, atoms[j], params).values);
    if (const auto* d = std::get_if<DiracAtom<Dim>>(&atoms[j])) {
      const Eigen::Matrix<double, Dim, Dim> H = d->sign * cert.q_hess(d->z);
      rep.diracs.push_back({d->z, lambdas[j], H.determinant(), detail::negative_definite<Dim>(H)});
    } else {
      const auto& p = std::get<DipoleAtom<Dim>>(atoms[j]);
      const auto H = cert.psi_hess(params, p.x, p.y, tube);
      rep.dipoles.push_back({p.x, p.y, lambdas[j], H.determinant(), detail::negative_definite<2 * Dim>(H)});
    }
  }
  rep.min_lambda = lambdas.empty() ? 0.0 : *std::min_element(lambdas.begin(), lambdas.end());
  rep.singular_values = detail::singular_values(detail::weighted_columns(op, cols));

  // Representative per cluster: the atom carrying the largest coefficient.
  const double radius = cluster_fraction * domain.diameter();
  std::vector<std::size_t> reps;
  for (std::size_t j = 0; j < atoms.size(); ++j) {
    bool merged = false;
    for (auto& r : reps) {
      if (same_atom<Dim>(atoms[r], atoms[j], radius)) {
        if (lambdas[j] > lambdas[r]) r = j;
        merged = true;
        break;
      }
    }
    if (!merged) reps.push_back(j);
  }
  std::vector<Eigen::VectorXd> rep_cols;
  for (std::size_t r : reps) {
    rep_cols.push_back(cols[r]);
    if (is_dirac<Dim>(atoms[r])) {
      ++rep.distinct_diracs;
    } else {
      ++rep.distinct_dipoles;
    }
  }
  rep.clustered_singular_values = detail::singular_values(detail::weighted_columns(op, rep_cols));
  if (!rep.clustered_singular_values.empty() && rep.clustered_singular_values.back() > 0.0) {
    rep.condition_number = rep.clustered_singular_values.front() / rep.clustered_singular_values.back();
  }

  if (!cert.is_zero()) {
    const auto qr = maximize_abs_q(cert, domain, settings);
    const auto pr = maximize_psi(cert, params, domain, settings);
    rep.near_global_q = qr.near_global(1e-6 * params.alpha);
    rep.near_global_psi = pr.near_global(1e-6);
  }
  return rep;
}

struct TailRate {
  double slope = 0.0;
  double r_squared = 0.0;
  int points = 0;
};

/// Least-squares line through (k, log r_hat) over the last third of the
/// records, keeping only records with r_hat > 0.
inline TailRate fit_tail_rate(const std::vector<IterateRecord>& history) {
  if (history.size() < 9) throw Error(ErrorCode::insufficient_data, "tail fit needs at least 9 records");
  const std::size_t start = history.size() - history.size() / 3;
  std::vector<double> xs, ys;
  for (std::size_t i = start; i < history.size(); ++i) {
    if (history[i].r_hat > 0.0) {
      xs.push_back(static_cast<double>(history[i].k));
      ys.push_back(std::log(history[i].r_hat));
    }
  }
  if (xs.size() < 2) throw Error(ErrorCode::insufficient_data, "fewer than two positive residuals in the tail");
  const auto n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  TailRate out;
  out.points = static_cast<int>(xs.size());
  out.slope = sxx > 0.0 ? sxy / sxx : 0.0;
  out.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return out;
}

}  // namespace krgcg
