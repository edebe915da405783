#pragma once

// Dual certificate q = -K_* grad F(K mu) for the quadratic fidelity, the
// transport quotient
//
//   Psi_q(x, y) = (q(x) - q(y)) / (|x - y|^p + beta),
//
// their exact derivatives, and heuristic global maximization of |q| over Omega
// and of Psi_q over Omega x Omega.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "krgcg/measures.hpp"
#include "krgcg/multistart.hpp"
#include "krgcg/operators.hpp"

namespace krgcg {

/// F(v) = gamma/2 * ||v - target||_Y^2, with target = y - K mu_r.
struct QuadraticFidelity {
  double gamma = 1.0;
  ObservationVector target;

  QuadraticFidelity(double g, ObservationVector t) : gamma(g), target(std::move(t)) {
    if (!(gamma > 0.0)) throw Error(ErrorCode::invalid_params, "fidelity weight gamma must be positive");
  }

  template <ForwardOperator Op>
  double value(const Op& op, const ObservationVector& v) const {
    const Eigen::VectorXd r = v.values - target.values;
    return 0.5 * gamma * op.inner(r, r);
  }
};

/// q(z) = -gamma * (K_* r)(z) with r = K mu - target.
template <ForwardOperator Op>
class DualCertificate {
 public:
  static constexpr int dim = Op::dim;
  using PairJet = Jet<2 * Op::dim>;

  DualCertificate(const Op& op, double gamma, Eigen::VectorXd residual)
      : op_(&op), gamma_(gamma), residual_(std::move(residual)), coeffs_(-gamma_ * residual_) {}

  const Op& op() const { return *op_; }
  double gamma() const { return gamma_; }
  const Eigen::VectorXd& residual() const { return residual_; }
  bool is_zero() const { return coeffs_.isZero(0.0); }

  Jet<dim> q_jet(const Point<dim>& z, int order = 2) const { return op_->adjoint_jet(coeffs_, z, order); }
  double q_value(const Point<dim>& z) const { return q_jet(z, 0).value; }
  Point<dim> q_grad(const Point<dim>& z) const { return q_jet(z, 1).grad; }
  Eigen::Matrix<double, dim, dim> q_hess(const Point<dim>& z) const { return q_jet(z, 2).hess; }

  double psi_value(const KRParams& params, const Point<dim>& x, const Point<dim>& y) const {
    if (x == y) return 0.0;
    return (q_value(x) - q_value(y)) / params.transport_cost(distance<dim>(x, y));
  }

  /// Value and derivatives of Psi in the stacked variable (x, y). Throws
  /// diagonal-singularity inside the tube |x - y| < diag_tube.
  PairJet psi_jet(const KRParams& params, const Point<dim>& x, const Point<dim>& y, int order = 2,
                  double diag_tube = 1e-12) const {
    constexpr int n = dim;
    const Point<n> u = x - y;
    const double r = u.norm();
    PairJet out;
    if (order >= 1 && !(r >= diag_tube && r > 0.0)) {
      throw Error(ErrorCode::diagonal_singularity, "Psi derivatives requested inside the diagonal tube");
    }
    const Jet<n> qx = q_jet(x, order);
    const Jet<n> qy = q_jet(y, order);
    const double N = qx.value - qy.value;
    const double D = params.beta + std::pow(r, params.p);
    out.value = r > 0.0 ? N / D : 0.0;
    if (order < 1) return out;

    const double p = params.p;
    Eigen::Matrix<double, 2 * n, 1> dN, dD;
    dN << qx.grad, -qy.grad;
    const Point<n> a = p * std::pow(r, p - 2.0) * u;
    dD << a, -a;
    out.grad = dN / D - N * dD / (D * D);
    if (order < 2) return out;

    Eigen::Matrix<double, 2 * n, 2 * n> hN = Eigen::Matrix<double, 2 * n, 2 * n>::Zero();
    hN.template topLeftCorner<n, n>() = qx.hess;
    hN.template bottomRightCorner<n, n>() = -qy.hess;
    const Eigen::Matrix<double, n, n> H = p * std::pow(r, p - 2.0) * Eigen::Matrix<double, n, n>::Identity() +
                                          p * (p - 2.0) * std::pow(r, p - 4.0) * (u * u.transpose());
    Eigen::Matrix<double, 2 * n, 2 * n> hD;
    hD << H, -H, -H, H;
    out.hess = hN / D - (dN * dD.transpose() + dD * dN.transpose()) / (D * D) - N * hD / (D * D) +
               2.0 * N * (dD * dD.transpose()) / (D * D * D);
    return out;
  }

  Eigen::Matrix<double, 2 * dim, 1> psi_grad(const KRParams& params, const Point<dim>& x, const Point<dim>& y,
                                             double diag_tube = 1e-12) const {
    return psi_jet(params, x, y, 1, diag_tube).grad;
  }
  Eigen::Matrix<double, 2 * dim, 2 * dim> psi_hess(const KRParams& params, const Point<dim>& x, const Point<dim>& y,
                                                   double diag_tube = 1e-12) const {
    return psi_jet(params, x, y, 2, diag_tube).hess;
  }

 private:
  const Op* op_;
  double gamma_;
  Eigen::VectorXd residual_;
  Eigen::VectorXd coeffs_;
};

template <ForwardOperator Op, int Dim = Op::dim>
DualCertificate<Op> build_certificate(const Op& op, const QuadraticFidelity& fidelity, const DiscreteMeasure<Dim>& mu) {
  Eigen::VectorXd r = op.apply(mu).values - fidelity.target.values;
  return DualCertificate<Op>(op, fidelity.gamma, std::move(r));
}

struct MaximizerSettings {
  int q_seeds = 256;             // uniform seed points on Omega (per-axis count is the Dim-th root)
  int pair_points = 64;          // seed points per factor of Omega x Omega
  int pair_keep = 512;           // seed pairs kept after ranking by Psi
  double diag_tube_fraction = 1e-8;
  search::MultistartSettings multistart;
};

template <int N>
struct MaximizerReport {
  search::Vec<N> argmax = search::Vec<N>::Zero();
  double value = 0.0;
  int starts = 0;
  int converged = 0;
  std::vector<search::LocalMaximum<N>> local_maxima;

  /// Distinct maxima within `tol` of the best value.
  int near_global(double tol) const {
    return static_cast<int>(std::count_if(local_maxima.begin(), local_maxima.end(),
                                          [&](const auto& m) { return m.value >= value - tol; }));
  }
};

namespace detail {

template <int Dim>
std::vector<Point<Dim>> uniform_points(const Domain<Dim>& domain, int total) {
  const int per_axis = std::max(2, static_cast<int>(std::lround(std::pow(static_cast<double>(total), 1.0 / Dim))));
  std::vector<Point<Dim>> pts;
  auto coord = [&](int axis, int i) {
    return domain.lower[axis] + (domain.upper[axis] - domain.lower[axis]) * i / (per_axis - 1.0);
  };
  if constexpr (Dim == 1) {
    for (int i = 0; i < per_axis; ++i) pts.push_back(Point<1>::Constant(coord(0, i)));
  } else {
    for (int j = 0; j < per_axis; ++j) {
      for (int i = 0; i < per_axis; ++i) pts.push_back(Point<2>(coord(0, i), coord(1, j)));
    }
  }
  return pts;
}

// Indices of grid points not exceeded by any grid neighbour (8-neighbourhood in 2D).
template <int Dim>
std::vector<std::size_t> grid_local_maxima(const std::vector<double>& v) {
  std::vector<std::size_t> out;
  const auto total = static_cast<long>(v.size());
  const long n = Dim == 1 ? total : std::lround(std::sqrt(static_cast<double>(total)));
  for (long k = 0; k < total; ++k) {
    const long i = k % n, j = Dim == 1 ? 0 : k / n;
    bool is_max = true;
    for (long dj = (Dim == 1 ? 0 : -1); dj <= (Dim == 1 ? 0 : 1) && is_max; ++dj) {
      for (long di = -1; di <= 1; ++di) {
        if (di == 0 && dj == 0) continue;
        const long ii = i + di, jj = j + dj;
        if (ii < 0 || ii >= n || jj < 0 || jj >= (Dim == 1 ? 1 : n)) continue;
        if (v[static_cast<std::size_t>(jj * n + ii)] > v[static_cast<std::size_t>(k)]) {
          is_max = false;
          break;
        }
      }
    }
    if (is_max) out.push_back(static_cast<std::size_t>(k));
  }
  return out;
}

template <int Dim>
search::Box<Dim> point_box(const Domain<Dim>& d) {
  return {d.lower, d.upper};
}

template <int Dim>
search::Box<2 * Dim> pair_box(const Domain<Dim>& d) {
  search::Box<2 * Dim> b;
  b.lower << d.lower, d.lower;
  b.upper << d.upper, d.upper;
  return b;
}

// Clamp to Omega x Omega and push the pair out of the diagonal tube.
template <int Dim>
search::Vec<2 * Dim> project_pair(const Domain<Dim>& domain, const search::Vec<2 * Dim>& v, double tube) {
  Point<Dim> x = domain.clamp(v.template head<Dim>());
  Point<Dim> y = domain.clamp(v.template tail<Dim>());
  const double r = (x - y).norm();
  if (r < tube) {
    Point<Dim> dir = Point<Dim>::Zero();
    if (r > 0.0) {
      dir = (x - y) / r;
    } else {
      dir[0] = 1.0;
    }
    const Point<Dim> mid = 0.5 * (x + y);
    x = mid + 0.5 * tube * dir;
    y = mid - 0.5 * tube * dir;
    Point<Dim> shift = Point<Dim>::Zero();
    for (int a = 0; a < Dim; ++a) {
      const double lo = std::min(x[a], y[a]), hi = std::max(x[a], y[a]);
      if (lo < domain.lower[a]) shift[a] = domain.lower[a] - lo;
      if (hi > domain.upper[a]) shift[a] = domain.upper[a] - hi;
    }
    x += shift;
    y += shift;
  }
  search::Vec<2 * Dim> out;
  out << x, y;
  return out;
}

}  // namespace detail

/// Multistart ascent of |q| from the discrete local maxima of |q| on a uniform
/// seed grid, followed by perturbation rounds.
template <ForwardOperator Op, int Dim = Op::dim>
MaximizerReport<Dim> maximize_abs_q(const DualCertificate<Op>& cert, const Domain<Dim>& domain,
                                    const MaximizerSettings& settings = {}) {
  MaximizerReport<Dim> rep;
  const auto grid = detail::uniform_points<Dim>(domain, settings.q_seeds);
  std::vector<double> vals(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) vals[i] = std::abs(cert.q_value(grid[i]));
  if (cert.is_zero()) {
    rep.argmax = grid.front();
    return rep;
  }
  std::vector<search::Vec<Dim>> seeds;
  for (std::size_t k : detail::grid_local_maxima<Dim>(vals)) seeds.push_back(grid[k]);

  const auto box = detail::point_box<Dim>(domain);
  auto f = [&](const search::Vec<Dim>& z) {
    const Jet<Dim> j = cert.q_jet(z, 1);
    const double s = j.value >= 0.0 ? 1.0 : -1.0;
    return search::ValueGrad<Dim>{s * j.value, s * j.grad};
  };
  auto project = [&](const search::Vec<Dim>& z) { return domain.clamp(z); };
  auto outcome = search::multistart<Dim>(f, project, box, seeds, settings.multistart);
  rep.starts = outcome.starts;
  rep.converged = outcome.converged;
  rep.local_maxima = std::move(outcome.maxima);
  if (!rep.local_maxima.empty()) {
    rep.argmax = rep.local_maxima.front().x;
    rep.value = std::abs(cert.q_value(rep.argmax));
  }
  return rep;
}

/// Multistart ascent of Psi over Omega x Omega. Seeds are the best pairs of a
/// uniform point set together with pairs of local maxima and minima of q on
/// the finer |q| seed grid, ranked by Psi.
template <ForwardOperator Op, int Dim = Op::dim>
MaximizerReport<2 * Dim> maximize_psi(const DualCertificate<Op>& cert, const KRParams& params,
                                      const Domain<Dim>& domain, const MaximizerSettings& settings = {}) {
  constexpr int N = 2 * Dim;
  MaximizerReport<N> rep;
  const double tube = settings.diag_tube_fraction * domain.diameter();
  if (cert.is_zero()) {
    rep.argmax = detail::project_pair<Dim>(domain, search::Vec<N>::Zero(), tube);
    return rep;
  }

  struct Candidate {
    double value;
    Point<Dim> x, y;
  };
  std::vector<Candidate> cands;
  auto add_pairs = [&](const std::vector<Point<Dim>>& xs, const std::vector<double>& qx, const std::vector<Point<Dim>>& ys,
                       const std::vector<double>& qy) {
    for (std::size_t i = 0; i < xs.size(); ++i) {
      for (std::size_t j = 0; j < ys.size(); ++j) {
        const double r = distance<Dim>(xs[i], ys[j]);
        if (r < tube) continue;
        cands.push_back({(qx[i] - qy[j]) / params.transport_cost(r), xs[i], ys[j]});
      }
    }
  };
  const auto pts = detail::uniform_points<Dim>(domain, settings.pair_points);
  std::vector<double> qp(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) qp[i] = cert.q_value(pts[i]);
  add_pairs(pts, qp, pts, qp);

  const auto fine = detail::uniform_points<Dim>(domain, settings.q_seeds);
  std::vector<double> qf(fine.size()), neg(fine.size());
  for (std::size_t i = 0; i < fine.size(); ++i) {
    qf[i] = cert.q_value(fine[i]);
    neg[i] = -qf[i];
  }
  std::vector<Point<Dim>> hi_pts, lo_pts;
  std::vector<double> hi_q, lo_q;
  for (std::size_t k : detail::grid_local_maxima<Dim>(qf)) {
    hi_pts.push_back(fine[k]);
    hi_q.push_back(qf[k]);
  }
  for (std::size_t k : detail::grid_local_maxima<Dim>(neg)) {
    lo_pts.push_back(fine[k]);
    lo_q.push_back(qf[k]);
  }
  add_pairs(hi_pts, hi_q, lo_pts, lo_q);

  const auto keep = std::min<std::size_t>(cands.size(), static_cast<std::size_t>(settings.pair_keep));
  std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                    [](const Candidate& a, const Candidate& b) {
                      if (a.value != b.value) return a.value > b.value;
                      if (a.x[0] != b.x[0]) return a.x[0] < b.x[0];
                      return a.y[0] < b.y[0];
                    });
  std::vector<search::Vec<N>> seeds;
  for (std::size_t i = 0; i < keep; ++i) {
    search::Vec<N> v;
    v << cands[i].x, cands[i].y;
    seeds.push_back(v);
  }

  const auto box = detail::pair_box<Dim>(domain);
  auto f = [&](const search::Vec<N>& v) {
    const auto j = cert.psi_jet(params, v.template head<Dim>(), v.template tail<Dim>(), 1, 0.5 * tube);
    return search::ValueGrad<N>{j.value, j.grad};
  };
  auto project = [&](const search::Vec<N>& v) { return detail::project_pair<Dim>(domain, v, tube); };
  auto outcome = search::multistart<N>(f, project, box, seeds, settings.multistart);
  rep.starts = outcome.starts;
  rep.converged = outcome.converged;
  rep.local_maxima = std::move(outcome.maxima);
  if (!rep.local_maxima.empty()) {
    rep.argmax = rep.local_maxima.front().x;
    rep.value = cert.psi_value(params, rep.argmax.template head<Dim>(), rep.argmax.template tail<Dim>());
  }
  return rep;
}

}  // namespace krgcg
