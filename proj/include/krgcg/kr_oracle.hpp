#pragma once

// Exact evaluation of the transport cost W_p and of the generalized
// Kantorovich-Rubinstein norm for finitely supported measures.
//
// For a measure mu = sum_i w_i delta_{z_i} the norm is the value of the LP
//
//   minimize   alpha * sum_i (a+_i + a-_i) + sum_{i != j} b_ij (beta + |z_i - z_j|^p)
//   subject to w_i = a+_i - a-_i + sum_j (b_ij - b_ji),   a, b >= 0,
//
// where b_ij is mass sent from atom i (positive side) to atom j (negative side)
// and a_i = a+_i - a-_i is the mass created or destroyed at atom i. The
// balanced part of the decomposition is restricted to supp(mu).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "krgcg/measures.hpp"
#include "krgcg/simplex.hpp"

namespace krgcg {

struct KRWitness {
  std::vector<double> creation;  // a_i, indexed like the coalesced input atoms
  TransportPlan plan;            // source -> target indices into the same atom list
  double value = 0.0;
};

template <int Dim>
struct KRNormResult {
  double value = 0.0;
  KRWitness witness;
  DiscreteMeasure<Dim> support;  // coalesced input, the index set of the witness
};

struct WassersteinResult {
  double value = 0.0;
  TransportPlan plan;  // source indexes mu_plus, target indexes mu_minus
};

template <int Dim>
WassersteinResult wasserstein_p(const DiscreteMeasure<Dim>& mu_plus, const DiscreteMeasure<Dim>& mu_minus, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw Error(ErrorCode::invalid_params, "p must lie in (0, 1]");
  double mp = 0.0, mm = 0.0;
  for (const auto& a : mu_plus.atoms) {
    if (a.w < 0.0) throw Error(ErrorCode::negative_weight, "mu_plus has a negative atom");
    mp += a.w;
  }
  for (const auto& a : mu_minus.atoms) {
    if (a.w < 0.0) throw Error(ErrorCode::negative_weight, "mu_minus has a negative atom");
    mm += a.w;
  }
  if (std::abs(mp - mm) > 1e-12 * std::max({1.0, mp, mm})) {
    throw Error(ErrorCode::unbalanced_input, "measures carry different total mass");
  }
  WassersteinResult out;
  const auto ns = static_cast<Eigen::Index>(mu_plus.size());
  const auto nt = static_cast<Eigen::Index>(mu_minus.size());
  if (ns == 0 || nt == 0 || mp == 0.0) return out;

  lp::Problem prob;
  prob.A = Eigen::MatrixXd::Zero(ns + nt, ns * nt);
  prob.b.resize(ns + nt);
  prob.c.resize(ns * nt);
  for (Eigen::Index i = 0; i < ns; ++i) {
    prob.b[i] = mu_plus.atoms[static_cast<std::size_t>(i)].w;
    for (Eigen::Index j = 0; j < nt; ++j) {
      const Eigen::Index k = i * nt + j;
      prob.A(i, k) = 1.0;
      prob.A(ns + j, k) = 1.0;
      prob.c[k] = std::pow(distance<Dim>(mu_plus.atoms[static_cast<std::size_t>(i)].x,
                                         mu_minus.atoms[static_cast<std::size_t>(j)].x),
                           p);
    }
  }
  // Rescale the target side so both marginals sum to exactly the same value.
  for (Eigen::Index j = 0; j < nt; ++j) prob.b[ns + j] = mu_minus.atoms[static_cast<std::size_t>(j)].w * (mp / mm);

  const lp::Solution sol = lp::solve(prob);
  if (sol.status != lp::Status::optimal) throw Error(ErrorCode::lp_failure, "transport LP did not reach optimality");
  out.value = sol.objective;
  for (Eigen::Index i = 0; i < ns; ++i) {
    for (Eigen::Index j = 0; j < nt; ++j) {
      const double mass = sol.x[i * nt + j];
      // Mass that stays in place is not a transport.
      if (mass > 0.0 && prob.c[i * nt + j] > 0.0) {
        out.plan.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), mass});
      }
    }
  }
  return out;
}

template <int Dim>
KRNormResult<Dim> kr_norm(const DiscreteMeasure<Dim>& mu, const KRParams& params) {
  params.validate();
  KRNormResult<Dim> out;
  out.support = coalesce(mu, 0.0);
  const auto& atoms = out.support.atoms;
  const auto n = static_cast<Eigen::Index>(atoms.size());
  out.witness.creation.assign(atoms.size(), 0.0);
  if (n == 0) return out;

  // Columns: a+_i (0..n-1), a-_i (n..2n-1), then b_ij for i != j.
  const Eigen::Index nb = n * (n - 1);
  lp::Problem prob;
  prob.A = Eigen::MatrixXd::Zero(n, 2 * n + nb);
  prob.b.resize(n);
  prob.c.resize(2 * n + nb);
  std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
  pairs.reserve(static_cast<std::size_t>(nb));
  for (Eigen::Index i = 0; i < n; ++i) {
    prob.b[i] = atoms[static_cast<std::size_t>(i)].w;
    prob.A(i, i) = 1.0;
    prob.A(i, n + i) = -1.0;
    prob.c[i] = params.alpha;
    prob.c[n + i] = params.alpha;
  }
  Eigen::Index col = 2 * n;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      prob.A(i, col) = 1.0;
      prob.A(j, col) = -1.0;
      prob.c[col] = params.transport_cost(
          distance<Dim>(atoms[static_cast<std::size_t>(i)].x, atoms[static_cast<std::size_t>(j)].x));
      pairs.emplace_back(i, j);
      ++col;
    }
  }
  // Pure creation is always a feasible vertex.
  std::vector<Eigen::Index> basis(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) basis[static_cast<std::size_t>(i)] = prob.b[i] >= 0.0 ? i : n + i;

  const lp::Solution sol = lp::solve(prob, basis);
  if (sol.status != lp::Status::optimal) throw Error(ErrorCode::lp_failure, "norm LP did not reach optimality");

  double value = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = sol.x[i] - sol.x[n + i];
    out.witness.creation[static_cast<std::size_t>(i)] = a;
    value += params.alpha * std::abs(a);
  }
  for (Eigen::Index k = 0; k < nb; ++k) {
    const double mass = sol.x[2 * n + k];
    if (mass <= 0.0) continue;
    const auto [i, j] = pairs[static_cast<std::size_t>(k)];
    out.witness.plan.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), mass});
    value += mass * prob.c[2 * n + k];
  }
  out.witness.value = value;
  out.value = value;
  return out;
}

/// Largest violation of the balance and value identities of a witness.
template <int Dim>
double witness_defect(const KRNormResult<Dim>& r, const KRParams& params) {
  const auto& atoms = r.support.atoms;
  std::vector<double> balance = r.witness.creation;
  double value = 0.0;
  for (double a : r.witness.creation) value += params.alpha * std::abs(a);
  double worst = 0.0;
  for (const auto& e : r.witness.plan) {
    if (e.source == e.target || e.mass < 0.0) return std::numeric_limits<double>::infinity();
    balance[e.source] += e.mass;
    balance[e.target] -= e.mass;
    value += e.mass * params.transport_cost(distance<Dim>(atoms[e.source].x, atoms[e.target].x));
  }
  for (std::size_t i = 0; i < atoms.size(); ++i) worst = std::max(worst, std::abs(balance[i] - atoms[i].w));
  return std::max(worst, std::abs(value - r.witness.value));
}

namespace detail {

// W_p + beta/2 |nu| for a balanced nu on at most three atoms. One sign class
// then holds a single atom, so the coupling is forced: every unit of the other
// side travels to (or from) that atom.
template <int Dim>
double balanced_cost_small(const std::vector<WeightedPoint<Dim>>& atoms, const std::vector<double>& nu,
                           const KRParams& params) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < nu.size(); ++i) {
    if (nu[i] > 0.0) pos.push_back(i);
    if (nu[i] < 0.0) neg.push_back(i);
  }
  if (pos.empty() || neg.empty()) return 0.0;
  const bool single_pos = pos.size() == 1;
  const std::size_t hub = single_pos ? pos[0] : neg[0];
  const auto& spokes = single_pos ? neg : pos;
  if (!single_pos && neg.size() != 1) throw Error(ErrorCode::too_large, "coupling enumeration needs one single-atom side");
  double cost = 0.0;
  for (std::size_t s : spokes) {
    cost += std::abs(nu[s]) * params.transport_cost(distance<Dim>(atoms[hub].x, atoms[s].x));
  }
  return cost;
}

}  // namespace detail

/// Grid search for the balanced part nu on supp(mu), at most three atoms.
/// Each free coordinate nu_i ranges over [-|w_i|, |w_i|] on grid + 1 levels;
/// the last coordinate is fixed by balance.
template <int Dim>
double kr_norm_bruteforce(const DiscreteMeasure<Dim>& mu, const KRParams& params, int grid) {
  params.validate();
  if (grid < 1) throw Error(ErrorCode::invalid_params, "grid must be positive");
  const auto support = coalesce(mu, 0.0);
  const auto& atoms = support.atoms;
  const std::size_t n = atoms.size();
  if (n > 3) throw Error(ErrorCode::too_large, "brute force oracle supports at most three atoms");
  if (n == 0) return 0.0;

  auto objective = [&](const std::vector<double>& nu) {
    double v = detail::balanced_cost_small<Dim>(atoms, nu, params);
    for (std::size_t i = 0; i < n; ++i) v += params.alpha * std::abs(atoms[i].w - nu[i]);
    return v;
  };
  auto level = [&](std::size_t i, int k) {
    const double r = std::abs(atoms[i].w);
    return -r + 2.0 * r * static_cast<double>(k) / static_cast<double>(grid);
  };

  double best = std::numeric_limits<double>::infinity();
  std::vector<double> nu(n, 0.0);
  if (n == 1) return objective(nu);
  if (n == 2) {
    for (int k = 0; k <= grid; ++k) {
      nu[0] = level(0, k);
      nu[1] = -nu[0];
      best = std::min(best, objective(nu));
    }
    return best;
  }
  for (int k0 = 0; k0 <= grid; ++k0) {
    nu[0] = level(0, k0);
    for (int k1 = 0; k1 <= grid; ++k1) {
      nu[1] = level(1, k1);
      nu[2] = -nu[0] - nu[1];
      best = std::min(best, objective(nu));
    }
  }
  return best;
}

/// Worst-case gap between kr_norm_bruteforce and the exact infimum: every
/// coordinate moves by at most half a grid step, and the objective is
/// Lipschitz in each coordinate with constant 2 alpha + max transport cost.
template <int Dim>
double bruteforce_resolution(const DiscreteMeasure<Dim>& mu, const KRParams& params, int grid) {
  const auto atoms = coalesce(mu, 0.0).atoms;
  double max_cost = 0.0;
  for (const auto& a : atoms) {
    for (const auto& b : atoms) max_cost = std::max(max_cost, params.transport_cost(distance<Dim>(a.x, b.x)));
  }
  const double lip = 2.0 * params.alpha + max_cost;
  double steps = 0.0;
  for (std::size_t i = 0; i + 1 < atoms.size(); ++i) steps += std::abs(atoms[i].w) / grid;
  return lip * steps;
}

/// sum_j c_j, the gauge bound on the norm of sum_j c_j e_j.
inline double gauge_decomposition_value(const std::vector<double>& coeffs) {
  double s = 0.0;
  for (double c : coeffs) {
    if (c < 0.0) throw Error(ErrorCode::invalid_params, "gauge coefficients must be nonnegative");
    s += c;
  }
  return s;
}

template <int Dim>
double gauge_decomposition_value(const std::vector<ExtremalAtom<Dim>>& atoms, const std::vector<double>& coeffs,
                                 const KRParams& params) {
  if (atoms.size() != coeffs.size()) throw Error(ErrorCode::invalid_params, "atom and coefficient lists differ in length");
  for (const auto& a : atoms) validate_atom<Dim>(a, params);
  return gauge_decomposition_value(coeffs);
}

}  // namespace krgcg
