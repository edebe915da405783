#pragma once

// Points, boxes, extremal atoms and finitely supported signed measures.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "krgcg/error.hpp"

namespace krgcg {

template <int Dim>
using Point = Eigen::Matrix<double, Dim, 1>;

template <int Dim>
double distance(const Point<Dim>& a, const Point<Dim>& b) {
  return (a - b).norm();
}

/// Axis-aligned box in one or two dimensions.
template <int Dim>
struct Domain {
  static_assert(Dim == 1 || Dim == 2, "only 1D and 2D domains are supported");

  Point<Dim> lower;
  Point<Dim> upper;

  Domain(Point<Dim> lo, Point<Dim> hi) : lower(std::move(lo)), upper(std::move(hi)) {
    for (int i = 0; i < Dim; ++i) {
      if (!(lower[i] < upper[i])) {
        throw Error(ErrorCode::invalid_domain, "lower bound must be below upper bound");
      }
    }
  }

  static Domain interval(double lo, double hi)
    requires(Dim == 1)
  {
    return Domain(Point<1>::Constant(lo), Point<1>::Constant(hi));
  }

  double diameter() const { return (upper - lower).norm(); }

  double volume() const { return (upper - lower).prod(); }

  bool contains(const Point<Dim>& z, double slack = 0.0) const {
    for (int i = 0; i < Dim; ++i) {
      if (z[i] < lower[i] - slack || z[i] > upper[i] + slack) return false;
    }
    return true;
  }

  Point<Dim> clamp(const Point<Dim>& z) const { return z.cwiseMax(lower).cwiseMin(upper); }

  bool operator==(const Domain&) const = default;
};

/// Weights (alpha, beta, p) of the unbalanced transport norm.
struct KRParams {
  double alpha = 1.0;  // mass creation/destruction
  double beta = 1.0;   // per unit of transported mass
  double p = 1.0;      // ground cost exponent |x - y|^p

  /// Largest admissible |x - y|^p for a dipole to be extremal.
  double dipole_window() const { return 2.0 * alpha - beta; }

  void validate() const {
    if (!(alpha > 0.0)) throw Error(ErrorCode::invalid_params, "alpha must be positive");
    if (!(beta > 0.0)) throw Error(ErrorCode::invalid_params, "beta must be positive");
    if (!(p > 0.0 && p <= 1.0)) throw Error(ErrorCode::invalid_params, "p must lie in (0, 1]");
    if (!(dipole_window() > 0.0)) throw Error(ErrorCode::invalid_params, "2*alpha - beta must be positive");
  }

  /// Transport cost of one unit of mass over the distance d.
  double transport_cost(double d) const { return beta + std::pow(d, p); }

  bool operator==(const KRParams&) const = default;
};

template <int Dim>
struct WeightedPoint {
  Point<Dim> x;
  double w = 0.0;

  bool operator==(const WeightedPoint&) const = default;
};

/// Finite linear combination of Dirac masses.
template <int Dim>
struct DiscreteMeasure {
  std::vector<WeightedPoint<Dim>> atoms;

  std::size_t size() const { return atoms.size(); }
  bool empty() const { return atoms.empty(); }

  void add(const Point<Dim>& x, double w) { atoms.push_back({x, w}); }

  DiscreteMeasure& operator+=(const DiscreteMeasure& other) {
    atoms.insert(atoms.end(), other.atoms.begin(), other.atoms.end());
    return *this;
  }

  friend DiscreteMeasure operator+(DiscreteMeasure a, const DiscreteMeasure& b) { return a += b; }

  friend DiscreteMeasure operator*(double c, DiscreteMeasure mu) {
    for (auto& a : mu.atoms) a.w *= c;
    return mu;
  }

  friend DiscreteMeasure operator-(DiscreteMeasure a, const DiscreteMeasure& b) { return a += (-1.0) * b; }

  bool operator==(const DiscreteMeasure&) const = default;
};

/// sign * delta_z / alpha
template <int Dim>
struct DiracAtom {
  int sign = 1;
  Point<Dim> z;

  bool operator==(const DiracAtom&) const = default;
};

/// (delta_x - delta_y) / (beta + |x - y|^p)
template <int Dim>
struct DipoleAtom {
  Point<Dim> x;
  Point<Dim> y;

  bool operator==(const DipoleAtom&) const = default;
};

template <int Dim>
using ExtremalAtom = std::variant<DiracAtom<Dim>, DipoleAtom<Dim>>;

template <int Dim>
bool is_dirac(const ExtremalAtom<Dim>& atom) {
  return std::holds_alternative<DiracAtom<Dim>>(atom);
}

struct TransportEntry {
  std::size_t source = 0;
  std::size_t target = 0;
  double mass = 0.0;
};

using TransportPlan = std::vector<TransportEntry>;

template <int Dim>
void validate_atom(const ExtremalAtom<Dim>& atom, const KRParams& params) {
  if (const auto* d = std::get_if<DiracAtom<Dim>>(&atom)) {
    if (d->sign != 1 && d->sign != -1) throw Error(ErrorCode::invalid_atom, "dirac sign must be +1 or -1");
    return;
  }
  const auto& dp = std::get<DipoleAtom<Dim>>(atom);
  const double dist = distance<Dim>(dp.x, dp.y);
  if (!(dist > 0.0)) throw Error(ErrorCode::invalid_atom, "dipole endpoints must differ");
  if (!(std::pow(dist, params.p) < params.dipole_window())) {
    throw Error(ErrorCode::invalid_atom, "dipole length outside the extremality window |x-y|^p < 2*alpha - beta");
  }
}

/// The measure (delta_x - delta_y) / (beta + |x - y|^p), with no extremality check.
template <int Dim>
DiscreteMeasure<Dim> dipole_measure(const Point<Dim>& x, const Point<Dim>& y, const KRParams& params) {
  if (x == y) throw Error(ErrorCode::invalid_atom, "dipole endpoints must differ");
  const double s = 1.0 / params.transport_cost(distance<Dim>(x, y));
  DiscreteMeasure<Dim> mu;
  mu.add(x, s);
  mu.add(y, -s);
  return mu;
}

template <int Dim>
DiscreteMeasure<Dim> as_measure(const ExtremalAtom<Dim>& atom, const KRParams& params) {
  validate_atom<Dim>(atom, params);
  if (const auto* d = std::get_if<DiracAtom<Dim>>(&atom)) {
    DiscreteMeasure<Dim> mu;
    mu.add(d->z, d->sign / params.alpha);
    return mu;
  }
  const auto& dp = std::get<DipoleAtom<Dim>>(atom);
  return dipole_measure<Dim>(dp.x, dp.y, params);
}

/// Merges atoms closer than `radius` (transitive closure) at their |w|-weighted
/// centroid, repeating until no two atoms are within `radius`, and drops atoms
/// whose merged weight is exactly zero. Quadratic in the number of atoms.
template <int Dim>
DiscreteMeasure<Dim> coalesce(const DiscreteMeasure<Dim>& mu, double radius) {
  std::vector<WeightedPoint<Dim>> cur = mu.atoms;
  for (;;) {
    const std::size_t n = cur.size();
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&](std::size_t i) {
      while (parent[i] != i) i = parent[i] = parent[parent[i]];
      return i;
    };
    bool merged = false;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        if (distance<Dim>(cur[i].x, cur[j].x) <= radius) {
          const std::size_t a = find(i), b = find(j);
          if (a != b) {
            parent[std::max(a, b)] = std::min(a, b);
            merged = true;
          }
        }
      }
    }
    if (!merged) break;

    std::vector<WeightedPoint<Dim>> next;
    std::vector<std::ptrdiff_t> slot(n, -1);
    std::vector<double> abs_mass;
    std::vector<Point<Dim>> moment;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t r = find(i);
      if (slot[r] < 0) {
        slot[r] = static_cast<std::ptrdiff_t>(next.size());
        next.push_back({cur[i].x, 0.0});
        abs_mass.push_back(0.0);
        moment.push_back(Point<Dim>::Zero());
      }
      const auto s = static_cast<std::size_t>(slot[r]);
      next[s].w += cur[i].w;
      abs_mass[s] += std::abs(cur[i].w);
      moment[s] += std::abs(cur[i].w) * cur[i].x;
    }
    for (std::size_t s = 0; s < next.size(); ++s) {
      if (abs_mass[s] > 0.0) next[s].x = moment[s] / abs_mass[s];
    }
    cur = std::move(next);
  }
  std::erase_if(cur, [](const WeightedPoint<Dim>& a) { return a.w == 0.0; });
  return DiscreteMeasure<Dim>{std::move(cur)};
}

template <int Dim>
double total_variation(const DiscreteMeasure<Dim>& mu) {
  double tv = 0.0;
  for (const auto& a : coalesce(mu, 0.0).atoms) tv += std::abs(a.w);
  return tv;
}

template <int Dim>
double total_mass(const DiscreteMeasure<Dim>& mu) {
  double m = 0.0;
  for (const auto& a : mu.atoms) m += a.w;
  return m;
}

}  // namespace krgcg
