#pragma once

// Box-constrained multistart maximization: projected gradient ascent with
// Armijo backtracking from many seeds, followed by basin-hopping style
// perturbation rounds around the best maxima found.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace krgcg::search {

template <int N>
using Vec = Eigen::Matrix<double, N, 1>;

struct AscentSettings {
  double grad_tol = 1e-10;
  int max_steps = 200;
  double armijo = 1e-4;
  double shrink = 0.5;
};

template <int N>
struct AscentResult {
  Vec<N> x;
  double value = 0.0;
  bool converged = false;
  int steps = 0;
};

template <int N>
struct Box {
  Vec<N> lower;
  Vec<N> upper;

  Vec<N> clamp(const Vec<N>& x) const { return x.cwiseMax(lower).cwiseMin(upper); }
  double diameter() const { return (upper - lower).norm(); }
};

template <int N>
struct ValueGrad {
  double value = 0.0;
  Vec<N> grad = Vec<N>::Zero();
};

/// Gradient with the components that push against an active bound removed.
template <int N>
Vec<N> projected_gradient(const Box<N>& box, const Vec<N>& x, const Vec<N>& g) {
  Vec<N> pg = g;
  for (int i = 0; i < N; ++i) {
    if ((x[i] <= box.lower[i] && g[i] < 0.0) || (x[i] >= box.upper[i] && g[i] > 0.0)) pg[i] = 0.0;
  }
  return pg;
}

/// `f` returns value and gradient; `project` maps a point back into the
/// feasible set (box clamping plus whatever extra exclusion the caller needs).
template <int N, class F, class P>
AscentResult<N> projected_ascent(F&& f, P&& project, const Box<N>& box, Vec<N> x, const AscentSettings& s) {
  AscentResult<N> res;
  x = project(x);
  ValueGrad<N> cur = f(x);
  double t = 0.0;
  Vec<N> prev_x = x, prev_g = cur.grad;
  for (int k = 0; k < s.max_steps; ++k) {
    const Vec<N> pg = projected_gradient<N>(box, x, cur.grad);
    const double gnorm = pg.norm();
    if (gnorm <= s.grad_tol) {
      res.converged = true;
      break;
    }
    if (k == 0) {
      t = 1e-2 * box.diameter() / gnorm;
    } else {
      // Barzilai-Borwein length as the first trial.
      const Vec<N> ds = x - prev_x, dg = cur.grad - prev_g;
      const double sy = std::abs(ds.dot(dg));
      t = sy > 0.0 ? ds.squaredNorm() / sy : 2.0 * t;
    }
    t = std::min(t, box.diameter() / gnorm);
    bool moved = false;
    Vec<N> trial;
    ValueGrad<N> next;
    for (int bt = 0; bt < 60; ++bt) {
      trial = project(Vec<N>(x + t * cur.grad));
      next = f(trial);
      const double gain = cur.grad.dot(trial - x);
      if (next.value >= cur.value + s.armijo * gain && next.value >= cur.value) {
        moved = (trial - x).norm() > 0.0;
        break;
      }
      t *= s.shrink;
    }
    res.steps = k + 1;
    if (!moved) {
      res.converged = gnorm <= std::sqrt(s.grad_tol);
      break;
    }
    prev_x = x;
    prev_g = cur.grad;
    x = trial;
    cur = next;
  }
  if (!res.converged) res.converged = projected_gradient<N>(box, x, cur.grad).norm() <= s.grad_tol;
  res.x = x;
  res.value = cur.value;
  return res;
}

struct MultistartSettings {
  AscentSettings ascent;
  int perturbation_rounds = 3;
  int perturbed_maxima = 8;      // best distinct maxima re-seeded per round
  double noise_fraction = 1.0 / 50.0;  // sigma as a fraction of the feasible-set diameter
  double dedupe_radius = 1e-6;
  std::uint64_t seed = 0;
};

template <int N>
struct LocalMaximum {
  Vec<N> x;
  double value = 0.0;
};

template <int N>
struct MultistartOutcome {
  std::vector<LocalMaximum<N>> maxima;  // distinct, sorted by decreasing value
  int starts = 0;
  int converged = 0;
};

namespace detail {

template <int N>
void insert_maximum(std::vector<LocalMaximum<N>>& maxima, const AscentResult<N>& r, double radius) {
  for (auto& m : maxima) {
    if ((m.x - r.x).norm() <= radius) {
      if (r.value > m.value) {
        m.x = r.x;
        m.value = r.value;
      }
      return;
    }
  }
  maxima.push_back({r.x, r.value});
}

template <int N>
void sort_maxima(std::vector<LocalMaximum<N>>& maxima) {
  std::stable_sort(maxima.begin(), maxima.end(), [](const auto& a, const auto& b) {
    if (a.value != b.value) return a.value > b.value;
    return std::lexicographical_compare(a.x.data(), a.x.data() + N, b.x.data(), b.x.data() + N);
  });
}

}  // namespace detail

/// Runs an ascent from every seed, then perturbation rounds. The outcome only
/// depends on the seeds, the objective and `settings.seed`.
template <int N, class F, class P>
MultistartOutcome<N> multistart(F&& f, P&& project, const Box<N>& box, const std::vector<Vec<N>>& seeds,
                                const MultistartSettings& settings) {
  MultistartOutcome<N> out;
  auto run = [&](const Vec<N>& x0) {
    const AscentResult<N> r = projected_ascent<N>(f, project, box, x0, settings.ascent);
    ++out.starts;
    if (r.converged) ++out.converged;
    detail::insert_maximum<N>(out.maxima, r, settings.dedupe_radius);
  };
  for (const auto& s : seeds) run(s);
  detail::sort_maxima<N>(out.maxima);

  std::mt19937_64 rng(settings.seed);
  std::normal_distribution<double> noise(0.0, settings.noise_fraction * box.diameter());
  for (int round = 0; round < settings.perturbation_rounds && !out.maxima.empty(); ++round) {
    const auto m = std::min<std::size_t>(out.maxima.size(), static_cast<std::size_t>(settings.perturbed_maxima));
    std::vector<Vec<N>> starts;
    for (std::size_t i = 0; i < m; ++i) {
      Vec<N> x = out.maxima[i].x;
      for (int d = 0; d < N; ++d) x[d] += noise(rng);
      starts.push_back(x);
    }
    for (const auto& s : starts) run(s);
    detail::sort_maxima<N>(out.maxima);
  }
  return out;
}

}  // namespace krgcg::search
