#pragma once

// Accelerated generalized conditional gradient loop: build the certificate of
// the current iterate, insert the extremal atom maximizing <q, .>, re-optimize
// all conic coefficients, prune zero weights.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "krgcg/certificate.hpp"
#include "krgcg/measures.hpp"
#include "krgcg/operators.hpp"
#include "krgcg/subproblem.hpp"

namespace krgcg {

template <int Dim>
struct ActiveSet {
  std::vector<ExtremalAtom<Dim>> atoms;
  std::vector<double> lambdas;

  std::size_t size() const { return atoms.size(); }

  DiscreteMeasure<Dim> to_measure(const KRParams& params) const {
    DiscreteMeasure<Dim> mu;
    for (std::size_t j = 0; j < atoms.size(); ++j) mu += lambdas[j] * as_measure<Dim>(atoms[j], params);
    return mu;
  }

  double coefficient_sum() const {
    double s = 0.0;
    for (double l : lambdas) s += l;
    return s;
  }
};

struct SolverConfig {
  KRParams kr;
  double epsilon = 1e-10;
  int max_outer_iterations = 1000;
  MaximizerSettings maximizer;
  SubproblemSettings subproblem;
  double prune_threshold = 1e-12;
  double coalesce_fraction = 1e-7;  // insertion merge radius as a fraction of diam(Omega)
  std::uint64_t seed = 0;
  bool record_time = true;  // false leaves time_s at 0 so histories are byte-reproducible

  void validate() const {
    kr.validate();
    if (!(epsilon > 0.0)) throw Error(ErrorCode::invalid_params, "epsilon must be positive");
    if (max_outer_iterations < 0) throw Error(ErrorCode::invalid_params, "max_outer_iterations must be nonnegative");
  }
};

enum class AtomKind { none, dirac, dipole };

inline std::string to_string(AtomKind k) {
  switch (k) {
    case AtomKind::dirac: return "dirac";
    case AtomKind::dipole: return "dipole";
    default: return "none";
  }
}

enum class TerminationReason { running, converged, max_iter };

inline std::string to_string(TerminationReason r) {
  switch (r) {
    case TerminationReason::converged: return "converged";
    case TerminationReason::max_iter: return "max-iter";
    default: return "running";
  }
}

struct IterateRecord {
  int k = 0;
  double surrogate = 0.0;  // F(K mu_k) + sum lambda
  double max_abs_q_over_alpha = 0.0;
  double max_psi = 0.0;
  std::size_t n_atoms = 0;
  AtomKind inserted = AtomKind::none;
  double r_hat = 0.0;
  double time_s = 0.0;
  bool merged = false;      // candidate coincided with an active atom
  double kkt_residual = 0.0;
};

/// true iff max(max|q| / alpha, max Psi) <= 1 + epsilon.
inline bool stopping_check(double max_abs_q, double max_psi, const KRParams& params, double epsilon) {
  return std::max(max_abs_q / params.alpha, max_psi) <= 1.0 + epsilon;
}

template <int Dim>
struct InsertionResult {
  std::optional<ExtremalAtom<Dim>> atom;
  MaximizerReport<Dim> q_report;
  MaximizerReport<2 * Dim> psi_report;

  double max_abs_q() const { return q_report.value; }
  double max_psi() const { return psi_report.value; }
};

/// Decision rule given the two maxima. Throws extremality-violation when a
/// dipole would be chosen outside the window |x - y|^p < 2 alpha - beta.
template <int Dim>
std::optional<ExtremalAtom<Dim>> choose_candidate(double max_abs_q, int q_sign, const Point<Dim>& z, double max_psi,
                                                  const Point<Dim>& x, const Point<Dim>& y, const KRParams& params,
                                                  double epsilon) {
  if (stopping_check(max_abs_q, max_psi, params, epsilon)) return std::nullopt;
  if (max_abs_q / params.alpha >= max_psi) return ExtremalAtom<Dim>{DiracAtom<Dim>{q_sign >= 0 ? 1 : -1, z}};
  const double len = std::pow(distance<Dim>(x, y), params.p);
  if (!(len > 0.0 && len < params.dipole_window())) {
    throw Error(ErrorCode::extremality_violation, "maximizing pair violates the dipole window");
  }
  return ExtremalAtom<Dim>{DipoleAtom<Dim>{x, y}};
}

template <ForwardOperator Op, int Dim = Op::dim>
InsertionResult<Dim> insert_candidate(const DualCertificate<Op>& cert, const KRParams& params,
                                      const Domain<Dim>& domain, const MaximizerSettings& settings,
                                      double epsilon) {
  InsertionResult<Dim> out;
  out.q_report = maximize_abs_q(cert, domain, settings);
  out.psi_report = maximize_psi(cert, params, domain, settings);
  const Point<Dim> z = out.q_report.argmax;
  const int sign = cert.q_value(z) >= 0.0 ? 1 : -1;
  const Point<Dim> x = out.psi_report.argmax.template head<Dim>();
  const Point<Dim> y = out.psi_report.argmax.template tail<Dim>();
  out.atom = choose_candidate<Dim>(out.max_abs_q(), sign, z, out.max_psi(), x, y, params, epsilon);
  return out;
}

template <int Dim>
struct SolveResult {
  ActiveSet<Dim> active;
  DiscreteMeasure<Dim> measure;
  std::vector<IterateRecord> history;
  TerminationReason reason = TerminationReason::running;
  int iterations = 0;  // number of insertions performed
};

/// Fills r_hat against the last record's surrogate value.
inline void fill_residuals(std::vector<IterateRecord>& history) {
  if (history.empty()) return;
  const double final_value = history.back().surrogate;
  for (auto& rec : history) rec.r_hat = rec.surrogate - final_value;
}

template <int Dim>
bool same_atom(const ExtremalAtom<Dim>& a, const ExtremalAtom<Dim>& b, double radius) {
  if (a.index() != b.index()) return false;
  if (const auto* da = std::get_if<DiracAtom<Dim>>(&a)) {
    const auto& db = std::get<DiracAtom<Dim>>(b);
    return da->sign == db.sign && distance<Dim>(da->z, db.z) <= radius;
  }
  const auto& pa = std::get<DipoleAtom<Dim>>(a);
  const auto& pb = std::get<DipoleAtom<Dim>>(b);
  return distance<Dim>(pa.x, pb.x) <= radius && distance<Dim>(pa.y, pb.y) <= radius;
}

/// Solver state: active set plus the cached observations K mu_j and their Gram
/// matrix under the Y inner product.
template <int Dim>
struct SolverState {
  ActiveSet<Dim> active;
  std::vector<Eigen::VectorXd> columns;
  Eigen::MatrixXd gram;
  Eigen::VectorXd linear;
  std::vector<IterateRecord> history;
  int k = 0;
  TerminationReason reason = TerminationReason::running;
  double elapsed_s = 0.0;

  bool terminated() const { return reason != TerminationReason::running; }
};

template <ForwardOperator Op>
class Agcg {
 public:
  static constexpr int dim = Op::dim;

  Agcg(const Op& op, QuadraticFidelity fidelity, Domain<dim> domain, SolverConfig config)
      : op_(op), fidelity_(std::move(fidelity)), domain_(std::move(domain)), config_(std::move(config)) {
    config_.validate();
    target_norm2_ = op_.inner(fidelity_.target.values, fidelity_.target.values);
  }

  const SolverConfig& config() const { return config_; }
  const Domain<dim>& domain() const { return domain_; }
  const QuadraticFidelity& fidelity() const { return fidelity_; }
  const Op& op() const { return op_; }

  /// Inserts the given atoms and optimizes their coefficients (step 1 of the
  /// method); atoms with zero weight are dropped.
  SolverState<dim> initialize(const ActiveSet<dim>& initial = {}) const {
    SolverState<dim> s;
    for (std::size_t j = 0; j < initial.atoms.size(); ++j) {
      append_atom(s, initial.atoms[j], j < initial.lambdas.size() ? initial.lambdas[j] : 0.0);
    }
    if (!s.active.atoms.empty()) {
      resolve_coefficients(s, false);
      prune(s);
    }
    return s;
  }

  Eigen::VectorXd residual(const SolverState<dim>& s) const {
    Eigen::VectorXd r = -fidelity_.target.values;
    for (std::size_t j = 0; j < s.columns.size(); ++j) r += s.active.lambdas[j] * s.columns[j];
    return r;
  }

  double surrogate(const SolverState<dim>& s) const {
    const Eigen::VectorXd r = residual(s);
    return 0.5 * fidelity_.gamma * op_.inner(r, r) + s.active.coefficient_sum();
  }

  DualCertificate<Op> certificate(const SolverState<dim>& s) const {
    return DualCertificate<Op>(op_, fidelity_.gamma, residual(s));
  }

  /// One outer iteration. Records the current iterate, then either terminates
  /// or inserts one atom and re-optimizes.
  void step(SolverState<dim>& s) const {
    if (s.terminated()) return;
    const auto t0 = std::chrono::steady_clock::now();
    IterateRecord rec;
    rec.k = s.k;
    rec.surrogate = surrogate(s);
    rec.n_atoms = s.active.size();

    const auto cert = certificate(s);
    const InsertionResult<dim> ins = insert_with_retry(cert, s.k);
    rec.max_abs_q_over_alpha = ins.max_abs_q() / config_.kr.alpha;
    rec.max_psi = ins.max_psi();

    if (!ins.atom) {
      s.reason = TerminationReason::converged;
    } else if (s.k >= config_.max_outer_iterations) {
      s.reason = TerminationReason::max_iter;
    } else {
      const ExtremalAtom<dim>& cand = *ins.atom;
      rec.inserted = is_dirac<dim>(cand) ? AtomKind::dirac : AtomKind::dipole;
      const double radius = config_.coalesce_fraction * domain_.diameter();
      for (const auto& a : s.active.atoms) {
        if (same_atom<dim>(a, cand, radius)) {
          rec.merged = true;
          break;
        }
      }
      if (!rec.merged) append_atom(s, cand, 0.0);
      rec.kkt_residual = resolve_coefficients(s, rec.merged);
      prune(s);
      ++s.k;
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    s.elapsed_s += dt;
    rec.time_s = config_.record_time ? s.elapsed_s : 0.0;
    s.history.push_back(rec);
  }

  SolveResult<dim> finish(SolverState<dim> s) const {
    SolveResult<dim> out;
    out.active = std::move(s.active);
    out.measure = out.active.to_measure(config_.kr);
    out.history = std::move(s.history);
    fill_residuals(out.history);
    out.reason = s.reason;
    out.iterations = s.k;
    return out;
  }

  SolveResult<dim> run(const ActiveSet<dim>& initial = {}) const {
    SolverState<dim> s = initialize(initial);
    while (!s.terminated()) step(s);
    return finish(std::move(s));
  }

  /// Subproblem tolerance: the configured one, tightened so that the KKT
  /// residual cannot by itself violate the stopping test.
  double subproblem_tolerance() const {
    const double base = config_.subproblem.tol > 0.0 ? config_.subproblem.tol
                                                     : 1e-12 * (1.0 + 0.5 * fidelity_.gamma * target_norm2_);
    return std::min(base, 0.1 * config_.epsilon);
  }

 private:
  InsertionResult<dim> insert_with_retry(const DualCertificate<Op>& cert, int k) const {
    MaximizerSettings ms = config_.maximizer;
    ms.multistart.seed = config_.seed + static_cast<std::uint64_t>(k);
    try {
      return insert_candidate(cert, config_.kr, domain_, ms, config_.epsilon);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::extremality_violation) throw;
    }
    // A pair outside the window means the |q| search missed a larger maximum.
    ms.q_seeds *= 4;
    ms.pair_points *= 2;
    ms.pair_keep *= 2;
    ms.multistart.perturbation_rounds *= 2;
    return insert_candidate(cert, config_.kr, domain_, ms, config_.epsilon);
  }

  void append_atom(SolverState<dim>& s, const ExtremalAtom<dim>& atom, double lambda) const {
    Eigen::VectorXd col = gram_column(op_, atom, config_.kr).values;
    const auto n = static_cast<Eigen::Index>(s.columns.size());
    Eigen::MatrixXd G(n + 1, n + 1);
    G.topLeftCorner(n, n) = s.gram;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double v = op_.inner(s.columns[static_cast<std::size_t>(i)], col);
      G(i, n) = v;
      G(n, i) = v;
    }
    G(n, n) = op_.inner(col, col);
    Eigen::VectorXd g(n + 1);
    g.head(n) = s.linear;
    g[n] = op_.inner(col, fidelity_.target.values);
    s.gram = std::move(G);
    s.linear = std::move(g);
    s.columns.push_back(std::move(col));
    s.active.atoms.push_back(atom);
    s.active.lambdas.push_back(lambda);
  }

  double resolve_coefficients(SolverState<dim>& s, bool force_polish) const {
    CoefficientProblem prob;
    prob.gram = s.gram;
    prob.linear = s.linear;
    prob.gamma = fidelity_.gamma;
    prob.target_norm2 = target_norm2_;
    prob.initial = Eigen::Map<const Eigen::VectorXd>(s.active.lambdas.data(),
                                                      static_cast<Eigen::Index>(s.active.lambdas.size()));
    SubproblemSettings ss = config_.subproblem;
    ss.tol = subproblem_tolerance();
    if (force_polish) ss.tol *= 1e-2;
    const CoefficientSolution sol = solve_coefficients(prob, ss);
    for (std::size_t j = 0; j < s.active.lambdas.size(); ++j) s.active.lambdas[j] = sol.lambda[static_cast<Eigen::Index>(j)];
    return sol.kkt_residual;
  }

  void prune(SolverState<dim>& s) const {
    std::vector<std::size_t> keep;
    for (std::size_t j = 0; j < s.active.size(); ++j) {
      if (s.active.lambdas[j] > config_.prune_threshold) keep.push_back(j);
    }
    if (keep.size() == s.active.size()) return;
    const auto m = static_cast<Eigen::Index>(keep.size());
    ActiveSet<dim> active;
    std::vector<Eigen::VectorXd> cols;
    Eigen::MatrixXd G(m, m);
    Eigen::VectorXd g(m);
    for (Eigen::Index a = 0; a < m; ++a) {
      const std::size_t ja = keep[static_cast<std::size_t>(a)];
      active.atoms.push_back(s.active.atoms[ja]);
      active.lambdas.push_back(s.active.lambdas[ja]);
      cols.push_back(std::move(s.columns[ja]));
      g[a] = s.linear[static_cast<Eigen::Index>(ja)];
      for (Eigen::Index b = 0; b < m; ++b) {
        G(a, b) = s.gram(static_cast<Eigen::Index>(ja), static_cast<Eigen::Index>(keep[static_cast<std::size_t>(b)]));
      }
    }
    s.active = std::move(active);
    s.columns = std::move(cols);
    s.gram = std::move(G);
    s.linear = std::move(g);
  }

  const Op& op_;
  QuadraticFidelity fidelity_;
  Domain<dim> domain_;
  SolverConfig config_;
  double target_norm2_ = 0.0;
};

}  // namespace krgcg
