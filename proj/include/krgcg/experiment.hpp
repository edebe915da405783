#pragma once

// Experiment configs: parsing and validation, problem assembly in the
// reference-shifted form (target = y - K mu_r), and the run harness that
// writes history.csv, result.json, reports.json, q.csv and psi.csv.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "krgcg/agcg.hpp"
#include "krgcg/diagnostics.hpp"
#include "krgcg/io.hpp"
#include "krgcg/operators.hpp"

namespace krgcg {

using nlohmann::json;

struct PointMass {
  std::vector<double> x;
  double w = 0.0;
  bool operator==(const PointMass&) const = default;
};

struct OperatorConfig {
  std::string type = "gauss_sensors";  // gauss_sensors | gauss_field
  double T = 0.045;
  int sensor_count = 0;
  std::string layout = "even";  // even | explicit
  std::vector<std::vector<double>> sensor_points;
  int grid = 0;
  bool operator==(const OperatorConfig&) const = default;
};

/// forward_of: y = K(measure); vector: y given; function: y(x) = amplitude *
/// sin(2 pi frequency x_0 + phase) + offset sampled on the field grid.
struct DataConfig {
  std::string kind = "forward_of";
  std::vector<PointMass> measure;
  std::vector<double> values;
  std::string function = "sin";
  double amplitude = 1.0;
  double frequency = 0.0;
  double phase = 0.0;
  double offset = 0.0;
  bool operator==(const DataConfig&) const = default;
};

struct SolverSettingsConfig {
  double epsilon = 1e-10;
  int max_iter = 1000;
  std::uint64_t seed = 0;
  double prune_threshold = 1e-12;
  double coalesce_fraction = 1e-7;
  double subproblem_tol = -1.0;  // negative: solver default
  int q_seeds = 256;
  int pair_points = 64;
  int pair_keep = 512;
  int perturbation_rounds = 3;
  double first_order_tol = -1.0;  // negative: 10 * epsilon
  bool record_time = true;        // false writes time_s = 0 for byte-reproducible histories
  bool operator==(const SolverSettingsConfig&) const = default;
};

struct OutputConfig {
  std::string dir = "out";
  int q_grid = 2001;   // samples per axis for q.csv
  int psi_grid = 201;  // samples per axis and factor for psi.csv
  bool operator==(const OutputConfig&) const = default;
};

struct ExperimentConfig {
  int version = 1;
  std::string name = "experiment";
  std::vector<double> lower, upper;
  OperatorConfig op;
  KRParams kr;
  double gamma = 1.0;
  std::vector<PointMass> reference;
  DataConfig data;
  SolverSettingsConfig solver;
  OutputConfig output;

  int dim() const { return static_cast<int>(lower.size()); }
  double first_order_tol() const { return solver.first_order_tol > 0.0 ? solver.first_order_tol : 10.0 * solver.epsilon; }
  bool operator==(const ExperimentConfig&) const = default;
};

namespace detail {

[[noreturn]] inline void invalid(const std::string& field, const std::string& msg) {
  throw Error(ErrorCode::config_invalid, field + ": " + msg);
}

inline const json& require(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) invalid(path + key, "missing");
  return j.at(key);
}

inline double number(const json& j, const std::string& field) {
  if (!j.is_number()) invalid(field, "expected a number");
  return j.get<double>();
}

inline int integer(const json& j, const std::string& field) {
  if (!j.is_number_integer()) invalid(field, "expected an integer");
  return j.get<int>();
}

inline std::string string(const json& j, const std::string& field) {
  if (!j.is_string()) invalid(field, "expected a string");
  return j.get<std::string>();
}

inline std::vector<double> numbers(const json& j, const std::string& field) {
  if (!j.is_array()) invalid(field, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(number(j[i], field + "[" + std::to_string(i) + "]"));
  return out;
}

inline std::vector<PointMass> point_masses(const json& j, const std::string& field) {
  if (!j.is_array()) invalid(field, "expected an array of {x, w}");
  std::vector<PointMass> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string f = field + "[" + std::to_string(i) + "]";
    out.push_back({numbers(require(j[i], "x", f + "."), f + ".x"), number(require(j[i], "w", f + "."), f + ".w")});
  }
  return out;
}

inline json point_masses_json(const std::vector<PointMass>& v) {
  json a = json::array();
  for (const auto& p : v) a.push_back({{"x", p.x}, {"w", p.w}});
  return a;
}

template <class T>
void optional_field(const json& j, const std::string& key, T& out, const std::string& path) {
  if (!j.contains(key)) return;
  const std::string f = path + key;
  if constexpr (std::is_same_v<T, bool>) {
    if (!j[key].is_boolean()) invalid(f, "expected true or false");
    out = j[key].get<bool>();
  } else if constexpr (std::is_same_v<T, std::uint64_t>) {
    if (!j[key].is_number_unsigned()) invalid(f, "expected a nonnegative integer");
    out = j[key].get<std::uint64_t>();
  } else if constexpr (std::is_integral_v<T>) {
    out = integer(j[key], f);
  } else if constexpr (std::is_same_v<T, std::string>) {
    out = string(j[key], f);
  } else {
    out = number(j[key], f);
  }
}

}  // namespace detail

inline json config_to_json(const ExperimentConfig& c) {
  json op = {{"type", c.op.type}, {"T", c.op.T}};
  if (c.op.type == "gauss_sensors") {
    if (c.op.layout == "explicit") {
      op["sensors"] = {{"layout", "explicit"}, {"points", c.op.sensor_points}};
    } else {
      op["sensors"] = {{"count", c.op.sensor_count}, {"layout", c.op.layout}};
    }
  } else {
    op["grid"] = c.op.grid;
  }
  json data = {{"kind", c.data.kind}};
  if (c.data.kind == "forward_of") data["measure"] = detail::point_masses_json(c.data.measure);
  if (c.data.kind == "vector") data["values"] = c.data.values;
  if (c.data.kind == "function") {
    data["name"] = c.data.function;
    data["amplitude"] = c.data.amplitude;
    data["frequency"] = c.data.frequency;
    data["phase"] = c.data.phase;
    data["offset"] = c.data.offset;
  }
  const auto& s = c.solver;
  return {
      {"version", c.version},
      {"name", c.name},
      {"domain", {{"lower", c.lower}, {"upper", c.upper}}},
      {"operator", op},
      {"kr", {{"alpha", c.kr.alpha}, {"beta", c.kr.beta}, {"p", c.kr.p}}},
      {"gamma", c.gamma},
      {"reference", detail::point_masses_json(c.reference)},
      {"data", data},
      {"solver",
       {{"epsilon", s.epsilon},
        {"max_iter", s.max_iter},
        {"seed", s.seed},
        {"prune_threshold", s.prune_threshold},
        {"coalesce_fraction", s.coalesce_fraction},
        {"subproblem_tol", s.subproblem_tol},
        {"q_seeds", s.q_seeds},
        {"pair_points", s.pair_points},
        {"pair_keep", s.pair_keep},
        {"perturbation_rounds", s.perturbation_rounds},
        {"first_order_tol", s.first_order_tol},
        {"record_time", s.record_time}}},
      {"output", {{"dir", c.output.dir}, {"q_grid", c.output.q_grid}, {"psi_grid", c.output.psi_grid}}},
  };
}

/// Checks everything that does not need the operator built.
inline void validate_config(const ExperimentConfig& c) {
  using detail::invalid;
  if (c.version != 1) invalid("version", "unsupported version " + std::to_string(c.version));
  if (c.lower.size() != c.upper.size()) invalid("domain", "lower and upper differ in length");
  if (c.dim() != 1 && c.dim() != 2) invalid("domain", "only dimensions 1 and 2 are supported");
  for (int a = 0; a < c.dim(); ++a) {
    if (!(c.lower[static_cast<std::size_t>(a)] < c.upper[static_cast<std::size_t>(a)])) invalid("domain", "lower must be below upper");
  }
  auto inside = [&](const std::vector<double>& x, const std::string& field) {
    if (x.size() != c.lower.size()) invalid(field, "point dimension does not match the domain");
    for (std::size_t a = 0; a < x.size(); ++a) {
      if (x[a] < c.lower[a] || x[a] > c.upper[a]) invalid(field, "point outside the domain");
    }
  };
  if (!(c.op.T > 0.0)) invalid("operator.T", "must be positive");
  if (c.op.type == "gauss_sensors") {
    if (c.op.layout == "even") {
      if (c.op.sensor_count < 1) invalid("operator.sensors.count", "must be positive");
    } else if (c.op.layout == "explicit") {
      if (c.op.sensor_points.empty()) invalid("operator.sensors.points", "must be nonempty");
      for (std::size_t i = 0; i < c.op.sensor_points.size(); ++i) {
        inside(c.op.sensor_points[i], "operator.sensors.points[" + std::to_string(i) + "]");
      }
    } else {
      invalid("operator.sensors.layout", "expected \"even\" or \"explicit\"");
    }
  } else if (c.op.type == "gauss_field") {
    if (c.op.grid < 2) invalid("operator.grid", "needs at least 2 nodes per axis");
  } else {
    invalid("operator.type", "expected \"gauss_sensors\" or \"gauss_field\"");
  }
  try {
    c.kr.validate();
  } catch (const Error& e) {
    invalid("kr", e.what());
  }
  if (!(c.gamma > 0.0)) invalid("gamma", "must be positive");
  for (std::size_t i = 0; i < c.reference.size(); ++i) inside(c.reference[i].x, "reference[" + std::to_string(i) + "].x");
  if (c.data.kind == "forward_of") {
    for (std::size_t i = 0; i < c.data.measure.size(); ++i) inside(c.data.measure[i].x, "data.measure[" + std::to_string(i) + "].x");
  } else if (c.data.kind == "function") {
    if (c.op.type != "gauss_field") invalid("data.kind", "function data requires a gauss_field operator");
    if (c.data.function != "sin") invalid("data.name", "only \"sin\" is available");
  } else if (c.data.kind != "vector") {
    invalid("data.kind", "expected \"forward_of\", \"vector\" or \"function\"");
  }
  const auto& s = c.solver;
  if (!(s.epsilon > 0.0)) invalid("solver.epsilon", "must be positive");
  if (s.max_iter < 0) invalid("solver.max_iter", "must be nonnegative");
  if (!(s.prune_threshold >= 0.0)) invalid("solver.prune_threshold", "must be nonnegative");
  if (!(s.coalesce_fraction >= 0.0)) invalid("solver.coalesce_fraction", "must be nonnegative");
  if (s.q_seeds < 2 || s.pair_points < 2 || s.pair_keep < 1) invalid("solver", "maximizer seed counts too small");
  if (s.perturbation_rounds < 0) invalid("solver.perturbation_rounds", "must be nonnegative");
  if (c.output.q_grid < 2 || c.output.psi_grid < 2) invalid("output", "grids need at least 2 samples per axis");
}

inline ExperimentConfig config_from_json(const json& j) {
  using namespace detail;
  if (!j.is_object()) invalid("config", "expected a JSON object");
  ExperimentConfig c;
  c.version = integer(require(j, "version", ""), "version");
  optional_field(j, "name", c.name, "");
  const json& dom = require(j, "domain", "");
  c.lower = numbers(require(dom, "lower", "domain."), "domain.lower");
  c.upper = numbers(require(dom, "upper", "domain."), "domain.upper");

  const json& op = require(j, "operator", "");
  c.op.type = string(require(op, "type", "operator."), "operator.type");
  c.op.T = number(require(op, "T", "operator."), "operator.T");
  if (c.op.type == "gauss_sensors") {
    const json& s = require(op, "sensors", "operator.");
    optional_field(s, "layout", c.op.layout, "operator.sensors.");
    if (c.op.layout == "explicit") {
      const json& pts = require(s, "points", "operator.sensors.");
      if (!pts.is_array()) invalid("operator.sensors.points", "expected an array of points");
      for (std::size_t i = 0; i < pts.size(); ++i) {
        c.op.sensor_points.push_back(numbers(pts[i], "operator.sensors.points[" + std::to_string(i) + "]"));
      }
    } else {
      c.op.sensor_count = integer(require(s, "count", "operator.sensors."), "operator.sensors.count");
    }
  } else if (c.op.type == "gauss_field") {
    c.op.grid = integer(require(op, "grid", "operator."), "operator.grid");
  }

  const json& kr = require(j, "kr", "");
  c.kr.alpha = number(require(kr, "alpha", "kr."), "kr.alpha");
  c.kr.beta = number(require(kr, "beta", "kr."), "kr.beta");
  c.kr.p = number(require(kr, "p", "kr."), "kr.p");
  c.gamma = number(require(j, "gamma", ""), "gamma");
  if (j.contains("reference")) c.reference = point_masses(j["reference"], "reference");

  const json& data = require(j, "data", "");
  c.data.kind = string(require(data, "kind", "data."), "data.kind");
  if (c.data.kind == "forward_of") c.data.measure = point_masses(require(data, "measure", "data."), "data.measure");
  if (c.data.kind == "vector") c.data.values = numbers(require(data, "values", "data."), "data.values");
  if (c.data.kind == "function") {
    c.data.function = string(require(data, "name", "data."), "data.name");
    optional_field(data, "amplitude", c.data.amplitude, "data.");
    c.data.frequency = number(require(data, "frequency", "data."), "data.frequency");
    optional_field(data, "phase", c.data.phase, "data.");
    optional_field(data, "offset", c.data.offset, "data.");
  }

  if (j.contains("solver")) {
    const json& s = j["solver"];
    if (!s.is_object()) invalid("solver", "expected an object");
    optional_field(s, "epsilon", c.solver.epsilon, "solver.");
    optional_field(s, "max_iter", c.solver.max_iter, "solver.");
    optional_field(s, "seed", c.solver.seed, "solver.");
    optional_field(s, "prune_threshold", c.solver.prune_threshold, "solver.");
    optional_field(s, "coalesce_fraction", c.solver.coalesce_fraction, "solver.");
    optional_field(s, "subproblem_tol", c.solver.subproblem_tol, "solver.");
    optional_field(s, "q_seeds", c.solver.q_seeds, "solver.");
    optional_field(s, "pair_points", c.solver.pair_points, "solver.");
    optional_field(s, "pair_keep", c.solver.pair_keep, "solver.");
    optional_field(s, "perturbation_rounds", c.solver.perturbation_rounds, "solver.");
    optional_field(s, "first_order_tol", c.solver.first_order_tol, "solver.");
    optional_field(s, "record_time", c.solver.record_time, "solver.");
  }
  if (j.contains("output")) {
    const json& o = j["output"];
    if (!o.is_object()) invalid("output", "expected an object");
    optional_field(o, "dir", c.output.dir, "output.");
    optional_field(o, "q_grid", c.output.q_grid, "output.");
    optional_field(o, "psi_grid", c.output.psi_grid, "output.");
  }
  validate_config(c);
  return c;
}

inline SolverConfig solver_config(const ExperimentConfig& c) {
  SolverConfig s;
  s.kr = c.kr;
  s.epsilon = c.solver.epsilon;
  s.max_outer_iterations = c.solver.max_iter;
  s.seed = c.solver.seed;
  s.prune_threshold = c.solver.prune_threshold;
  s.coalesce_fraction = c.solver.coalesce_fraction;
  s.subproblem.tol = c.solver.subproblem_tol;
  s.maximizer.q_seeds = c.solver.q_seeds;
  s.maximizer.pair_points = c.solver.pair_points;
  s.maximizer.pair_keep = c.solver.pair_keep;
  s.maximizer.multistart.perturbation_rounds = c.solver.perturbation_rounds;
  s.maximizer.multistart.seed = c.solver.seed;
  s.record_time = c.solver.record_time;
  return s;
}

template <int Dim>
using AnyOperator = std::variant<GaussianSensorOperator<Dim>, GaussianFieldOperator<Dim>>;

/// Everything needed to run or re-check a configured experiment.
template <int Dim>
struct Problem {
  Domain<Dim> domain;
  AnyOperator<Dim> op;
  ObservationVector data;  // y
  DiscreteMeasure<Dim> reference;
  QuadraticFidelity fidelity;  // target y - K mu_r
  SolverConfig solver;
};

template <int Dim>
Point<Dim> to_point(const std::vector<double>& v) {
  Point<Dim> z;
  for (int a = 0; a < Dim; ++a) z[a] = v[static_cast<std::size_t>(a)];
  return z;
}

template <int Dim>
DiscreteMeasure<Dim> to_measure(const std::vector<PointMass>& v) {
  DiscreteMeasure<Dim> mu;
  for (const auto& p : v) mu.add(to_point<Dim>(p.x), p.w);
  return mu;
}

template <int Dim>
Problem<Dim> build_problem(const ExperimentConfig& c) {
  validate_config(c);
  if (c.dim() != Dim) detail::invalid("domain", "dimension mismatch");
  Domain<Dim> domain(to_point<Dim>(c.lower), to_point<Dim>(c.upper));
  auto op = [&]() -> AnyOperator<Dim> {
    if (c.op.type == "gauss_field") return GaussianFieldOperator<Dim>(c.op.T, domain, c.op.grid);
    if (c.op.layout == "even") return GaussianSensorOperator<Dim>::even(c.op.T, domain, c.op.sensor_count);
    std::vector<Point<Dim>> pts;
    for (const auto& p : c.op.sensor_points) pts.push_back(to_point<Dim>(p));
    return GaussianSensorOperator<Dim>(c.op.T, std::move(pts));
  }();
  const DiscreteMeasure<Dim> reference = to_measure<Dim>(c.reference);
  ObservationVector y = std::visit(
      [&](const auto& K) {
        ObservationVector out{Eigen::VectorXd::Zero(K.observation_size()), K.kind()};
        if (c.data.kind == "forward_of") {
          out = K.apply(to_measure<Dim>(c.data.measure));
        } else if (c.data.kind == "vector") {
          if (static_cast<Eigen::Index>(c.data.values.size()) != K.observation_size()) {
            detail::invalid("data.values", "length " + std::to_string(c.data.values.size()) +
                                               " does not match the observation size " +
                                               std::to_string(K.observation_size()));
          }
          out.values = Eigen::Map<const Eigen::VectorXd>(c.data.values.data(), K.observation_size());
        } else {
          if constexpr (std::is_same_v<std::decay_t<decltype(K)>, GaussianFieldOperator<Dim>>) {
            for (Eigen::Index k = 0; k < K.observation_size(); ++k) {
              const double x0 = K.node(k)[0];
              out.values[k] = c.data.amplitude * std::sin(2.0 * std::numbers::pi * c.data.frequency * x0 + c.data.phase) +
                              c.data.offset;
            }
          }
        }
        return out;
      },
      op);
  ObservationVector target = y;
  target.values -= std::visit([&](const auto& K) { return K.apply(reference).values; }, op);
  return Problem<Dim>{std::move(domain), std::move(op), std::move(y), reference,
                      QuadraticFidelity(c.gamma, std::move(target)), solver_config(c)};
}

struct Overrides {
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<double> epsilon;
  std::optional<int> max_iter;
};

inline ExperimentConfig apply_overrides(ExperimentConfig c, const Overrides& o) {
  if (o.out) c.output.dir = *o.out;
  if (o.seed) c.solver.seed = *o.seed;
  if (o.epsilon) c.solver.epsilon = *o.epsilon;
  if (o.max_iter) c.solver.max_iter = *o.max_iter;
  validate_config(c);
  return c;
}

template <int Dim>
json result_to_json(const SolveResult<Dim>& r, const ExperimentConfig& c) {
  json atoms = json::array();
  for (std::size_t j = 0; j < r.active.size(); ++j) {
    atoms.push_back({{"atom", io::atom_to_json<Dim>(r.active.atoms[j])}, {"lambda", r.active.lambdas[j]}});
  }
  return {{"version", 1},
          {"dim", Dim},
          {"termination", to_string(r.reason)},
          {"iterations", r.iterations},
          {"seed", c.solver.seed},
          {"final_surrogate", r.history.empty() ? 0.0 : r.history.back().surrogate},
          {"atoms", atoms},
          {"measure", io::measure_to_json<Dim>(r.measure)},
          {"config", config_to_json(c)}};
}

/// Reads the active set and the echoed config back from result.json. The
/// history is not stored there and comes back empty.
template <int Dim>
SolveResult<Dim> result_from_json(const json& j, const KRParams& params) {
  SolveResult<Dim> r;
  const json& atoms = detail::require(j, "atoms", "");
  if (!atoms.is_array()) detail::invalid("atoms", "expected an array");
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    const std::string f = "atoms[" + std::to_string(i) + "]";
    r.active.atoms.push_back(io::atom_from_json<Dim>(detail::require(atoms[i], "atom", f + "."), f + ".atom"));
    r.active.lambdas.push_back(detail::number(detail::require(atoms[i], "lambda", f + "."), f + ".lambda"));
  }
  r.measure = r.active.to_measure(params);
  const std::string reason = detail::string(detail::require(j, "termination", ""), "termination");
  r.reason = reason == "converged" ? TerminationReason::converged
             : reason == "max-iter" ? TerminationReason::max_iter
                                    : TerminationReason::running;
  if (j.contains("iterations")) r.iterations = detail::integer(j["iterations"], "iterations");
  return r;
}

template <int Dim>
json first_order_to_json(const OptimalityReport<Dim>& rep) {
  json diracs = json::array(), dipoles = json::array();
  for (const auto& d : rep.diracs) {
    diracs.push_back({{"z", io::point_to_json<Dim>(d.z)}, {"sign", d.sign}, {"q", d.q}, {"gap", d.gap}, {"sign_ok", d.sign_ok}});
  }
  for (const auto& d : rep.dipoles) {
    dipoles.push_back({{"x", io::point_to_json<Dim>(d.x)}, {"y", io::point_to_json<Dim>(d.y)}, {"psi", d.psi}, {"gap", d.gap}});
  }
  return {{"tol", rep.tol},
          {"pass", rep.pass},
          {"max_abs_q_over_alpha", rep.max_abs_q_over_alpha},
          {"max_psi", rep.max_psi},
          {"diracs", diracs},
          {"dipoles", dipoles}};
}

template <int Dim>
json assumptions_to_json(const AssumptionReport<Dim>& rep) {
  json diracs = json::array(), dipoles = json::array();
  for (const auto& d : rep.diracs) {
    diracs.push_back({{"z", io::point_to_json<Dim>(d.z)}, {"lambda", d.lambda}, {"det_hess", d.det_hess}, {"definite", d.definite}});
  }
  for (const auto& d : rep.dipoles) {
    dipoles.push_back({{"x", io::point_to_json<Dim>(d.x)},
                       {"y", io::point_to_json<Dim>(d.y)},
                       {"lambda", d.lambda},
                       {"det_hess", d.det_hess},
                       {"definite", d.definite}});
  }
  return {{"gamma", rep.gamma},
          {"strong_convexity", "structural: quadratic fidelity with constant curvature gamma"},
          {"diracs", diracs},
          {"dipoles", dipoles},
          {"singular_values", rep.singular_values},
          {"clustered_singular_values", rep.clustered_singular_values},
          {"condition_number", std::isfinite(rep.condition_number) ? json(rep.condition_number) : json(nullptr)},
          {"min_lambda", rep.min_lambda},
          {"distinct_diracs", rep.distinct_diracs},
          {"distinct_dipoles", rep.distinct_dipoles},
          {"near_global_q", rep.near_global_q},
          {"near_global_psi", rep.near_global_psi}};
}

template <int Dim>
struct Reports {
  OptimalityReport<Dim> first_order;
  AssumptionReport<Dim> assumptions;
  std::optional<TailRate> tail;
  double relative_misfit = 0.0;  // ||K(mu + mu_r) - y|| / ||y||
};

template <int Dim>
Reports<Dim> make_reports(const Problem<Dim>& prob, const SolveResult<Dim>& r, double tol) {
  Reports<Dim> out;
  std::visit(
      [&](const auto& K) {
        out.first_order = check_first_order(r, K, prob.fidelity, prob.solver.kr, prob.domain, tol, prob.solver.maximizer);
        out.assumptions = check_linear_assumptions(r, K, prob.fidelity, prob.solver.kr, prob.domain, prob.solver.maximizer);
        const Eigen::VectorXd res = K.apply(r.measure).values - prob.fidelity.target.values;
        const double ny = std::sqrt(K.inner(prob.data.values, prob.data.values));
        out.relative_misfit = ny > 0.0 ? std::sqrt(K.inner(res, res)) / ny : 0.0;
      },
      prob.op);
  if (r.history.size() >= 9) {
    try {
      out.tail = fit_tail_rate(r.history);
    } catch (const Error&) {
    }
  }
  return out;
}

template <int Dim>
json reports_to_json(const Reports<Dim>& rep) {
  json tail = nullptr;
  if (rep.tail) tail = {{"slope", rep.tail->slope}, {"r_squared", rep.tail->r_squared}, {"points", rep.tail->points}};
  return {{"first_order", first_order_to_json(rep.first_order)},
          {"assumptions", assumptions_to_json(rep.assumptions)},
          {"tail_rate", tail},
          {"relative_misfit", rep.relative_misfit}};
}

namespace detail {

template <int Dim>
std::vector<Point<Dim>> grid_points(const Domain<Dim>& d, int per_axis) {
  std::vector<Point<Dim>> pts;
  auto coord = [&](int a, int i) { return d.lower[a] + (d.upper[a] - d.lower[a]) * i / (per_axis - 1.0); };
  if constexpr (Dim == 1) {
    for (int i = 0; i < per_axis; ++i) pts.push_back(Point<1>::Constant(coord(0, i)));
  } else {
    for (int j = 0; j < per_axis; ++j) {
      for (int i = 0; i < per_axis; ++i) pts.push_back(Point<2>(coord(0, i), coord(1, j)));
    }
  }
  return pts;
}

template <int Dim>
void put_point(std::ostringstream& os, const Point<Dim>& z) {
  for (int a = 0; a < Dim; ++a) os << io::format_double(z[a]) << ',';
}

}  // namespace detail

/// q.csv: z, q(z)/alpha on a uniform grid. psi.csv: x, y, Psi(x, y) on the
/// product grid, 0 on the diagonal. In 2D the coordinates are split into
/// z0,z1 / x0,x1,y0,y1.
template <int Dim>
std::pair<std::string, std::string> certificate_csv(const Problem<Dim>& prob, const SolveResult<Dim>& r, int q_grid,
                                                    int psi_grid) {
  std::ostringstream q, psi;
  if constexpr (Dim == 1) {
    q << "z,q_over_alpha\n";
    psi << "x,y,psi\n";
  } else {
    q << "z0,z1,q_over_alpha\n";
    psi << "x0,x1,y0,y1,psi\n";
  }
  std::visit(
      [&](const auto& K) {
        const auto cert = build_certificate(K, prob.fidelity, r.measure);
        for (const auto& z : detail::grid_points<Dim>(prob.domain, q_grid)) {
          detail::put_point<Dim>(q, z);
          q << io::format_double(cert.q_value(z) / prob.solver.kr.alpha) << '\n';
        }
        const auto pts = detail::grid_points<Dim>(prob.domain, psi_grid);
        std::vector<double> qv;
        for (const auto& z : pts) qv.push_back(cert.q_value(z));
        for (std::size_t i = 0; i < pts.size(); ++i) {
          for (std::size_t k = 0; k < pts.size(); ++k) {
            const double d = distance<Dim>(pts[i], pts[k]);
            const double v = d > 0.0 ? (qv[i] - qv[k]) / prob.solver.kr.transport_cost(d) : 0.0;
            detail::put_point<Dim>(psi, pts[i]);
            detail::put_point<Dim>(psi, pts[k]);
            psi << io::format_double(v) << '\n';
          }
        }
      },
      prob.op);
  return {q.str(), psi.str()};
}

enum ExitCode : int {
  exit_ok = 0,
  exit_error = 1,
  exit_max_iter = 2,
  exit_report_failure = 3,
  exit_io_error = 4,
  exit_config_invalid = 5,
};

inline int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::io_error: return exit_io_error;
    case ErrorCode::config_invalid: return exit_config_invalid;
    default: return exit_error;
  }
}

template <int Dim>
struct ExperimentRun {
  Problem<Dim> problem;
  SolveResult<Dim> result;
  Reports<Dim> reports;
  int exit_code = exit_ok;
  std::string summary;
};

template <int Dim>
SolveResult<Dim> solve_problem(const Problem<Dim>& prob) {
  return std::visit(
      [&](const auto& K) {
        using Op = std::decay_t<decltype(K)>;
        return Agcg<Op>(K, prob.fidelity, prob.domain, prob.solver).run();
      },
      prob.op);
}

/// Solves, checks and writes all artifacts into c.output.dir.
template <int Dim>
ExperimentRun<Dim> run_experiment_dim(const ExperimentConfig& c) {
  namespace fs = std::filesystem;
  ExperimentRun<Dim> run{build_problem<Dim>(c), {}, {}, exit_ok, {}};
  run.result = solve_problem(run.problem);
  const double tol = c.first_order_tol();
  run.reports = make_reports(run.problem, run.result, tol);

  std::error_code ec;
  fs::create_directories(c.output.dir, ec);
  if (ec) throw Error(ErrorCode::io_error, "cannot create " + c.output.dir + ": " + ec.message());
  const fs::path dir(c.output.dir);
  io::write_text_file((dir / "history.csv").string(), io::history_csv(run.result.history));
  io::write_text_file((dir / "result.json").string(), result_to_json(run.result, c).dump(2) + "\n");
  io::write_text_file((dir / "reports.json").string(), reports_to_json(run.reports).dump(2) + "\n");
  const auto [q, psi] = certificate_csv(run.problem, run.result, c.output.q_grid, c.output.psi_grid);
  io::write_text_file((dir / "q.csv").string(), q);
  io::write_text_file((dir / "psi.csv").string(), psi);

  if (run.result.reason != TerminationReason::converged) {
    run.exit_code = exit_max_iter;
  } else if (!run.reports.first_order.pass) {
    run.exit_code = exit_report_failure;
  }
  std::ostringstream s;
  s << c.name << ": " << to_string(run.result.reason) << " after " << run.result.iterations << " iterations, "
    << run.result.active.size() << " atoms, surrogate "
    << io::format_double(run.result.history.empty() ? 0.0 : run.result.history.back().surrogate)
    << ", first-order " << (run.reports.first_order.pass ? "pass" : "FAIL") << " at tol " << tol << ", seed "
    << c.solver.seed << ", " << (run.result.history.empty() ? 0.0 : run.result.history.back().time_s) << " s";
  run.summary = s.str();
  return run;
}

}  // namespace krgcg
