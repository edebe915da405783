#pragma once

// Heat-kernel forward operators and their adjoints.
//
// Both operators integrate a measure against the Gaussian heat kernel
//
//   G(x, z) = (4 pi T)^{-n/2} exp(-|x - z|^2 / (4T)),
//
// either at a finite list of sensors (Y = R^m with the Euclidean product) or at
// the nodes of a uniform tensor grid standing in for L^2(Omega) (Y = R^M with
// trapezoid weights in the inner product). The adjoint of y is the function
// z -> sum_i w_i y_i G(x_i, z), available with exact first and second
// derivatives in z.

#include <array>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "krgcg/measures.hpp"

namespace krgcg {

enum class ObservationKind { sensor, field };

inline std::string to_string(ObservationKind k) { return k == ObservationKind::sensor ? "sensor" : "field"; }

struct ObservationVector {
  Eigen::VectorXd values;
  ObservationKind kind = ObservationKind::sensor;

  Eigen::Index size() const { return values.size(); }
};

/// Value, gradient and Hessian of a scalar function at one point.
template <int Dim>
struct Jet {
  double value = 0.0;
  Eigen::Matrix<double, Dim, 1> grad = Eigen::Matrix<double, Dim, 1>::Zero();
  Eigen::Matrix<double, Dim, Dim> hess = Eigen::Matrix<double, Dim, Dim>::Zero();
};

/// What the solver needs from a forward operator K : M(Omega) -> Y.
template <class Op>
concept ForwardOperator = requires(const Op& op, const DiscreteMeasure<Op::dim>& mu, const Eigen::VectorXd& y,
                                   const Point<Op::dim>& z) {
  { op.apply(mu) } -> std::same_as<ObservationVector>;
  { op.adjoint_jet(y, z, 2) } -> std::same_as<Jet<Op::dim>>;
  { op.adjoint_value(y, z) } -> std::convertible_to<double>;
  { op.inner(y, y) } -> std::convertible_to<double>;
  { op.observation_size() } -> std::convertible_to<Eigen::Index>;
  { op.kind() } -> std::same_as<ObservationKind>;
};

namespace detail {

template <int Dim>
class HeatKernel {
 public:
  explicit HeatKernel(double T) : T_(T) {
    if (!(T > 0.0)) throw Error(ErrorCode::invalid_params, "diffusion time T must be positive");
    scale_ = std::pow(4.0 * std::numbers::pi * T, -0.5 * Dim);
  }

  double time() const { return T_; }
  double scale() const { return scale_; }

  double operator()(const Point<Dim>& x, const Point<Dim>& z) const {
    return scale_ * std::exp(-(x - z).squaredNorm() / (4.0 * T_));
  }

  // Adds c * G(x, .) and its z-derivatives up to `order` at z.
  void accumulate(Jet<Dim>& jet, double c, const Point<Dim>& x, const Point<Dim>& z, int order) const {
    const Point<Dim> d = x - z;
    const double g = c * scale_ * std::exp(-d.squaredNorm() / (4.0 * T_));
    jet.value += g;
    if (order >= 1) jet.grad += g / (2.0 * T_) * d;
    if (order >= 2) {
      jet.hess += g * (d * d.transpose() / (4.0 * T_ * T_) -
                       Eigen::Matrix<double, Dim, Dim>::Identity() / (2.0 * T_));
    }
  }

 private:
  double T_;
  double scale_ = 1.0;
};

}  // namespace detail

/// (K mu)_i = sum_k w_k G(x_i, z_k) at fixed sensor locations x_i.
template <int Dim>
class GaussianSensorOperator {
 public:
  static constexpr int dim = Dim;

  GaussianSensorOperator(double T, std::vector<Point<Dim>> sensors) : kernel_(T), sensors_(std::move(sensors)) {
    if (sensors_.empty()) throw Error(ErrorCode::invalid_params, "at least one sensor is required");
  }

  /// `count` sensors per axis on a uniform grid including the box corners.
  static GaussianSensorOperator even(double T, const Domain<Dim>& domain, int count) {
    if (count < 1) throw Error(ErrorCode::invalid_params, "sensor count must be positive");
    std::vector<Point<Dim>> s;
    auto coord = [&](int axis, int i) {
      if (count == 1) return 0.5 * (domain.lower[axis] + domain.upper[axis]);
      return domain.lower[axis] + (domain.upper[axis] - domain.lower[axis]) * i / (count - 1.0);
    };
    if constexpr (Dim == 1) {
      for (int i = 0; i < count; ++i) s.push_back(Point<1>::Constant(coord(0, i)));
    } else {
      for (int j = 0; j < count; ++j) {
        for (int i = 0; i < count; ++i) s.push_back(Point<2>(coord(0, i), coord(1, j)));
      }
    }
    return GaussianSensorOperator(T, std::move(s));
  }

  double time() const { return kernel_.time(); }
  const std::vector<Point<Dim>>& sensors() const { return sensors_; }
  Eigen::Index observation_size() const { return static_cast<Eigen::Index>(sensors_.size()); }
  ObservationKind kind() const { return ObservationKind::sensor; }

  ObservationVector apply(const DiscreteMeasure<Dim>& mu) const {
    ObservationVector out{Eigen::VectorXd::Zero(observation_size()), ObservationKind::sensor};
    for (std::size_t i = 0; i < sensors_.size(); ++i) {
      double s = 0.0;
      for (const auto& a : mu.atoms) s += a.w * kernel_(sensors_[i], a.x);
      out.values[static_cast<Eigen::Index>(i)] = s;
    }
    return out;
  }

  Jet<Dim> adjoint_jet(const Eigen::VectorXd& y, const Point<Dim>& z, int order) const {
    Jet<Dim> jet;
    for (std::size_t i = 0; i < sensors_.size(); ++i) {
      const double yi = y[static_cast<Eigen::Index>(i)];
      if (yi != 0.0) kernel_.accumulate(jet, yi, sensors_[i], z, order);
    }
    return jet;
  }

  double adjoint_value(const Eigen::VectorXd& y, const Point<Dim>& z) const { return adjoint_jet(y, z, 0).value; }
  Point<Dim> adjoint_grad(const Eigen::VectorXd& y, const Point<Dim>& z) const { return adjoint_jet(y, z, 1).grad; }
  Eigen::Matrix<double, Dim, Dim> adjoint_hess(const Eigen::VectorXd& y, const Point<Dim>& z) const {
    return adjoint_jet(y, z, 2).hess;
  }

  double inner(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const { return a.dot(b); }

 private:
  detail::HeatKernel<Dim> kernel_;
  std::vector<Point<Dim>> sensors_;
};

/// K mu sampled on a uniform grid of `nodes` points per axis; the observation
/// space carries composite trapezoid weights, so inner() approximates the L^2
/// product on the box.
///
/// Kernel terms with |x - z|^2 / 4T above 60 (relative size below 1e-26) are
/// skipped; only nodes inside that window are visited.
template <int Dim>
class GaussianFieldOperator {
 public:
  static constexpr int dim = Dim;
  static constexpr double kCutoffExponent = 60.0;

  GaussianFieldOperator(double T, const Domain<Dim>& domain, int nodes)
      : kernel_(T), domain_(domain), nodes_(nodes) {
    if (nodes < 2) throw Error(ErrorCode::invalid_params, "field grid needs at least two nodes per axis");
    for (int a = 0; a < Dim; ++a) step_[a] = (domain.upper[a] - domain.lower[a]) / (nodes - 1);
    Eigen::Index total = 1;
    for (int a = 0; a < Dim; ++a) total *= nodes;
    weights_.resize(total);
    for (Eigen::Index k = 0; k < total; ++k) {
      double w = 1.0;
      Eigen::Index rem = k;
      for (int a = 0; a < Dim; ++a) {
        const Eigen::Index i = rem % nodes;
        rem /= nodes;
        w *= (i == 0 || i == nodes - 1) ? 0.5 * step_[a] : step_[a];
      }
      weights_[k] = w;
    }
    radius_ = std::sqrt(4.0 * T * kCutoffExponent);
  }

  double time() const { return kernel_.time(); }
  int nodes_per_axis() const { return nodes_; }
  const Domain<Dim>& domain() const { return domain_; }
  const Eigen::VectorXd& weights() const { return weights_; }
  Eigen::Index observation_size() const { return weights_.size(); }
  ObservationKind kind() const { return ObservationKind::field; }

  Point<Dim> node(Eigen::Index k) const {
    Point<Dim> x;
    for (int a = 0; a < Dim; ++a) {
      x[a] = domain_.lower[a] + step_[a] * static_cast<double>(k % nodes_);
      k /= nodes_;
    }
    return x;
  }

  ObservationVector apply(const DiscreteMeasure<Dim>& mu) const {
    ObservationVector out{Eigen::VectorXd::Zero(observation_size()), ObservationKind::field};
    for (const auto& a : mu.atoms) {
      for_nodes_near(a.x, [&](Eigen::Index k, const Point<Dim>& x) { out.values[k] += a.w * kernel_(x, a.x); });
    }
    return out;
  }

  Jet<Dim> adjoint_jet(const Eigen::VectorXd& y, const Point<Dim>& z, int order) const {
    Jet<Dim> jet;
    for_nodes_near(z, [&](Eigen::Index k, const Point<Dim>& x) {
      const double c = weights_[k] * y[k];
      if (c != 0.0) kernel_.accumulate(jet, c, x, z, order);
    });
    return jet;
  }

  double adjoint_value(const Eigen::VectorXd& y, const Point<Dim>& z) const { return adjoint_jet(y, z, 0).value; }
  Point<Dim> adjoint_grad(const Eigen::VectorXd& y, const Point<Dim>& z) const { return adjoint_jet(y, z, 1).grad; }
  Eigen::Matrix<double, Dim, Dim> adjoint_hess(const Eigen::VectorXd& y, const Point<Dim>& z) const {
    return adjoint_jet(y, z, 2).hess;
  }

  double inner(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
    return (weights_.array() * a.array() * b.array()).sum();
  }

 private:
  template <class F>
  void for_nodes_near(const Point<Dim>& z, F&& f) const {
    std::array<Eigen::Index, Dim> lo{}, hi{};
    for (int a = 0; a < Dim; ++a) {
      const double t0 = (z[a] - radius_ - domain_.lower[a]) / step_[a];
      const double t1 = (z[a] + radius_ - domain_.lower[a]) / step_[a];
      lo[a] = std::max<Eigen::Index>(0, static_cast<Eigen::Index>(std::ceil(t0)));
      hi[a] = std::min<Eigen::Index>(nodes_ - 1, static_cast<Eigen::Index>(std::floor(t1)));
      if (lo[a] > hi[a]) return;
    }
    if constexpr (Dim == 1) {
      for (Eigen::Index i = lo[0]; i <= hi[0]; ++i) f(i, node(i));
    } else {
      for (Eigen::Index j = lo[1]; j <= hi[1]; ++j) {
        for (Eigen::Index i = lo[0]; i <= hi[0]; ++i) {
          const Eigen::Index k = j * nodes_ + i;
          f(k, node(k));
        }
      }
    }
  }

  detail::HeatKernel<Dim> kernel_;
  Domain<Dim> domain_;
  int nodes_;
  std::array<double, Dim> step_{};
  Eigen::VectorXd weights_;
  double radius_ = 0.0;
};

/// K applied to the measure an extremal atom stands for.
template <ForwardOperator Op>
ObservationVector gram_column(const Op& op, const ExtremalAtom<Op::dim>& atom, const KRParams& params) {
  return op.apply(as_measure<Op::dim>(atom, params));
}

}  // namespace krgcg
