#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "krgcg/certificate.hpp"
#include "krgcg/operators.hpp"

namespace {

using namespace krgcg;
using P1 = Point<1>;

P1 at(double x) { return P1::Constant(x); }

const Domain<1> kDomain(at(0.0), at(20.0));
const KRParams kParams{0.9, 0.4, 1.0};

double heat(double T, double d) { return std::exp(-d * d / (4.0 * T)) / std::sqrt(4.0 * std::numbers::pi * T); }

TEST(SensorOperator, EvenLayoutIncludesEndpoints) {
  const auto K = GaussianSensorOperator<1>::even(0.045, kDomain, 30);
  ASSERT_EQ(K.observation_size(), 30);
  EXPECT_DOUBLE_EQ(K.sensors().front()[0], 0.0);
  EXPECT_DOUBLE_EQ(K.sensors().back()[0], 20.0);
  EXPECT_NEAR(K.sensors()[1][0], 20.0 / 29.0, 1e-15);
}

TEST(SensorOperator, ApplyAtSensor) {
  const auto K = GaussianSensorOperator<1>::even(0.045, kDomain, 30);
  DiscreteMeasure<1> mu;
  mu.add(at(20.0 / 29.0), 1.0);
  const auto y = K.apply(mu);
  EXPECT_NEAR(y.values[1], 1.329808, 1e-6);
  EXPECT_NEAR(y.values[2], heat(0.045, 20.0 / 29.0), 1e-15);
  EXPECT_EQ(K.apply(DiscreteMeasure<1>{}).values, Eigen::VectorXd::Zero(30));
}

TEST(SensorOperator, AdjointConsistency) {
  const auto K = GaussianSensorOperator<1>::even(0.045, kDomain, 30);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> x(0.0, 20.0), w(-2.0, 2.0);
  for (int t = 0; t < 20; ++t) {
    DiscreteMeasure<1> mu;
    for (int i = 0; i < 4; ++i) mu.add(at(x(rng)), w(rng));
    Eigen::VectorXd y(30);
    for (auto& v : y) v = w(rng);
    double pairing = 0.0;
    for (const auto& a : mu.atoms) pairing += a.w * K.adjoint_value(y, a.x);
    EXPECT_NEAR(K.inner(K.apply(mu).values, y), pairing, 1e-12);
  }
}

TEST(SensorOperator, Linear) {
  const auto K = GaussianSensorOperator<1>::even(0.045, kDomain, 30);
  DiscreteMeasure<1> mu, nu;
  mu.add(at(3.1), 1.5);
  mu.add(at(12.0), -0.5);
  nu.add(at(3.1), 2.0);
  nu.add(at(17.7), 0.25);
  const Eigen::VectorXd lhs = K.apply(2.0 * mu + (-3.0) * nu).values;
  const Eigen::VectorXd rhs = 2.0 * K.apply(mu).values - 3.0 * K.apply(nu).values;
  EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(SensorOperator, TwoDimensionalGrid) {
  const Domain<2> d(Point<2>(0, 0), Point<2>(1, 2));
  const auto K = GaussianSensorOperator<2>::even(0.1, d, 3);
  ASSERT_EQ(K.observation_size(), 9);
  DiscreteMeasure<2> mu;
  mu.add(Point<2>(0.5, 1.0), 2.0);
  const double expected = 2.0 / (4.0 * std::numbers::pi * 0.1);
  EXPECT_NEAR(K.apply(mu).values[4], expected, 1e-12);
}

TEST(FieldOperator, TrapezoidWeightsAndInner) {
  const GaussianFieldOperator<1> K(0.045, kDomain, 2001);
  ASSERT_EQ(K.observation_size(), 2001);
  EXPECT_NEAR(K.weights().sum(), 20.0, 1e-12);
  EXPECT_NEAR(K.weights()[0], 0.005, 1e-15);
  EXPECT_NEAR(K.weights()[1], 0.01, 1e-15);
  EXPECT_DOUBLE_EQ(K.node(2000)[0], 20.0);
  // The field of a unit Dirac well inside the domain integrates to about 1.
  DiscreteMeasure<1> mu;
  mu.add(at(10.003), 1.0);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(2001);
  EXPECT_NEAR(K.inner(K.apply(mu).values, ones), 1.0, 1e-8);
}

TEST(FieldOperator, AdjointConsistency) {
  const GaussianFieldOperator<1> K(0.045, kDomain, 2001);
  Eigen::VectorXd y(2001);
  for (Eigen::Index k = 0; k < y.size(); ++k) y[k] = std::sin(0.25 * std::numbers::pi * K.node(k)[0]) + 1.0;
  DiscreteMeasure<1> mu;
  mu.add(at(3.3), 1.2);
  mu.add(at(15.1), -0.4);
  mu.add(at(0.05), 0.7);
  double pairing = 0.0;
  for (const auto& a : mu.atoms) pairing += a.w * K.adjoint_value(y, a.x);
  EXPECT_NEAR(K.inner(K.apply(mu).values, y), pairing, 1e-12);
}

template <class Op>
void expect_adjoint_derivatives(const Op& K, const Eigen::VectorXd& y, double lo, double hi) {
  const double h = 1e-5;
  for (int t = 0; t <= 40; ++t) {
    const P1 z = at(lo + (hi - lo) * t / 40.0);
    const auto jet = K.adjoint_jet(y, z, 2);
    const double fd1 = (K.adjoint_value(y, z + at(h)) - K.adjoint_value(y, z - at(h))) / (2 * h);
    const double fd2 = (K.adjoint_grad(y, z + at(h))[0] - K.adjoint_grad(y, z - at(h))[0]) / (2 * h);
    EXPECT_NEAR(jet.value, K.adjoint_value(y, z), 1e-14);
    EXPECT_NEAR(jet.grad[0], fd1, 1e-6 * (1.0 + std::abs(fd1)));
    EXPECT_NEAR(jet.hess(0, 0), fd2, 1e-5 * (1.0 + std::abs(fd2)));
  }
}

TEST(Operators, AdjointDerivativesMatchFiniteDifferences) {
  const auto S = GaussianSensorOperator<1>::even(0.045, kDomain, 30);
  Eigen::VectorXd ys(30);
  for (int i = 0; i < 30; ++i) ys[i] = std::cos(0.7 * i);
  expect_adjoint_derivatives(S, ys, 0.1, 19.9);

  const GaussianFieldOperator<1> F(0.045, kDomain, 2001);
  Eigen::VectorXd yf(2001);
  for (Eigen::Index k = 0; k < yf.size(); ++k) yf[k] = std::sin(0.25 * std::numbers::pi * F.node(k)[0]) + 1.0;
  expect_adjoint_derivatives(F, yf, 0.1, 19.9);
}

TEST(Operators, GramColumnIsForwardOfAtom) {
  const auto K = GaussianSensorOperator<1>::even(0.045, kDomain, 30);
  const ExtremalAtom<1> d = DipoleAtom<1>{at(6.26), at(6.78)};
  EXPECT_TRUE(gram_column(K, d, kParams).values.isApprox(K.apply(as_measure<1>(d, kParams)).values, 1e-14));
}

// q(z) = c * z is not a certificate of the heat operator, so a stub operator
// with an affine adjoint exercises Psi directly.
struct AffineOp {
  static constexpr int dim = 1;
  ObservationVector apply(const DiscreteMeasure<1>& mu) const {
    ObservationVector out{Eigen::VectorXd::Zero(1), ObservationKind::sensor};
    for (const auto& a : mu.atoms) out.values[0] += a.w * a.x[0];
    return out;
  }
  Jet<1> adjoint_jet(const Eigen::VectorXd& y, const P1& z, int) const {
    Jet<1> j;
    j.value = y[0] * z[0];
    j.grad[0] = y[0];
    return j;
  }
  double adjoint_value(const Eigen::VectorXd& y, const P1& z) const { return y[0] * z[0]; }
  P1 adjoint_grad(const Eigen::VectorXd& y, const P1&) const { return at(y[0]); }
  Eigen::Matrix<double, 1, 1> adjoint_hess(const Eigen::VectorXd&, const P1&) const { return {}; }
  double inner(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const { return a.dot(b); }
  Eigen::Index observation_size() const { return 1; }
  ObservationKind kind() const { return ObservationKind::sensor; }
};
static_assert(ForwardOperator<AffineOp>);

TEST(Certificate, PsiOfAffineCertificate) {
  const AffineOp op;
  // residual -1 and gamma 1 give q(z) = z.
  const DualCertificate<AffineOp> cert(op, 1.0, Eigen::VectorXd::Constant(1, -1.0));
  EXPECT_NEAR(cert.q_value(at(2.5)), 2.5, 1e-15);
  EXPECT_NEAR(cert.psi_value(kParams, at(1.0), at(0.0)), 1.0 / 1.4, 1e-15);
  EXPECT_EQ(cert.psi_value(kParams, at(1.0), at(1.0)), 0.0);
}

TEST(Certificate, QIsNegativeScaledAdjointOfResidual) {
  const auto K = GaussianSensorOperator<1>::even(0.045, kDomain, 30);
  DiscreteMeasure<1> target;
  target.add(at(7.0), 2.0);
  const QuadraticFidelity f(60.0, K.apply(target));
  const auto cert = build_certificate(K, f, DiscreteMeasure<1>{});
  // With mu = 0: q = gamma K_* K(2 delta_7).
  double expected = 0.0;
  for (const auto& s : K.sensors()) expected += 60.0 * 2.0 * heat(0.045, s[0] - 7.0) * heat(0.045, s[0] - 7.2);
  EXPECT_NEAR(cert.q_value(at(7.2)), expected, 1e-10 * expected);
  EXPECT_FALSE(cert.is_zero());
  EXPECT_TRUE(build_certificate(K, f, target).is_zero());
}

DualCertificate<GaussianSensorOperator<1>> random_certificate(const GaussianSensorOperator<1>& K, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::VectorXd r(K.observation_size());
  for (auto& v : r) v = u(rng);
  return DualCertificate<GaussianSensorOperator<1>>(K, 60.0, r);
}

TEST(Certificate, PsiAntisymmetric) {
  const auto K = GaussianSensorOperator<1>::even(0.045, kDomain, 30);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> x(0.0, 20.0);
  for (int t = 0; t < 50; ++t) {
    const auto cert = random_certificate(K, rng);
    const P1 a = at(x(rng)), b = at(x(rng));
    EXPECT_NEAR(cert.psi_value(kParams, a, b), -cert.psi_value(kParams, b, a), 1e-13);
  }
}

TEST(Certificate, PsiBoundedByQ) {
  const auto K = GaussianSensorOperator<1>::even(0.045, kDomain, 30);
  std::mt19937_64 rng(3);
  for (int t = 0; t < 5; ++t) {
    const auto cert = random_certificate(K, rng);
    const auto q = maximize_abs_q(cert, kDomain);
    const auto psi = maximize_psi(cert, kParams, kDomain);
    EXPECT_LE(psi.value, 2.0 * q.value / kParams.beta + 1e-9);
    EXPECT_GT(q.value, 0.0);
  }
}

TEST(Certificate, PsiJetMatchesFiniteDifferences) {
  const auto K = GaussianSensorOperator<1>::even(0.045, kDomain, 30);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> x(0.0, 20.0), pp(0.2, 1.0);
  const double h = 1e-5;
  for (int t = 0; t < 50; ++t) {
    const auto cert = random_certificate(K, rng);
    const KRParams k{0.9, 0.4, pp(rng)};
    Eigen::Vector2d v(x(rng), x(rng));
    if (std::abs(v[0] - v[1]) < 0.05) continue;
    auto f = [&](const Eigen::Vector2d& s) { return cert.psi_value(k, at(s[0]), at(s[1])); };
    auto g = [&](const Eigen::Vector2d& s) { return cert.psi_grad(k, at(s[0]), at(s[1])); };
    const auto jet = cert.psi_jet(k, at(v[0]), at(v[1]));
    EXPECT_NEAR(jet.value, f(v), 1e-14);
    for (int i = 0; i < 2; ++i) {
      const Eigen::Vector2d e = h * Eigen::Vector2d::Unit(i);
      const double fd = (f(v + e) - f(v - e)) / (2 * h);
      EXPECT_NEAR(jet.grad[i], fd, 1e-6 * (1.0 + std::abs(fd)));
      const Eigen::Vector2d fdg = (g(v + e) - g(v - e)) / (2 * h);
      for (int j = 0; j < 2; ++j) EXPECT_NEAR(jet.hess(j, i), fdg[j], 1e-4 * (1.0 + std::abs(fdg[j])));
    }
  }
}

TEST(Certificate, DiagonalTube) {
  const auto K = GaussianSensorOperator<1>::even(0.045, kDomain, 30);
  std::mt19937_64 rng(5);
  const auto cert = random_certificate(K, rng);
  try {
    cert.psi_grad(kParams, at(3.0), at(3.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::diagonal_singularity);
  }
  EXPECT_THROW(cert.psi_hess(kParams, at(3.0), at(3.0 + 1e-9), 1e-6), Error);
  EXPECT_NO_THROW(cert.psi_hess(kParams, at(3.0), at(3.1)));
}

TEST(Maximizer, DeterministicForFixedSeed) {
  const auto K = GaussianSensorOperator<1>::even(0.045, kDomain, 30);
  std::mt19937_64 rng(6);
  const auto cert = random_certificate(K, rng);
  MaximizerSettings s;
  s.multistart.seed = 42;
  const auto a = maximize_psi(cert, kParams, kDomain, s);
  const auto b = maximize_psi(cert, kParams, kDomain, s);
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.argmax, b.argmax);
  const auto qa = maximize_abs_q(cert, kDomain, s);
  const auto qb = maximize_abs_q(cert, kDomain, s);
  EXPECT_EQ(qa.value, qb.value);
  EXPECT_EQ(qa.argmax, qb.argmax);
}

TEST(Maximizer, FindsKnownPeak) {
  const auto K = GaussianSensorOperator<1>::even(0.045, kDomain, 30);
  DiscreteMeasure<1> target;
  target.add(at(20.0 * 9 / 29.0), 1.0);  // on a sensor
  const QuadraticFidelity f(1.0, K.apply(target));
  const auto cert = build_certificate(K, f, DiscreteMeasure<1>{});
  const auto rep = maximize_abs_q(cert, kDomain);
  // Sensors are far apart relative to the kernel width, so the peak is at the source.
  EXPECT_NEAR(rep.argmax[0], 20.0 * 9 / 29.0, 1e-6);
  EXPECT_GE(rep.value, cert.q_value(at(20.0 * 9 / 29.0)) - 1e-12);
}

TEST(Maximizer, ZeroCertificate) {
  const auto K = GaussianSensorOperator<1>::even(0.045, kDomain, 30);
  const DualCertificate<GaussianSensorOperator<1>> cert(K, 1.0, Eigen::VectorXd::Zero(30));
  EXPECT_EQ(maximize_abs_q(cert, kDomain).value, 0.0);
  EXPECT_EQ(maximize_psi(cert, kParams, kDomain).value, 0.0);
}

}  // namespace
