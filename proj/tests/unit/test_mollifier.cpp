#include "doctest.h"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>

#include "blobflow/dynamics.hpp"
#include "blobflow/mollifier.hpp"

using namespace blobflow;
using doctest::Approx;

namespace {
double kv(const MollifierKernel& k, std::initializer_list<double> x) {
  std::vector<double> v(x);
  return kernel_value(k, v);
}
}  // namespace

TEST_CASE("kernel_value examples") {
  CHECK(kv(MollifierKernel::gaussian(1.0), {0.0}) == Approx(1.0 / std::sqrt(2.0 * M_PI)).epsilon(1e-15));
  CHECK(kv(MollifierKernel::gaussian(0.5), {0.0}) == Approx(2.0 / std::sqrt(2.0 * M_PI)).epsilon(1e-15));
  const auto k = MollifierKernel::gaussian(0.37);
  for (double x : {0.1, 0.5, 1.3}) CHECK(kv(k, {x}) == kv(k, {-x}));
  CHECK(kv(k, {0.2, -0.1}) == kv(k, {-0.2, 0.1}));
  // hard truncation at 8ε
  CHECK(kv(k, {8.01 * 0.37}) == 0.0);
  CHECK(kv(k, {7.99 * 0.37}) > 0.0);
  // compact support of the bump
  CHECK(kv(MollifierKernel::bump(0.5), {0.5}) == 0.0);
  CHECK(kv(MollifierKernel::bump(0.5), {0.49}) > 0.0);
}

TEST_CASE("kernel scaling identity is exact") {
  for (double eps : {0.05, 0.3, 2.0})
    for (double x : {0.0, 0.013, 0.4, 1.1}) {
      const double y = x / eps;
      const double lhs = kernel_value(MollifierKernel::gaussian(eps), std::span<const double>(&x, 1));
      const double rhs = std::pow(eps, -1) * kernel_value(MollifierKernel::gaussian(1.0), std::span<const double>(&y, 1));
      CHECK(lhs == rhs);
    }
}

TEST_CASE("kernel normalization by independent quadrature") {
  using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
  for (const auto& k : {MollifierKernel::gaussian(0.3), MollifierKernel::bump(0.3, 3), MollifierKernel::bump(0.3, 5)}) {
    auto f = [&](double x) { return kernel_value(k, std::span<const double>(&x, 1)); };
    const double r = k.support_radius();
    CHECK(GK::integrate(f, -r, r, 20, 1e-14) == Approx(1.0).epsilon(1e-10));
  }
  // d = 2 radial integral
  for (const auto& k : {MollifierKernel::gaussian(1.0), MollifierKernel::bump(1.0, 3)}) {
    auto f = [&](double r) {
      const double x[2] = {r, 0.0};
      return 2.0 * M_PI * r * kernel_value(k, x);
    };
    CHECK(GK::integrate(f, 0.0, k.support_radius(), 20, 1e-14) == Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("kernel_gradient examples") {
  const auto unit = MollifierKernel::gaussian(1.0);
  const double zero = 0.0, one = 1.0;
  CHECK(kernel_gradient(MollifierKernel::gaussian(0.2), std::span<const double>(&zero, 1))[0] == 0.0);
  CHECK(kernel_gradient(unit, std::span<const double>(&one, 1))[0] ==
        Approx(-std::exp(-0.5) / std::sqrt(2.0 * M_PI)).epsilon(1e-14));
  const double x[2] = {0.3, -0.7}, mx[2] = {-0.3, 0.7};
  const auto g = kernel_gradient(unit, x), gm = kernel_gradient(unit, mx);
  CHECK(g[0] == -gm[0]);
  CHECK(g[1] == -gm[1]);
  for (const auto& k : {MollifierKernel::gaussian(0.4), MollifierKernel::bump(0.4, 3)}) {
    for (double p : {0.05, 0.17, 0.33}) {
      const double h = 1e-6;
      const double a = p + h, b = p - h;
      const double fd = (kernel_value(k, std::span<const double>(&a, 1)) - kernel_value(k, std::span<const double>(&b, 1))) / (2 * h);
      CHECK(kernel_gradient(k, std::span<const double>(&p, 1))[0] == Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("mollified_density examples") {
  const auto k = MollifierKernel::gaussian(0.2);
  const ParticleEnsemble one(PointSet(1, std::vector<double>{0.0}));
  const PointSet origin(1, std::vector<double>{0.0});
  CHECK(mollified_density(one, k, origin)[0] == kv(k, {0.0}));

  const double s = 0.15;
  const ParticleEnsemble pair(PointSet(1, std::vector<double>{-s, s}));
  CHECK(mollified_density(pair, k, origin)[0] == Approx(kv(k, {s})).epsilon(1e-15));

  const ParticleEnsemble cloud(PointSet(1, std::vector<double>{-0.4, 0.1, 0.2, 0.75}));
  const QuadratureGrid g = build_grid(cloud, 0.2);
  const auto mu = mollified_density(cloud, k, g.nodes());
  double mass = 0.0;
  for (double v : mu) {
    CHECK(v >= 0.0);
    mass += v * g.weight();
  }
  CHECK(mass == Approx(1.0).epsilon(1e-4));
}

TEST_CASE("mollified_density_gradient examples") {
  const auto k = MollifierKernel::gaussian(0.3);
  const ParticleEnsemble one(PointSet(2, std::vector<double>{0.1, -0.2}));
  const auto at = mollified_density_gradient(one, k, PointSet(2, std::vector<double>{0.1, -0.2}));
  CHECK(at[0][0] == Approx(0.0).scale(1.0).epsilon(1e-15));
  CHECK(at[0][1] == Approx(0.0).scale(1.0).epsilon(1e-15));

  Rng rng(4);
  std::vector<double> c(40);
  for (double& v : c) v = rng.uniform(-1, 1);
  const ParticleEnsemble e(PointSet(2, c));
  for (int i = 0; i < 5; ++i) {
    const double y[2] = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const auto g = mollified_density_gradient(e, k, PointSet(2, std::vector<double>{y[0], y[1]}));
    for (int a = 0; a < 2; ++a) {
      const double h = 1e-6;
      std::vector<double> p{y[0], y[1]}, m{y[0], y[1]};
      p[a] += h;
      m[a] -= h;
      const double fd = (mollified_density(e, k, PointSet(2, p))[0] - mollified_density(e, k, PointSet(2, m))[0]) / (2 * h);
      CHECK(g[0][a] == Approx(fd).epsilon(1e-5));
    }
  }
  // reflecting particles and query flips the gradient
  std::vector<double> neg(c);
  for (double& v : neg) v = -v;
  const ParticleEnsemble reflected(PointSet(2, neg));
  const auto g1 = mollified_density_gradient(e, k, PointSet(2, std::vector<double>{0.2, 0.1}));
  const auto g2 = mollified_density_gradient(reflected, k, PointSet(2, std::vector<double>{-0.2, -0.1}));
  CHECK(g1[0][0] == Approx(-g2[0][0]).epsilon(1e-13));
  CHECK(g1[0][1] == Approx(-g2[0][1]).epsilon(1e-13));
}

TEST_CASE("validate_kernel reports") {
  for (int d = 1; d <= 3; ++d) {
    const auto v = validate_kernel(MollifierKernel::gaussian(0.1), d);
    CHECK(v.ok());
    CHECK(v.normalization_error < 1e-8);
  }
  MollifierKernel bad = MollifierKernel::gaussian(0.1);
  bad.effective_r = 1.5;
  const auto v = validate_kernel(bad, 2);
  CHECK_FALSE(v.ok());
  CHECK_FALSE(v.exponent_admissible);
  MollifierKernel low_order = MollifierKernel::bump(0.1, 2);
  CHECK_FALSE(validate_kernel(low_order, 1).ok());
}

TEST_CASE("kernel norms match closed forms") {
  const auto k = MollifierKernel::gaussian(0.5);
  const KernelNorms n = kernel_norms(k, 1);
  CHECK(n.sup == Approx(2.0 / std::sqrt(2.0 * M_PI)));
  // ‖φ'‖₁ = 2φ(0) for the unit Gaussian, scaled by 1/ε
  CHECK(n.grad_l1 == Approx(2.0 / std::sqrt(2.0 * M_PI) / 0.5).epsilon(1e-10));
  // ‖φ''‖₁ = 4φ(1), scaled by 1/ε²
  CHECK(n.hess_l1 == Approx(4.0 * std::exp(-0.5) / std::sqrt(2.0 * M_PI) / 0.25).epsilon(1e-8));
}
