#include "doctest.h"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/minima.hpp>

#include <cmath>

#include "blobflow/convex_energy.hpp"
#include "blobflow/ensemble.hpp"

using namespace blobflow;
using doctest::Approx;

namespace {

// independent prox: Brent minimization of the prox objective
double prox_oracle(const EnergyFamily& f, double delta, double a) {
  const double upper = std::min(f.domain_upper(), a + 10.0 + 10.0 * delta);
  auto objective = [&](double b) { return energy_value(f, b).value() + (a - b) * (a - b) / (2.0 * delta); };
  return boost::math::tools::brent_find_minima(objective, 0.0, upper, 60).first;
}

// independent e(a) = a f(a) - 2∫₀^a f by Gauss-Kronrod quadrature
double h1_oracle(const EnergyFamily& f, double a) {
  auto fv = [&](double s) { return energy_value(f, s).value(); };
  const double integral = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(fv, 0.0, a, 15, 1e-13);
  return a * fv(a) - 2.0 * integral;
}

// independent sup_a {ab - f_ε(a)} on a fine grid refined around the best node
double conjugate_oracle(const RegularizedEnergy& reg, double b, double amax) {
  double best = 0.0, arg = 0.0;
  const int n = 200000;
  for (int i = 0; i <= n; ++i) {
    const double a = amax * i / n;
    const double v = a * b - reg_value(reg, a).value();
    if (v > best) best = v, arg = a;
  }
  auto neg = [&](double a) { return -(a * b - reg_value(reg, a).value()); };
  const double lo = std::max(0.0, arg - amax / n), hi = arg + amax / n;
  const auto r = boost::math::tools::brent_find_minima(neg, lo, hi, 60);
  return std::max(best, -r.second);
}

double central_second(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
}

}  // namespace

TEST_CASE("energy_value examples") {
  CHECK(energy_value(EnergyFamily::heat(), 1.0).value() == Approx(-1.0));
  CHECK(energy_value(EnergyFamily::height_constraint(), 0.5).value() == 0.0);
  CHECK(energy_value(EnergyFamily::porous_medium(2.0), 0.0).value() == 0.0);
  CHECK(energy_value(EnergyFamily::heat(), 0.0).value() == 0.0);
  CHECK(energy_value(EnergyFamily::heat(), -1.0).is_infinite());
  CHECK(energy_value(EnergyFamily::height_constraint(), 1.5).is_infinite());
  CHECK_THROWS_AS(energy_value(EnergyFamily::heat(), -1.0).value(), std::domain_error);
}

TEST_CASE("family parameter ranges") {
  CHECK_THROWS(EnergyFamily::porous_medium(1.0));
  CHECK_THROWS(EnergyFamily::fast_diffusion(1.0 / 3.0, 1));
  CHECK_NOTHROW(EnergyFamily::fast_diffusion(0.34, 1));
  CHECK_THROWS(EnergyFamily::fast_diffusion(0.5, 2));
  CHECK(EnergyFamily::fast_diffusion_lower_bound(2) == Approx(0.5));
}

TEST_CASE("prox examples against grid minimization") {
  CHECK(prox(EnergyFamily::height_constraint(), 0.3, 1.7) == 1.0);
  CHECK(prox(EnergyFamily::height_constraint(), 2.0, 0.4) == 0.4);
  CHECK(prox(EnergyFamily::porous_medium(2.0), 0.5, 1.0) == Approx(0.5).epsilon(1e-12));
  CHECK(prox(EnergyFamily::porous_medium(2.0), 0.5, 1.0) ==
        Approx(prox_oracle(EnergyFamily::porous_medium(2.0), 0.5, 1.0)).epsilon(1e-7));
  CHECK(prox(EnergyFamily::fast_diffusion(0.5, 1), 1.0, 0.0) == Approx(1.0).epsilon(1e-12));
  CHECK(prox(EnergyFamily::fast_diffusion(0.5, 1), 1.0, 0.0) ==
        Approx(prox_oracle(EnergyFamily::fast_diffusion(0.5, 1), 1.0, 0.0)).epsilon(1e-7));
}

TEST_CASE("prox agrees with Brent minimization across families") {
  Rng rng(3);
  for (const auto& f : {EnergyFamily::heat(), EnergyFamily::porous_medium(3.0), EnergyFamily::fast_diffusion(0.6, 1),
                        EnergyFamily::height_constraint()}) {
    for (int i = 0; i < 30; ++i) {
      const double delta = std::pow(10.0, rng.uniform(-2, 0)), a = rng.uniform(0, 5);
      CAPTURE(f.name());
      CAPTURE(delta);
      CAPTURE(a);
      CHECK(prox(f, delta, a) == Approx(prox_oracle(f, delta, a)).epsilon(1e-6).scale(1.0));
    }
  }
}

TEST_CASE("heat prox at tiny arguments stays positive and accurate") {
  const auto f = EnergyFamily::heat();
  for (double a : {0.0, 1e-12, 1e-6, 1e-3}) {
    const double delta = 0.01;
    const double b = prox(f, delta, a);
    CHECK(b > 0.0);
    // stationarity log b + (b - a)/δ = 0
    CHECK(std::log(b) + (b - a) / delta == Approx(0.0).scale(1.0).epsilon(1e-10));
  }
}

TEST_CASE("moreau_value examples") {
  CHECK(moreau_value(EnergyFamily::height_constraint(), 1.0, 2.0) == Approx(0.5));
  CHECK(moreau_value(EnergyFamily::porous_medium(2.0), 0.5, 1.0) == Approx(0.5));
  CHECK(moreau_value(EnergyFamily::porous_medium(2.0), 0.5, 1.0) == Approx(1.0 / (1.0 + 2.0 * 0.5)));
  CHECK(moreau_value(EnergyFamily::height_constraint(), 0.7, 0.5) == 0.0);
  // envelope as a minimum over a grid
  const auto f = EnergyFamily::height_constraint();
  double best = 1e300;
  for (int i = 0; i <= 100000; ++i) {
    const double b = i / 100000.0;
    best = std::min(best, (2.0 - b) * (2.0 - b) / 2.0);
  }
  CHECK(moreau_value(f, 1.0, 2.0) == Approx(best));
}

TEST_CASE("reg_value examples") {
  const RegularizedEnergy heat(EnergyFamily::heat(), 0.3);
  CHECK(reg_value(heat, 0.0).value() == 0.0);
  const RegularizedEnergy pme(EnergyFamily::porous_medium(2.0), 0.5);
  CHECK(reg_value(pme, 1.0).value() == Approx(0.75));
  CHECK(reg_value(pme, 1.0).value() ==
        Approx(0.25 + moreau_value(EnergyFamily::porous_medium(2.0), 0.5, 1.0) -
               moreau_value(EnergyFamily::porous_medium(2.0), 0.5, 0.0)));
  CHECK(reg_value(pme, -1.0).is_infinite());
}

TEST_CASE("reg_derivative examples match central differences") {
  const RegularizedEnergy pme(EnergyFamily::porous_medium(2.0), 0.5);
  const RegularizedEnergy height(EnergyFamily::height_constraint(), 1.0);
  auto fd = [](const RegularizedEnergy& r, double a) {
    const double h = 1e-6;
    return (reg_value(r, a + h).value() - reg_value(r, a - h).value()) / (2.0 * h);
  };
  CHECK(reg_derivative(pme, 1.0) == Approx(1.5));
  CHECK(reg_derivative(pme, 1.0) == Approx(fd(pme, 1.0)).epsilon(1e-7));
  CHECK(reg_derivative(height, 2.0) == Approx(3.0));
  CHECK(reg_derivative(height, 2.0) == Approx(fd(height, 2.0)).epsilon(1e-7));
  CHECK(reg_derivative(height, 0.0) == 0.0);
  // below the constraint J_δ(a) = a, so f_ε'(a) = δa
  CHECK(reg_derivative(RegularizedEnergy(EnergyFamily::height_constraint(), 0.2), 0.5) == Approx(0.1));
}

TEST_CASE("reg_conjugate examples") {
  const RegularizedEnergy pme(EnergyFamily::porous_medium(2.0), 0.5);
  CHECK(reg_conjugate(pme, 3.0) == Approx(3.0).epsilon(1e-10));
  CHECK(reg_conjugate(pme, 3.0) == Approx(conjugate_oracle(pme, 3.0, 5.0)).epsilon(1e-9));
  CHECK(reg_conjugate(pme, pme.derivative_at_zero() - 1.0) == 0.0);
  const RegularizedEnergy heat(EnergyFamily::heat(), 1.0);
  CHECK(reg_conjugate(heat, heat.derivative_at_zero() - 0.5) == 0.0);
  const double b = reg_derivative(heat, 2.0);
  CHECK(reg_conjugate(heat, b) == Approx(2.0 * b - reg_value(heat, 2.0).value()).epsilon(1e-12));
  CHECK(reg_conjugate(heat, b) == Approx(conjugate_oracle(heat, b, 6.0)).epsilon(1e-8));
}

TEST_CASE("reg_conjugate_derivative examples and round trip") {
  const RegularizedEnergy pme(EnergyFamily::porous_medium(2.0), 0.5);
  CHECK(reg_conjugate_derivative(pme, 1.5) == Approx(1.0).epsilon(1e-12));
  Rng rng(8);
  for (const auto& f : {EnergyFamily::heat(), EnergyFamily::porous_medium(2.0), EnergyFamily::fast_diffusion(0.5, 1),
                        EnergyFamily::height_constraint()}) {
    const RegularizedEnergy reg(f, 0.2);
    CHECK(reg_conjugate_derivative(reg, reg.derivative_at_zero() - 5.0) == 0.0);
    for (int i = 0; i < 50; ++i) {
      const double b = reg.derivative_at_zero() + rng.uniform(1e-6, 20.0);
      CHECK(reg_derivative(reg, reg_conjugate_derivative(reg, b)) == Approx(b).epsilon(1e-10));
    }
  }
}

TEST_CASE("curvature of f_eps lies in [delta, delta + 1/delta]") {
  Rng rng(9);
  for (const auto& f : {EnergyFamily::heat(), EnergyFamily::porous_medium(2.0), EnergyFamily::fast_diffusion(0.5, 1),
                        EnergyFamily::height_constraint()}) {
    for (double delta : {0.01, 0.2, 1.0}) {
      const RegularizedEnergy reg(f, delta);
      const double tol = 1e-4 * (delta + 1.0 / delta);
      for (int i = 0; i < 40; ++i) {
        const double a = rng.uniform(0.01, 10.0);
        const double c = central_second([&](double x) { return reg_value(reg, x).value(); }, a, 1e-4 * std::max(1.0, a));
        CHECK(c >= delta - tol);
        CHECK(c <= delta + 1.0 / delta + tol);
      }
    }
  }
}

TEST_CASE("h1_density examples against quadrature of the definition") {
  CHECK(h1_density(EnergyFamily::heat(), 2.0).value() == Approx(2.0));
  CHECK(h1_density(EnergyFamily::heat(), 2.0).value() == Approx(h1_oracle(EnergyFamily::heat(), 2.0)).epsilon(1e-10));
  CHECK(h1_density(EnergyFamily::porous_medium(2.0), 1.0).value() == Approx(1.0 / 3.0));
  CHECK(h1_density(EnergyFamily::porous_medium(2.0), 1.0).value() ==
        Approx(h1_oracle(EnergyFamily::porous_medium(2.0), 1.0)).epsilon(1e-10));
  for (const auto& f : {EnergyFamily::heat(), EnergyFamily::porous_medium(3.0), EnergyFamily::fast_diffusion(0.5, 1),
                        EnergyFamily::height_constraint()})
    CHECK(h1_density(f, 0.0).value() == 0.0);
  CHECK(h1_density(EnergyFamily::height_constraint(), 0.5).value() == 0.0);
  CHECK(h1_density(EnergyFamily::height_constraint(), 1.5).is_infinite());
  CHECK(h1_density(EnergyFamily::heat(), -0.1).is_infinite());
}

TEST_CASE("custom energy uses the generic prox and quadrature paths") {
  CustomEnergy square{[](double s) { return s * s; }, [](double s) { return 2.0 * s; }};
  const auto custom = EnergyFamily::custom(square);
  const auto pme = EnergyFamily::porous_medium(2.0);
  for (double a : {0.0, 0.3, 1.0, 4.0}) {
    CHECK(prox(custom, 0.4, a) == Approx(prox(pme, 0.4, a)).epsilon(1e-10));
    CHECK(h1_density(custom, a).value() == Approx(h1_density(pme, a).value()).epsilon(1e-9).scale(1.0));
  }
}

TEST_CASE("h1_truncated examples") {
  const auto heat = EnergyFamily::heat();
  CHECK(h1_truncation_point(heat, 1.0) == Approx(1.0).epsilon(1e-10));
  CHECK(h1_truncated(heat, 1.0, 0.5).value() == Approx(0.125));
  CHECK(h1_truncated(heat, 1.0, 3.0).value() == Approx(2.5));
  CHECK(h1_truncated(EnergyFamily::porous_medium(2.0), 0.7, 0.0).value() == 0.0);
  CHECK(h1_truncated(EnergyFamily::height_constraint(), 0.7, 5.0).is_finite());
}

TEST_CASE("regularized densities of the Hdot^-1 energy are consistent") {
  const RegularizedEnergy reg(EnergyFamily::heat(), 0.3);
  for (double a : {0.2, 1.0, 3.0}) {
    const double h = 1e-5;
    const double fd = (h1_density(reg, a + h).value() - h1_density(reg, a - h).value()) / (2.0 * h);
    CHECK(fd == Approx(h1_derivative(reg, a)).epsilon(1e-6));
    CHECK(h1_derivative(reg, a) == Approx(a * reg_derivative(reg, a) - reg_value(reg, a).value()).epsilon(1e-10));
  }
}
