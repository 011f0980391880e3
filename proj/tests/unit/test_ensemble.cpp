#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "blobflow/ensemble.hpp"
#include "blobflow/reference.hpp"

using namespace blobflow;
using doctest::Approx;

namespace {
ParticleEnsemble line(std::vector<double> xs) { return ParticleEnsemble(PointSet(1, std::move(xs))); }

ReferenceDensity uniform01() {
  return ReferenceDensity::on_interval([](double x) { return x >= 0.0 && x <= 1.0 ? 1.0 : 0.0; }, 0.0, 1.0,
                                       [](double x) { return std::clamp(x, 0.0, 1.0); }, "uniform");
}

ReferenceDensity narrow_gaussian(double mean, double s) {
  return ReferenceDensity::on_interval(
      [=](double x) { return std::exp(-0.5 * (x - mean) * (x - mean) / (s * s)) / (s * std::sqrt(2.0 * M_PI)); },
      mean - 12 * s, mean + 12 * s);
}
}  // namespace

TEST_CASE("quantile placement examples") {
  const auto e = prepare_initial_particles(uniform01(), 2, 0, PlacementMode::QuantileGrid1D);
  CHECK(e[0][0] == Approx(0.25).epsilon(1e-12));
  CHECK(e[1][0] == Approx(0.75).epsilon(1e-12));
  const auto med = prepare_initial_particles(narrow_gaussian(0.3, 0.2), 1, 0, PlacementMode::QuantileGrid1D);
  CHECK(med[0][0] == Approx(0.3).epsilon(1e-9));
  CHECK(med.weight() * static_cast<double>(med.size()) == 1.0);
}

TEST_CASE("tabulated CDF matches the closed form") {
  const auto tab = narrow_gaussian(0.0, 1.0);
  for (double x : {-2.0, -0.5, 0.0, 0.7, 1.9}) CHECK(tab.cdf(x) == Approx(0.5 * std::erfc(-x / std::sqrt(2.0))).epsilon(1e-10));
  CHECK(tab.mass() == Approx(1.0).epsilon(1e-8));
}

TEST_CASE("rejection sampling is deterministic and seed dependent") {
  const auto ref = narrow_gaussian(0.0, 0.5);
  const auto a = prepare_initial_particles(ref, 300, 42, PlacementMode::Rejection);
  const auto b = prepare_initial_particles(ref, 300, 42, PlacementMode::Rejection);
  const auto c = prepare_initial_particles(ref, 300, 43, PlacementMode::Rejection);
  CHECK(a.positions().coords() == b.positions().coords());
  CHECK(a.positions().coords() != c.positions().coords());
  CHECK(a.seed() == 42u);
  double mean = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += a[i][0] / 300.0;
  CHECK(std::abs(mean) < 0.1);
}

TEST_CASE("rejection stalls on a degenerate target") {
  // density nonzero only on a set the probe never sees
  const ReferenceDensity spike([](std::span<const double> x) { return std::abs(x[0] - 0.123456789) < 1e-12 ? 1e12 : 0.0; },
                               Box::interval(0.0, 1.0), std::nullopt, "spike");
  CHECK_THROWS(prepare_initial_particles(spike, 10, 1, PlacementMode::Rejection));
}

TEST_CASE("quantile placement needs d = 1") {
  const ReferenceDensity flat([](std::span<const double>) { return 1.0; }, Box::cube(2, 0.0, 1.0));
  CHECK_THROWS(prepare_initial_particles(flat, 4, 1, PlacementMode::QuantileGrid1D));
  const auto e = prepare_initial_particles(flat, 50, 1, PlacementMode::Rejection);
  CHECK(e.dim() == 2);
}

TEST_CASE("second_moment examples") {
  CHECK(second_moment(line({0.0})) == 0.0);
  CHECK(second_moment(line({-1.0, 1.0})) == 1.0);
  const auto e = line({0.3, -1.2, 2.5, 0.1});
  const double c = 0.7;
  const double shift[1] = {c};
  double mean = (0.3 - 1.2 + 2.5 + 0.1) / 4.0;
  CHECK(second_moment(e.translated(shift)) == Approx(second_moment(e) + c * c + 2.0 * c * mean).epsilon(1e-14));
}

TEST_CASE("w1_1d and w2_1d examples") {
  CHECK(w1_1d(line({0.0}), line({1.0})) == 1.0);
  CHECK(w1_1d(line({0.0, 1.0}), line({0.5, 1.5})) == 0.5);
  const auto a = line({0.3, -0.2, 0.9});
  CHECK(w1_1d(a, a) == 0.0);
  CHECK(w2_1d(line({0.0}), line({1.0})) == 1.0);
  CHECK(w2_1d(line({0.0, 2.0}), line({1.0, 1.0})) == 1.0);
  CHECK_THROWS(w1_1d(line({0.0, 1.0}), line({0.0})));
  CHECK_THROWS(w1_1d(ParticleEnsemble(PointSet(2, std::vector<double>{0, 0})), ParticleEnsemble(PointSet(2, std::vector<double>{0, 1}))));
}

TEST_CASE("w1_1d metric properties on random triples") {
  Rng rng(17);
  for (int t = 0; t < 100; ++t) {
    auto make = [&] {
      std::vector<double> v(25);
      for (double& x : v) x = rng.uniform(-4, 4);
      return line(v);
    };
    const auto a = make(), b = make(), c = make();
    CHECK(w1_1d(a, b) == w1_1d(b, a));
    CHECK(w1_1d(a, b) <= w1_1d(a, c) + w1_1d(c, b) + 1e-12);
    const double s[1] = {rng.uniform(-3, 3)};
    CHECK(w1_1d(a.translated(s), b.translated(s)) == Approx(w1_1d(a, b)).epsilon(1e-12));
    CHECK(w2_1d(a, b) >= w1_1d(a, b) - 1e-15);
  }
}

TEST_CASE("w1_vs_density examples") {
  // quantile ensemble: W₁ equals the quantile discretization error, at most 1/(2N)·width
  const auto u = uniform01();
  const auto q = prepare_initial_particles(u, 10000, 0, PlacementMode::QuantileGrid1D);
  const double w = w1_vs_density(q, u).value;
  CHECK(w <= 2.0 / 10000.0);
  // exact value for uniform quantiles: N cells each contributing 1/(4N²)
  CHECK(w == Approx(1.0 / (4.0 * 10000.0)).epsilon(1e-6));

  // narrow Gaussian vs a point mass at its mean: W₁ = E|X - mean| = s√(2/π)
  const double s = 0.01;
  const auto g = narrow_gaussian(0.4, s);
  CHECK(w1_vs_density(line({0.4}), g).value == Approx(s * std::sqrt(2.0 / M_PI)).epsilon(1e-6));

  // agreement with w1_1d against a fine quantile ensemble
  const auto ref = heat_reference(1, 0.1);
  const auto coarse = prepare_initial_particles(ref, 50, 0, PlacementMode::QuantileGrid1D);
  const auto fine = prepare_initial_particles(ref, 50 * 400, 0, PlacementMode::QuantileGrid1D);
  std::vector<double> rep;
  for (std::size_t i = 0; i < coarse.size(); ++i)
    for (int k = 0; k < 400; ++k) rep.push_back(coarse[i][0]);
  CHECK(w1_vs_density(coarse, ref).value == Approx(w1_1d(line(rep), fine)).epsilon(1e-3).scale(0.0));
}

TEST_CASE("w1_vs_density converges for quantile ensembles") {
  const auto ref = barenblatt_reference(2.0, 1, 0.5);
  double prev = 1e300;
  for (std::size_t n : {64u, 256u, 1024u}) {
    const double w = w1_vs_density(prepare_initial_particles(ref, n, 0, PlacementMode::QuantileGrid1D), ref).value;
    CHECK(w < prev);
    prev = w;
  }
}

TEST_CASE("w1_vs_density on heavy tails matches sorted matching") {
  const auto ref = barenblatt_reference(0.5, 1, 0.5);
  const auto coarse = prepare_initial_particles(ref, 100, 0, PlacementMode::QuantileGrid1D);
  const double shift[1] = {0.3};
  const auto moved = coarse.translated(shift);
  // shifting quantile particles by c changes W₁ by at most c
  const double w0 = w1_vs_density(coarse, ref).value, w1 = w1_vs_density(moved, ref).value;
  CHECK(w1 <= w0 + 0.3 + 1e-9);
  CHECK(w1 >= 0.3 - w0 - 1e-9);
}

TEST_CASE("entropic W1 in two dimensions") {
  const ReferenceDensity flat([](std::span<const double> x) { return x[0] >= 0 && x[0] <= 1 && x[1] >= 0 && x[1] <= 1 ? 1.0 : 0.0; },
                              Box::cube(2, 0.0, 1.0));
  const auto near = prepare_initial_particles(flat, 400, 3, PlacementMode::Rejection);
  const double shift[2] = {0.5, 0.0};
  const auto far = near.translated(shift);
  const W1Estimate a = w1_vs_density(near, flat, 32), b = w1_vs_density(far, flat, 32);
  CHECK(a.approximate);
  CHECK(a.regularization > 0.0);
  CHECK(a.value < 0.1);
  CHECK(b.value == Approx(0.5).epsilon(0.15));
  CHECK_THROWS(w1_vs_density(ParticleEnsemble(PointSet(3, std::vector<double>{0, 0, 0})),
                             ReferenceDensity([](std::span<const double>) { return 1.0; }, Box::cube(3, 0, 1))));
}

TEST_CASE("well-prepared data are compactly supported with unit mass") {
  const auto ref = heat_reference(1, 0.05);
  const auto wp = well_prepared(ref, 0.05);
  CHECK(wp.mass(1 << 14) == Approx(1.0).epsilon(1e-6));
  CHECK(wp(25.0) == 0.0);
  CHECK(wp(0.0) == Approx(ref(0.0)).epsilon(0.05));
}

TEST_CASE("snapshot CSV round trip") {
  const ParticleEnsemble e(PointSet(2, std::vector<double>{0.1, 1.0 / 3.0, -2.5e-17, 7.0}), 0.25, 99);
  std::stringstream ss;
  write_snapshot_csv(ss, e);
  const std::string text = ss.str();
  CHECK(text.rfind("# N=2,d=2,time=0.25,seed=99\nx1,x2\n", 0) == 0);
  const auto back = read_snapshot_csv(ss);
  CHECK(back.positions().coords() == e.positions().coords());
  CHECK(back.time() == 0.25);
  CHECK(back.seed() == 99u);
}
