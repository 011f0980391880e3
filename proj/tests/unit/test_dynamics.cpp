#include "doctest.h"

#include <cmath>

#include "blobflow/dynamics.hpp"

using namespace blobflow;
using doctest::Approx;

namespace {

ParticleEnsemble line(std::vector<double> xs, double t = 0.0) { return ParticleEnsemble(PointSet(1, std::move(xs)), t); }

ParticleEnsemble heat_particles(std::size_t n, double t0) {
  auto e = prepare_initial_particles(heat_reference(1, t0), n, 1, PlacementMode::QuantileGrid1D);
  e.set_time(t0);
  return e;
}

double p_eps(const FieldSnapshot& f, const MollifierKernel& k, double x) {
  double s = 0.0;
  for (int j = 0; j < f.grid.count[0]; ++j) {
    const double r = x - f.grid.node(0, j);
    s += f.grid.weight() * kernel_value(k, std::span<const double>(&r, 1)) * f.q[j];
  }
  return s;
}

}  // namespace

TEST_CASE("build_grid examples") {
  const auto e = line({0.0, 0.3, 1.0});
  const QuadratureGrid g = build_grid(e, 0.1);
  CHECK(g.h <= 0.025 + 1e-15);
  const Box b = g.box();
  CHECK(b.lo[0] <= -0.6);
  CHECK(b.lo[0] >= -0.6 - 2 * g.h);
  CHECK(b.hi[0] >= 1.6);
  CHECK(b.hi[0] <= 1.6 + 2 * g.h);
  CHECK(g.weight() == g.h);
  CHECK_THROWS(build_grid(e, 0.1, 0.0));
  CHECK_THROWS(build_grid(e, 0.0));

  const ParticleEnsemble square(PointSet(2, std::vector<double>{0.0, 0.0, 1.0, 1.0}));
  const QuadratureGrid g2 = build_grid(square, 4.0 / 52.0);
  CHECK(g2.size() <= 102u * 102u);
  CHECK(g2.size() >= 100u * 100u);
  try {
    build_grid(square, 5e-4);
    CHECK(false);
  } catch (const std::runtime_error& err) {
    CHECK(std::string(err.what()).find("h = ") != std::string::npos);
  }
}

TEST_CASE("grid nodes sit on a shared lattice") {
  const QuadratureGrid a = build_grid(line({0.0}), 0.1), b = build_grid(line({0.37, 0.5}), 0.1);
  const double offset = (b.node(0, 0) - a.node(0, 0)) / a.h;
  CHECK(offset == Approx(std::round(offset)).epsilon(1e-9));
}

TEST_CASE("compute_fields examples") {
  const auto k = MollifierKernel::gaussian(0.1);
  const RegularizedEnergy reg(EnergyFamily::heat(), 0.3);
  const auto e = line({0.2});
  const QuadratureGrid g = build_grid(e, 0.1);
  const FieldSnapshot f = compute_fields(e, reg, k, g);
  std::size_t peak = 0;
  for (std::size_t i = 0; i < f.mu.size(); ++i) {
    if (f.mu[i] > f.mu[peak]) peak = i;
    CHECK(f.mu[i] >= 0.0);
    CHECK(f.zeta[i] >= 0.0);
  }
  CHECK(std::abs(g.node(0, static_cast<int>(peak)) - 0.2) <= g.h);
  for (std::size_t i : {peak, peak + 3, peak - 7, std::size_t{2}, f.mu.size() / 3}) {
    CHECK(f.q[i] == Approx(f.mu[i] > 0 ? reg_derivative(reg, f.mu[i]) : reg.derivative_at_zero()).epsilon(1e-14));
    if (f.mu[i] > 0) CHECK(f.zeta[i] == Approx(reg_conjugate(reg, f.q[i])).epsilon(1e-9).scale(1e-6));
  }

  // height constraint with μ below 1: q = δμ
  const RegularizedEnergy height(EnergyFamily::height_constraint(), 0.2);
  const auto spread = prepare_initial_particles(heat_reference(1, 1.0), 200, 1, PlacementMode::QuantileGrid1D);
  const FieldSnapshot fh = compute_fields(spread, height, k, build_grid(spread, 0.1));
  for (std::size_t i = 0; i < fh.mu.size(); i += 17) CHECK(fh.q[i] == Approx(0.2 * fh.mu[i]).epsilon(1e-13));
}

TEST_CASE("grid density agrees with the direct sum") {
  const auto k = MollifierKernel::gaussian(0.15);
  const RegularizedEnergy reg(EnergyFamily::porous_medium(2.0), 0.4);
  Rng rng(1);
  std::vector<double> c(60);
  for (double& v : c) v = rng.uniform(-1, 1);
  const ParticleEnsemble e(PointSet(2, c));
  const QuadratureGrid g = build_grid(e, 0.15);
  const FieldSnapshot f = compute_fields(e, reg, k, g);
  const PointSet nodes = g.nodes();
  const auto direct = mollified_density(e, k, nodes);
  for (std::size_t i = 0; i < direct.size(); i += 101) CHECK(f.mu[i] == Approx(direct[i]).epsilon(1e-12).scale(1e-14));
}

TEST_CASE("pressure_gradient_at examples") {
  const auto k = MollifierKernel::gaussian(0.1);
  const RegularizedEnergy reg(EnergyFamily::heat(), 0.3);
  const auto single = line({0.0});
  const FieldSnapshot f = compute_fields(single, reg, k, build_grid(single, 0.1));
  const auto g0 = pressure_gradient_at(f, k, PointSet(1, std::vector<double>{0.0}));
  CHECK(std::abs(g0[0][0]) <= 1e-8);

  const auto e = heat_particles(64, 0.05);
  const FieldSnapshot fe = compute_fields(e, reg, k, build_grid(e, 0.1));
  for (double x : {-0.3, -0.05, 0.0, 0.12, 0.4}) {
    const double h = 1e-5;
    const double fd = (p_eps(fe, k, x + h) - p_eps(fe, k, x - h)) / (2 * h);
    const auto g = pressure_gradient_at(fe, k, PointSet(1, std::vector<double>{x}));
    CHECK(g[0][0] == Approx(fd).epsilon(1e-5).scale(1e-6));
  }

  // halving h barely changes the result
  const FieldSnapshot fine = compute_fields(e, reg, k, build_grid(e, 0.1, 6.0, 0.125));
  for (double x : {-0.2, 0.07, 0.3}) {
    const auto a = pressure_gradient_at(fe, k, PointSet(1, std::vector<double>{x}));
    const auto b = pressure_gradient_at(fine, k, PointSet(1, std::vector<double>{x}));
    CHECK(a[0][0] == Approx(b[0][0]).epsilon(1e-4));
  }
  CHECK_THROWS_AS(pressure_gradient_at(fe, k, PointSet(1, std::vector<double>{50.0})), std::out_of_range);
}

TEST_CASE("step examples") {
  const auto k = MollifierKernel::gaussian(0.1);
  const RegularizedEnergy reg(EnergyFamily::heat(), 0.3);
  ParticleFlow still(reg, k, VelocityField::none());
  const auto single = line({0.0});
  const auto moved = step(still, single, 1e-3, Scheme::RK4);
  CHECK(std::abs(moved[0][0]) <= 1e-12);

  // one particle in a quadratic well: ẋ = -x up to a pressure term that vanishes by symmetry
  ParticleFlow well(RegularizedEnergy(EnergyFamily::heat(), 5.0), k, VelocityField::gradient_of(Potential::quadratic(1.0)));
  ParticleEnsemble p = line({1.0});
  double prev = 1.0;
  const double dt = 0.01;
  for (int n = 1; n <= 100; ++n) {
    p = step(well, p, dt, Scheme::RK4);
    CHECK(p[0][0] < prev);
    prev = p[0][0];
  }
  CHECK(prev == Approx(std::exp(-1.0)).epsilon(1e-6));

  // RK4 and Euler agree to O(Δt²) over one step
  const auto e = heat_particles(40, 0.05);
  ParticleFlow flow(reg, k, VelocityField::none());
  auto gap = [&](double h) {
    const auto a = step(flow, e, h, Scheme::RK4), b = step(flow, e, h, Scheme::Euler);
    double m = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) m = std::max(m, std::abs(a[i][0] - b[i][0]));
    return m;
  };
  const double ratio = gap(2e-4) / gap(1e-4);
  CHECK(ratio == Approx(4.0).epsilon(0.1));
}

TEST_CASE("step reports non-finite velocities with the particle index") {
  VelocityField bad;
  bad.kind = VelocityKind::Custom;
  bad.custom = [](double, std::span<const double> x, std::span<double> out) { out[0] = x[0] > 0.5 ? NAN : 0.0; };
  bad.custom_w1inf = [](const Box&) { return 0.0; };
  ParticleFlow flow(RegularizedEnergy(EnergyFamily::heat(), 0.3), MollifierKernel::gaussian(0.1), bad);
  try {
    step(flow, line({0.0, 0.9}), 1e-3, Scheme::Euler);
    CHECK(false);
  } catch (const std::runtime_error& err) {
    CHECK(std::string(err.what()).find("particle 1") != std::string::npos);
  }
}

TEST_CASE("run examples") {
  const auto k = MollifierKernel::gaussian(0.1);
  const RegularizedEnergy reg(EnergyFamily::heat(), std::sqrt(0.1));
  ParticleFlow flow(reg, k, VelocityField::none());
  const auto e = heat_particles(128, 0.05);

  RunOptions zero;
  const RunResult r0 = run(flow, e, zero);
  CHECK(r0.records.size() == 1);
  CHECK(r0.final_state.positions().coords() == e.positions().coords());
  CHECK(r0.records[0].diss_residual == 0.0);

  RunOptions o;
  o.duration = 0.1;
  o.record_interval = 0.02;
  const RunResult r = run(flow, e, o);
  CHECK(r.records.size() == 6);
  CHECK(r.records.back().t == Approx(0.15).epsilon(1e-14));
  CHECK(r.dt <= 0.5 / lipschitz_estimate(reg, k, 1) * (1 + 1e-12));
  const double tol = 10.0 * r.dt * r.dt * std::abs(r.records[0].F_eps);
  for (std::size_t i = 1; i < r.records.size(); ++i) {
    CHECK(r.records[i].F_eps <= r.records[i - 1].F_eps + tol);
    CHECK(r.records[i].M2 > r.records[i - 1].M2);
    CHECK(std::isfinite(r.records[i].entropy_moll));
  }
  // second moment grows at most at the continuum rate 2d
  const double growth = r.records.back().M2 - r.records.front().M2;
  CHECK(growth > 0.0);
  CHECK(growth < 2.0 * 0.1);
  const RunResult again = run(flow, e, o);
  CHECK(again.final_state.positions().coords() == r.final_state.positions().coords());
}

TEST_CASE("energy_F_eps examples") {
  const auto k = MollifierKernel::gaussian(0.1);
  const double delta = 0.5;
  const RegularizedEnergy reg(EnergyFamily::porous_medium(2.0), delta);
  const auto e = heat_particles(50, 0.1);
  const FieldSnapshot f = compute_fields(e, reg, k, build_grid(e, 0.1));
  const double c = delta + 2.0 / (1.0 + 2.0 * delta);
  double expected = 0.0;
  for (double m : f.mu) expected += 0.5 * c * m * m * f.grid.weight();
  CHECK(energy_F_eps(f, reg) == Approx(expected).epsilon(1e-10));

  // relabeling particles and zero regions
  std::vector<double> rev(e.positions().coords().rbegin(), e.positions().coords().rend());
  const ParticleEnsemble r(PointSet(1, rev));
  const FieldSnapshot fr = compute_fields(r, reg, k, build_grid(r, 0.1));
  CHECK(energy_F_eps(fr, reg) == Approx(energy_F_eps(f, reg)).epsilon(1e-13));
  const FieldSnapshot wide = compute_fields(e, reg, k, build_grid(e, 0.1, 20.0));
  CHECK(energy_F_eps(wide, reg) == Approx(energy_F_eps(f, reg)).epsilon(1e-12));
}

TEST_CASE("entropy_mollified examples") {
  const RegularizedEnergy reg(EnergyFamily::heat(), 0.3);
  const ReferenceDensity unit = ReferenceDensity::on_interval([](double) { return 1.0; }, 0.0, 1.0,
                                                              [](double x) { return std::clamp(x, 0.0, 1.0); });
  const auto flat = prepare_initial_particles(unit, 2000, 0, PlacementMode::QuantileGrid1D);
  const auto k = MollifierKernel::gaussian(0.005);
  CHECK(std::abs(entropy_mollified(compute_fields(flat, reg, k, build_grid(flat, 0.005)))) < 0.01);

  const auto one = line({0.0});
  double prev = -1e300;
  for (double eps : {0.4, 0.2, 0.1}) {
    const auto ke = MollifierKernel::gaussian(eps);
    const double s = entropy_mollified(compute_fields(one, reg, ke, build_grid(one, eps)));
    CHECK(s == Approx(-0.5 * std::log(2.0 * M_PI * M_E * eps * eps)).epsilon(1e-6));
    CHECK(s > prev);
    prev = s;
  }
}

TEST_CASE("dissipation residual examples") {
  CHECK(dissipation_residual({}) == 0.0);
  DiagnosticsRecord one;
  one.F_eps = 3.0;
  CHECK(dissipation_residual({one}) == 0.0);

  // halving Δt shrinks the residual at second order or better
  const auto k = MollifierKernel::gaussian(0.2);
  const RegularizedEnergy reg(EnergyFamily::heat(), std::sqrt(0.2));
  ParticleFlow flow(reg, k, VelocityField::none());
  const auto e = heat_particles(64, 0.05);
  auto residual = [&](double dt) {
    RunOptions o;
    o.duration = 0.05;
    o.dt = dt;
    return std::abs(run(flow, e, o).records.back().diss_residual);
  };
  const double dt0 = 0.5 / lipschitz_estimate(reg, k, 1);
  const double coarse = residual(dt0), fine = residual(dt0 / 2);
  CHECK(coarse / fine >= 3.0);

  // near-stationary: steady state at its quantiles in the matching potential
  const Potential V = Potential::quadratic(1.0);
  const auto ss = steady_state(EnergyFamily::heat(), V, Box::interval(-8, 8)).as_reference();
  const auto start = prepare_initial_particles(ss, 200, 0, PlacementMode::QuantileGrid1D);
  ParticleFlow sample(RegularizedEnergy(EnergyFamily::heat(), std::sqrt(0.2)), k, VelocityField::gradient_of(V));
  RunOptions o;
  o.duration = 0.2;
  const RunResult r = run(sample, start, o);
  CHECK(std::abs(r.records.back().diss_residual) <= 1e-5);
}

TEST_CASE("cross term and gradient sandwich") {
  const auto k = MollifierKernel::gaussian(0.1);
  for (const auto& fam : {EnergyFamily::heat(), EnergyFamily::porous_medium(2.0), EnergyFamily::height_constraint()}) {
    const RegularizedEnergy reg(fam, 0.3);
    const auto e = heat_particles(100, 0.02);
    const FieldSnapshot f = compute_fields(e, reg, k, build_grid(e, 0.1));
    const CrossTerm c = cross_term_min(f);
    CHECK(c.min >= -1e-10 * c.scale);
    CHECK(c.integral > 0.0);
    const GradientSandwich s = gradient_sandwich(f, reg);
    CHECK(s.upper_ratio <= 1.0 + 1e-3);
    CHECK(s.lower_ratio <= 1.0 + 1e-3);
  }
  // flat fields
  FieldSnapshot flat;
  flat.grid = build_grid(line({0.0}), 0.1);
  flat.mu.assign(flat.grid.size(), 0.5);
  flat.q.assign(flat.grid.size(), 1.0);
  flat.zeta.assign(flat.grid.size(), 0.0);
  flat.grad_mu.assign(flat.grid.size(), 0.0);
  flat.grad_q.assign(flat.grid.size(), 0.0);
  CHECK(cross_term_min(flat).min == 0.0);
}

TEST_CASE("exchange residual examples") {
  const RegularizedEnergy reg(EnergyFamily::heat(), std::sqrt(0.1));
  const auto k = MollifierKernel::gaussian(0.1);
  const auto e = heat_particles(256, 0.05);
  const FieldSnapshot f = compute_fields(e, reg, k, build_grid(e, 0.1));
  const double one = exchange_residual(e, f, k, [](std::span<const double>) { return 1.0; });
  CHECK(one <= 1e-6);

  const auto single = line({0.0});
  const FieldSnapshot fs = compute_fields(single, reg, k, build_grid(single, 0.1));
  // g even about the particle: ∇p_ε vanishes there and g μ ∇q is odd
  CHECK(exchange_residual(single, fs, k, [](std::span<const double> x) { return std::cos(x[0]); }) <= 1e-10);
  // g odd: the particle side vanishes but g μ ∇q is even, so the residual is the full grid integral
  CHECK(exchange_residual(single, fs, k, [](std::span<const double> x) { return std::sin(x[0]); }) > 0.1);

  double prev = 1e300;
  for (double eps : {0.2, 0.1, 0.05}) {
    const RegularizedEnergy r(EnergyFamily::heat(), std::sqrt(eps));
    const auto ke = MollifierKernel::gaussian(eps);
    const FieldSnapshot fe = compute_fields(e, r, ke, build_grid(e, eps));
    const double res = exchange_residual(e, fe, ke, [](std::span<const double> x) { return std::sin(x[0]); });
    CHECK(res < prev);
    prev = res;
  }
}

TEST_CASE("lipschitz_estimate examples") {
  const auto k = MollifierKernel::gaussian(0.2);
  const RegularizedEnergy height(EnergyFamily::height_constraint(), 1.0);
  const KernelNorms n = kernel_norms(k, 1);
  CHECK(lipschitz_estimate(height, k, 1) == Approx((n.grad_l1 + n.hess_l1) * 2.0 * n.sup).epsilon(1e-14));
  const RegularizedEnergy heat(EnergyFamily::heat(), 0.3);
  double prev = 0.0;
  for (double eps : {0.4, 0.2, 0.1, 0.05}) {
    const double c = lipschitz_estimate(heat, MollifierKernel::gaussian(eps), 1);
    CHECK(c > prev);
    prev = c;
  }
  CHECK(lipschitz_estimate(heat, k, 1, 3.0) == Approx(lipschitz_estimate(heat, k, 1) + 6.0));
  ParticleFlow flow(heat, k, VelocityField::none());
  const auto e = heat_particles(32, 0.05);
  CHECK(resolve_time_step(flow, e, 0.0) == Approx(0.5 / lipschitz_estimate(heat, k, 1)));
  CHECK(resolve_time_step(flow, e, 1e-9) == 1e-9);
  CHECK(resolve_time_step(flow, e, 1.0) == Approx(0.5 / lipschitz_estimate(heat, k, 1)));
}

TEST_CASE("threaded evaluation is bitwise identical") {
  const RegularizedEnergy reg(EnergyFamily::heat(), 0.3);
  const auto k = MollifierKernel::gaussian(0.1);
  const auto e = heat_particles(500, 0.05);
  FlowSettings serial, threaded;
  threaded.threads = 4;
  ParticleFlow a(reg, k, VelocityField::none(), serial), b(reg, k, VelocityField::none(), threaded);
  std::vector<double> va, vb;
  a.velocity(e, va);
  b.velocity(e, vb);
  CHECK(va == vb);
}
