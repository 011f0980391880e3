#include "blobflow/selftest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

#include "blobflow/app.hpp"
#include "blobflow/config.hpp"
#include "blobflow/convex_energy.hpp"
#include "blobflow/dynamics.hpp"
#include "blobflow/ensemble.hpp"
#include "blobflow/mollifier.hpp"
#include "blobflow/reference.hpp"

namespace blobflow {

bool SuiteResult::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// tracks the worst violation of a check over many samples
class Tally {
 public:
  explicit Tally(std::string name) : name_(std::move(name)) {}
  void expect(bool ok, double excess, const std::string& where) {
    ++count_;
    if (!ok && (failures_++ == 0 || excess > worst_)) {
      worst_ = excess;
      where_ = where;
    }
  }
  CheckResult result() const {
    if (failures_ == 0) return {name_, true, std::to_string(count_) + " samples"};
    return {name_, false,
            std::to_string(failures_) + "/" + std::to_string(count_) + " violations, worst " + num(worst_) + " at " +
                where_};
  }

 private:
  std::string name_;
  int count_ = 0, failures_ = 0;
  double worst_ = 0.0;
  std::string where_;
};

std::vector<EnergyFamily> shipped_families() {
  return {EnergyFamily::heat(), EnergyFamily::porous_medium(2.0), EnergyFamily::porous_medium(3.0),
          EnergyFamily::fast_diffusion(0.5, 1), EnergyFamily::height_constraint()};
}

std::string at(const EnergyFamily& f, double delta, double a) {
  return f.name() + " delta=" + num(delta) + " a=" + num(a);
}

SuiteResult convex_energy_suite(const SelftestOptions& opt) {
  SuiteResult s{"convex_energy", {}, 0.0};
  Rng rng(20240601);
  const auto families = shipped_families();
  const double deltas[] = {1e-3, 0.05, 0.3, 1.0};

  Tally nonexp("prox nonexpansive");
  Tally envelope("Moreau envelope monotone in delta and below f");
  Tally slope("prox slope bound");
  Tally curvature("curvature sandwich");
  Tally fy("Fenchel-Young equality");
  Tally conj("conjugate nondecreasing and vanishing at -inf");
  Tally h1("H^-1 density derivative");
  Tally trunc("truncation ordering");
  for (const auto& f : families) {
    for (double delta : deltas) {
      const RegularizedEnergy reg(f, delta);
      for (int i = 0; i < 40; ++i) {
        const double a = 10.0 * rng.uniform01(), b = 10.0 * rng.uniform01();
        const double pa = prox(f, delta, a), pb = prox(f, delta, b);
        nonexp.expect(std::abs(pa - pb) <= std::abs(a - b) + 1e-10, std::abs(pa - pb) - std::abs(a - b), at(f, delta, a));

        const double m1 = moreau_value(f, 2.0 * delta, a), m2 = moreau_value(f, delta, a);
        const ExtReal fa = energy_value(f, a);
        const double scale = 1e-12 * (1.0 + std::abs(m2));
        const bool below = fa.is_infinite() || m2 <= fa.value() + scale;
        envelope.expect(m1 <= m2 + scale && below, m1 - m2, at(f, delta, a));

        if (a > 0.0 && a < f.domain_upper()) {
          const double gap = std::abs(a - pa), bound = delta * f.slope_at(a);
          slope.expect(gap <= bound * (1.0 + 1e-9) + 1e-12, gap - bound, at(f, delta, a));
        }

        const double c = 0.01 + 10.0 * rng.uniform01();
        const double h = 1e-4 * std::max(1.0, c);
        std::function<double(double)> fe = [&](double x) { return reg_value(reg, x).value(); };
        if (opt.inject_fault == "curvature") fe = [&](double x) { return reg_value(reg, x).value() - delta * x * x; };
        const double second = (fe(c + h) - 2.0 * fe(c) + fe(c - h)) / (h * h);
        const double tol = 1e-4 * (delta + 1.0 / delta);
        const bool in = second >= delta - tol && second <= delta + 1.0 / delta + tol;
        curvature.expect(in, std::max(delta - second, second - delta - 1.0 / delta), at(f, delta, c));

        const double g = reg_derivative(reg, a);
        const double res = std::abs(a * g - reg_value(reg, a).value() - reg_conjugate(reg, g));
        fy.expect(res <= 1e-8 * (1.0 + std::abs(a * g)), res, at(f, delta, a));
      }
      double prev = reg_conjugate(reg, -50.0);
      bool monotone = true;
      for (int k = -49; k <= 50; ++k) {
        const double v = reg_conjugate(reg, static_cast<double>(k));
        monotone = monotone && v >= prev - 1e-12 * (1.0 + std::abs(v));
        prev = v;
      }
      const double far = reg_conjugate(reg, -1e6);
      conj.expect(monotone && far <= 1e-8, far, at(f, delta, -1e6));
    }
    for (int i = 0; i < 20; ++i) {
      const double a = 0.05 + 3.0 * rng.uniform01();
      if (f.kind() == EnergyKind::HeightConstraint) {
        h1.expect(h1_density(f, a).is_infinite() == (a > 1.0), 0.0, at(f, 0.0, a));
        continue;
      }
      const double h = 1e-5 * a;
      const double fd = (h1_density(f, a + h).value() - h1_density(f, a - h).value()) / (2.0 * h);
      const double exact = a * f.derivative(a) - energy_value(f, a).value();
      h1.expect(std::abs(fd - exact) <= 1e-6 * std::max(1.0, std::abs(exact)), std::abs(fd - exact), at(f, 0.0, a));

      const double m1 = 0.5 + rng.uniform01(), m2 = m1 + 1.0 + rng.uniform01();
      const double e1 = h1_truncated(f, m1, a).value(), e2 = h1_truncated(f, m2, a).value();
      const double e = h1_density(f, a).value();
      const double big = h1_truncated(f, 1e6, a).value();
      const double tol = 1e-10 * (1.0 + std::abs(e));
      trunc.expect(e1 <= e2 + tol && e2 <= e + tol && std::abs(big - e) <= 1e-8 * (1.0 + std::abs(e)), e1 - e2,
                   at(f, 0.0, a));
    }
  }
  for (const Tally* t : {&nonexp, &envelope, &slope, &curvature, &fy, &conj, &h1, &trunc})
    s.checks.push_back(t->result());
  return s;
}

SuiteResult mollifier_suite() {
  SuiteResult s{"mollifier", {}, 0.0};
  for (int d = 1; d <= 2; ++d) {
    for (const auto& k : {MollifierKernel::gaussian(0.3), MollifierKernel::bump(0.3, 3)}) {
      const KernelValidation v = validate_kernel(k, d);
      std::string detail = "normalization error " + num(v.normalization_error);
      for (const auto& f : v.failures) detail += "; " + f;
      s.checks.push_back({"validate " + k.name() + " d=" + std::to_string(d), v.ok(), detail});
    }
  }
  {
    MollifierKernel bad = MollifierKernel::gaussian(1.0);
    bad.effective_r = 1.5;
    s.checks.push_back({"reject r <= max(d,2)", !validate_kernel(bad, 2).ok(), "effective_r = 1.5, d = 2"});
  }
  Rng rng(11);
  Tally scaling("scaling identity exact");
  Tally grad("gradient matches central differences");
  for (int i = 0; i < 50; ++i) {
    const double eps = 0.05 + rng.uniform01();
    const double x[2] = {rng.uniform(-2, 2), rng.uniform(-2, 2)};
    for (int d = 1; d <= 2; ++d) {
      const std::span<const double> xs(x, d);
      const double y[2] = {x[0] / eps, x[1] / eps};
      const double lhs = kernel_value(MollifierKernel::gaussian(eps), xs);
      const double rhs = std::pow(eps, -d) * kernel_value(MollifierKernel::gaussian(1.0), std::span<const double>(y, d));
      scaling.expect(lhs == rhs, std::abs(lhs - rhs), "eps=" + num(eps));

      const auto k = MollifierKernel::gaussian(eps);
      const auto g = kernel_gradient(k, xs);
      for (int a = 0; a < d; ++a) {
        const double h = 1e-5 * eps;
        double p[2] = {x[0], x[1]}, m[2] = {x[0], x[1]};
        p[a] += h;
        m[a] -= h;
        const double fd = (kernel_value(k, std::span<const double>(p, d)) - kernel_value(k, std::span<const double>(m, d))) / (2 * h);
        // relative tolerance with a floor at the rounding level of the difference quotient
        const double tol = 1e-6 * std::abs(g[a]) + 1e-9 * std::pow(eps, -d - 1);
        grad.expect(std::abs(fd - g[a]) <= tol, std::abs(fd - g[a]), "eps=" + num(eps));
      }
    }
  }
  s.checks.push_back(scaling.result());
  s.checks.push_back(grad.result());

  // mass of μ_ε on a covering grid
  PointSet pts(1, std::vector<double>{-0.3, 0.0, 0.25, 0.9});
  const ParticleEnsemble e(pts);
  const auto k = MollifierKernel::gaussian(0.1);
  const QuadratureGrid g = build_grid(e, 0.1);
  const auto mu = mollified_density(e, k, g.nodes());
  double mass = 0.0;
  for (double v : mu) mass += v * g.weight();
  s.checks.push_back({"mollified mass on covering grid", std::abs(mass - 1.0) <= 1e-3, "mass " + num(mass)});
  return s;
}

SuiteResult ensemble_suite() {
  SuiteResult s{"ensemble", {}, 0.0};
  Rng rng(5);
  auto random_ensemble = [&](std::size_t n) {
    std::vector<double> c(n);
    for (double& v : c) v = rng.uniform(-3, 3);
    return ParticleEnsemble(PointSet(1, std::move(c)));
  };
  Tally metric("W1 symmetric and triangle inequality");
  Tally shift("W1 translation invariant");
  Tally order("W2 >= W1");
  for (int i = 0; i < 50; ++i) {
    const auto a = random_ensemble(40), b = random_ensemble(40), c = random_ensemble(40);
    const double ab = w1_1d(a, b), ba = w1_1d(b, a), ac = w1_1d(a, c), cb = w1_1d(c, b);
    metric.expect(ab == ba && ab <= ac + cb + 1e-12, ab - ac - cb, "trial " + std::to_string(i));
    const double sh[1] = {rng.uniform(-5, 5)};
    const double moved = w1_1d(a.translated(sh), b.translated(sh));
    shift.expect(std::abs(moved - ab) <= 1e-12 * (1.0 + ab), std::abs(moved - ab), "trial " + std::to_string(i));
    order.expect(w2_1d(a, b) >= ab - 1e-15, ab - w2_1d(a, b), "trial " + std::to_string(i));
  }
  s.checks.push_back(metric.result());
  s.checks.push_back(shift.result());
  s.checks.push_back(order.result());

  const auto target = heat_reference(1, 0.25);
  double prev = INFINITY;
  bool decreasing = true;
  std::string values;
  for (std::size_t n : {64u, 256u, 1024u}) {
    const double w = w1_vs_density(prepare_initial_particles(target, n, 1, PlacementMode::QuantileGrid1D), target).value;
    decreasing = decreasing && w < prev;
    prev = w;
    values += num(w) + " ";
  }
  s.checks.push_back({"quantile ensembles converge in N", decreasing, values});

  const auto r1 = prepare_initial_particles(target, 200, 99, PlacementMode::Rejection);
  const auto r2 = prepare_initial_particles(target, 200, 99, PlacementMode::Rejection);
  s.checks.push_back({"rejection sampling deterministic", r1.positions().coords() == r2.positions().coords(), "seed 99"});
  return s;
}

SuiteResult reference_suite() {
  SuiteResult s{"reference", {}, 0.0};
  const Potential V = Potential::quadratic(1.0);
  for (const auto& f : {EnergyFamily::heat(), EnergyFamily::porous_medium(2.0), EnergyFamily::height_constraint()}) {
    const SteadyState ss = steady_state(f, V, Box::interval(-8, 8));
    const auto ref = ss.as_reference();
    const double mass = ref.mass(1 << 16);
    bool optimal = true;
    double worst = 0.0;
    if (f.kind() != EnergyKind::HeightConstraint) {
      for (double x : {-1.0, -0.4, 0.0, 0.3, 0.9}) {
        const double rho = ref(x);
        if (rho <= 0.0) continue;
        const double gap = std::abs(f.derivative(rho) + 0.5 * x * x - ss.z());
        worst = std::max(worst, gap);
        optimal = optimal && gap <= 1e-6;
      }
    }
    s.checks.push_back({"steady state " + f.name(), std::abs(mass - 1.0) <= 1e-6 && optimal,
                        "mass " + num(mass) + ", optimality gap " + num(worst)});
  }
  for (double m : {2.0, 3.0, 0.5}) {
    const auto ref = barenblatt_reference(m, 1, 0.7);
    const double mass = ref.mass(1 << 18);
    const auto& p = barenblatt_profile(m, 1);
    bool similar = true;
    for (double x : {0.0, 0.2, 0.5}) {
      const double y = x * std::pow(2.0, p.beta());
      const double lhs = barenblatt(m, 1, 1.4, std::span<const double>(&y, 1));
      const double rhs = std::pow(2.0, -p.alpha()) * barenblatt(m, 1, 0.7, std::span<const double>(&x, 1));
      similar = similar && std::abs(lhs - rhs) <= 1e-8 * std::max(1e-300, std::abs(rhs));
    }
    s.checks.push_back({"Barenblatt m=" + num(m), std::abs(mass - 1.0) <= 1e-6 && similar, "mass " + num(mass)});
  }
  const DeltaSchedule sched(0.5, 4.0, 1);
  bool monotone = true;
  double prev = INFINITY;
  for (double eps = 1.0; eps > 1e-6; eps *= 0.5) {
    const double d = delta_of_eps(sched, eps);
    monotone = monotone && d <= prev;
    prev = d;
  }
  s.checks.push_back({"delta schedule monotone", monotone && prev < 1e-2, "beta 0.5"});
  bool rejected = false;
  try {
    DeltaSchedule(0.6, 3.0, 2);
  } catch (const std::invalid_argument&) {
    rejected = true;
  }
  s.checks.push_back({"inadmissible schedule rejected", rejected, "beta 0.6, r 3, d 2"});
  return s;
}

SuiteResult dynamics_suite() {
  SuiteResult s{"dynamics", {}, 0.0};
  SimConfig c;
  c.n = 64;
  c.epsilons = {0.2};
  c.duration = 0.05;
  c.record_interval = 0.01;
  c.reference = ReferenceKind::Heat;
  c.exchange = true;
  Experiment ex = make_experiment(c, 0.2);
  const RunResult r = run(ex.flow, ex.initial, ex.options);
  const double f0 = r.records.front().F_eps;
  const double tol = 10.0 * r.dt * r.dt * std::abs(f0);
  bool monotone = true, sign = true, sandwich = true, positive = true;
  for (std::size_t i = 0; i < r.records.size(); ++i) {
    const auto& rec = r.records[i];
    if (i > 0) monotone = monotone && rec.F_eps <= r.records[i - 1].F_eps + tol;
    sign = sign && rec.min_cross_term >= -1e-10 * rec.cross_term_scale;
    sandwich = sandwich && rec.sandwich.upper_ratio <= 1.0 + 1e-3 && rec.sandwich.lower_ratio <= 1.0 + 1e-3;
  }
  const FieldSnapshot f = ex.flow.fields(r.final_state);
  for (std::size_t i = 0; i < f.mu.size(); ++i) positive = positive && f.mu[i] >= 0.0 && f.zeta[i] >= 0.0;
  s.checks.push_back({"energy nonincreasing", monotone, std::to_string(r.records.size()) + " records"});
  s.checks.push_back({"cross-term sign", sign, ""});
  s.checks.push_back({"gradient sandwich", sandwich, ""});
  s.checks.push_back({"mu and zeta nonnegative", positive, ""});
  const double R = std::abs(r.records.back().diss_residual);
  s.checks.push_back({"dissipation residual small", R <= 1e-4 * std::abs(f0), "|R| = " + num(R)});

  const RunResult again = run(ex.flow, ex.initial, ex.options);
  s.checks.push_back({"deterministic rerun", diagnostics_csv(r.records) == diagnostics_csv(again.records), ""});

  const double m2_growth = r.records.back().M2 - r.records.front().M2;
  s.checks.push_back({"second moment grows", m2_growth > 0.0, "growth " + num(m2_growth)});
  return s;
}

SuiteResult config_suite() {
  SuiteResult s{"config", {}, 0.0};
  SimConfig c;
  c.family = FamilyKind::FastDiffusion;
  c.m = 0.55;
  c.epsilons = {0.2, 0.1, 0.05};
  c.dt = 1e-3;
  c.seed = 18446744073709551615ull;
  c.center = 0.1 + 0.2;
  c.out_dir = "some/dir";
  bool round_trip = false;
  try {
    round_trip = parse_config_string(serialize_config(c)) == c;
  } catch (const ConfigError&) {
  }
  s.checks.push_back({"round trip", round_trip, ""});
  bool unknown = false;
  try {
    parse_config_string("[energy]\nfamly = heat\n");
  } catch (const ConfigError&) {
    unknown = true;
  }
  s.checks.push_back({"unknown keys rejected", unknown, ""});
  return s;
}

template <class F>
SuiteResult timed(const char* name, F&& f) {
  const auto start = std::chrono::steady_clock::now();
  SuiteResult r;
  try {
    r = f();
  } catch (const std::exception& e) {
    r.checks.push_back({"suite completed", false, e.what()});
  }
  r.name = name;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace

std::vector<SuiteResult> run_selftest(const SelftestOptions& options) {
  return {timed("convex_energy", [&] { return convex_energy_suite(options); }),
          timed("mollifier", mollifier_suite),
          timed("ensemble", ensemble_suite),
          timed("reference", reference_suite),
          timed("dynamics", dynamics_suite),
          timed("config", config_suite)};
}

}  // namespace blobflow
