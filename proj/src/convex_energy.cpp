#include "blobflow/convex_energy.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace blobflow {

namespace {

void require_finite_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v))
    throw std::invalid_argument(std::string(what) + " must be finite and positive");
}

// J_δ for f(s) = s log s - s. Stationarity: log b + (b - a)/δ = 0.
double prox_heat(double delta, double a) {
  const double t_lo = std::min(std::log(delta), 0.0) - 1.0;
  const double t_hi = std::log(std::max(a, 1.0));
  if (a < 10.0 * delta) {
    // b is exponentially small for a ≪ δ; solve for t = log b instead
    auto eval = [&](double t) {
      const double et = std::exp(t);
      return std::pair{t + (et - a) / delta, 1.0 + et / delta};
    };
    return std::exp(numerics::safeguarded_newton(eval, t_lo, t_hi, t_hi));
  }
  auto eval = [&](double b) {
    return std::pair{std::log(b) + (b - a) / delta, 1.0 / b + 1.0 / delta};
  };
  const double guess = a - delta * std::log(a);
  return numerics::safeguarded_newton(eval, std::exp(t_lo), std::max(a, 1.0), guess);
}

// f(s) = s^m/(m-1), m > 1: root lies in [0, a].
double prox_porous(double m, double delta, double a) {
  if (a == 0.0) return 0.0;
  if (m == 2.0) return a / (1.0 + 2.0 * delta);
  const double c = m / (m - 1.0);
  auto eval = [&](double b) {
    return std::pair{c * std::pow(b, m - 1.0) + (b - a) / delta,
                     m * std::pow(b, m - 2.0) + 1.0 / delta};
  };
  return numerics::safeguarded_newton(eval, 0.0, a, 0.5 * a);
}

// f(s) = s^m/(m-1), m < 1: f' → -∞ at 0, root lies above a. Solved in log b.
double prox_fast(double m, double delta, double a) {
  const double c = m / (1.0 - m);
  const double top = std::max(a, 1.0);
  const double b_hi = top + delta * c * std::pow(top, m - 1.0);
  const double b_lo = 0.5 * std::pow(c * delta, 1.0 / (2.0 - m));
  auto eval = [&](double t) {
    const double et = std::exp(t);
    const double em = std::exp((m - 1.0) * t);
    return std::pair{-c * em + (et - a) / delta, c * (1.0 - m) * em + et / delta};
  };
  const double guess = std::log(std::max(a, b_lo));
  return std::exp(numerics::safeguarded_newton(eval, std::log(b_lo), std::log(b_hi), guess));
}

double prox_custom(const CustomEnergy& f, double delta, double a) {
  auto g = [&](double b) { return f.derivative(b) + (b - a) / delta; };
  const double upper = f.domain_upper;
  if (g(0.0) >= 0.0) return 0.0;
  double hi = std::min(std::max(a, 1.0), upper);
  int guard = 0;
  while (g(hi) < 0.0) {
    if (hi >= upper) return upper;
    hi = std::min(2.0 * hi, upper);
    if (++guard > 1100) throw SolverError("prox bracket expansion failed");
  }
  double lo = 0.0;
  for (int it = 0; it < numerics::kMaxIterations; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (hi - lo <= numerics::kRootTolerance * std::max(1.0, mid) || mid == lo || mid == hi)
      return mid;
    if (g(mid) < 0.0) lo = mid; else hi = mid;
  }
  throw SolverError("custom prox bisection did not converge");
}

// sup ∂e(a) for a in [0, domain_upper]; +∞ at a finite domain endpoint.
double h1_sup_subgradient(const EnergyFamily& family, double a) {
  if (a >= family.domain_upper()) return std::numeric_limits<double>::infinity();
  return h1_derivative(family, a);
}

template <class SupSlope>
double truncation_point(SupSlope&& sup_slope, double upper, double m_level) {
  if (!(m_level > 0.0)) throw std::invalid_argument("truncation level must be positive");
  double hi = std::min(1.0, upper);
  int guard = 0;
  while (sup_slope(hi) <= m_level) {
    if (hi >= upper) return upper;
    hi = std::min(2.0 * hi, upper);
    if (++guard > 1100) throw SolverError("truncation bracket expansion failed");
  }
  double lo = 0.0;
  for (int it = 0; it < numerics::kMaxIterations; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (hi - lo <= 1e-15 * std::max(1.0, mid) || mid == lo || mid == hi) return lo;
    if (sup_slope(mid) <= m_level) lo = mid; else hi = mid;
  }
  throw SolverError("truncation bisection did not converge");
}

}  // namespace

// ---------------------------------------------------------------------------

EnergyFamily EnergyFamily::heat() { return EnergyFamily(EnergyKind::Heat, 1.0, 1); }

EnergyFamily EnergyFamily::porous_medium(double m) {
  if (!(m > 1.0) || !std::isfinite(m))
    throw std::invalid_argument("porous medium exponent must satisfy m > 1");
  return EnergyFamily(EnergyKind::PorousMedium, m, 1);
}

EnergyFamily EnergyFamily::fast_diffusion(double m, int dimension) {
  if (dimension < 1) throw std::invalid_argument("dimension must be positive");
  const double lower = fast_diffusion_lower_bound(dimension);
  if (!(m > lower && m < 1.0)) {
    std::ostringstream os;
    os << "fast diffusion exponent must satisfy " << lower << " < m < 1 in d=" << dimension
       << " (got m=" << m << ")";
    throw std::invalid_argument(os.str());
  }
  return EnergyFamily(EnergyKind::FastDiffusion, m, dimension);
}

EnergyFamily EnergyFamily::height_constraint() {
  return EnergyFamily(EnergyKind::HeightConstraint, 1.0, 1);
}

EnergyFamily EnergyFamily::custom(CustomEnergy energy) {
  if (!energy.value || !energy.derivative)
    throw std::invalid_argument("custom energy needs value and derivative callbacks");
  if (!(energy.domain_upper > 0.0))
    throw std::invalid_argument("custom energy domain must contain (0, upper)");
  EnergyFamily fam(EnergyKind::Custom, 1.0, 1);
  fam.custom_ = std::move(energy);
  return fam;
}

std::string EnergyFamily::name() const {
  switch (kind_) {
    case EnergyKind::Heat: return "heat";
    case EnergyKind::PorousMedium: return "porous_medium";
    case EnergyKind::FastDiffusion: return "fast_diffusion";
    case EnergyKind::HeightConstraint: return "height_constraint";
    case EnergyKind::Custom: return custom_.name;
  }
  return "unknown";
}

double EnergyFamily::domain_upper() const {
  switch (kind_) {
    case EnergyKind::HeightConstraint: return 1.0;
    case EnergyKind::Custom: return custom_.domain_upper;
    default: return std::numeric_limits<double>::infinity();
  }
}

double EnergyFamily::derivative(double a) const {
  switch (kind_) {
    case EnergyKind::Heat: return std::log(a);
    case EnergyKind::PorousMedium:
    case EnergyKind::FastDiffusion: return m_ / (m_ - 1.0) * std::pow(a, m_ - 1.0);
    case EnergyKind::HeightConstraint: return 0.0;
    case EnergyKind::Custom: return custom_.derivative(a);
  }
  return 0.0;
}

double EnergyFamily::slope_at(double a) const { return std::abs(derivative(a)); }

RegularizedEnergy::RegularizedEnergy(EnergyFamily family, double delta, double epsilon)
    : family_(std::move(family)), delta_(delta), epsilon_(epsilon) {
  require_finite_positive(delta, "delta");
  if (epsilon < 0.0) throw std::invalid_argument("epsilon must be nonnegative");
  const double j0 = prox(family_, delta_, 0.0);
  envelope_zero_ = energy_value(family_, j0).value() + j0 * j0 / (2.0 * delta_);
  derivative_zero_ = -j0 / delta_;
}

// ---------------------------------------------------------------------------

ExtReal energy_value(const EnergyFamily& family, double a) {
  if (a < 0.0 || std::isnan(a)) return ExtReal::infinity();
  switch (family.kind()) {
    case EnergyKind::Heat:
      if (a == 0.0) return 0.0;  // a log a → 0
      return a * std::log(a) - a;
    case EnergyKind::PorousMedium:
    case EnergyKind::FastDiffusion: {
      const double m = family.exponent();
      return std::pow(a, m) / (m - 1.0);
    }
    case EnergyKind::HeightConstraint:
      return a <= 1.0 ? ExtReal(0.0) : ExtReal::infinity();
    case EnergyKind::Custom: {
      const auto* c = family.custom_energy();
      if (a > c->domain_upper) return ExtReal::infinity();
      return c->value(a);
    }
  }
  return ExtReal::infinity();
}

double prox(const EnergyFamily& family, double delta, double a) {
  require_finite_positive(delta, "delta");
  if (!(a >= 0.0) || !std::isfinite(a))
    throw std::domain_error("prox requires a finite argument a >= 0");
  switch (family.kind()) {
    case EnergyKind::Heat: return prox_heat(delta, a);
    case EnergyKind::PorousMedium: return prox_porous(family.exponent(), delta, a);
    case EnergyKind::FastDiffusion: return prox_fast(family.exponent(), delta, a);
    case EnergyKind::HeightConstraint: return std::clamp(a, 0.0, 1.0);
    case EnergyKind::Custom: return prox_custom(*family.custom_energy(), delta, a);
  }
  return a;
}

double moreau_value(const EnergyFamily& family, double delta, double a) {
  const double j = prox(family, delta, a);
  const double r = a - j;
  return energy_value(family, j).value() + r * r / (2.0 * delta);
}

ExtReal reg_value(const RegularizedEnergy& reg, double a) {
  if (a < 0.0 || std::isnan(a)) return ExtReal::infinity();
  if (a == 0.0) return 0.0;
  const double d = reg.delta();
  return 0.5 * d * a * a + moreau_value(reg.family(), d, a) - reg.envelope_at_zero();
}

double reg_derivative(const RegularizedEnergy& reg, double a) {
  if (a == 0.0) return reg.derivative_at_zero();
  const double d = reg.delta();
  return d * a + (a - prox(reg.family(), d, a)) / d;
}

double reg_conjugate_derivative(const RegularizedEnergy& reg, double b) {
  const double slope0 = reg.derivative_at_zero();
  if (!(b > slope0)) return 0.0;
  // f_ε' grows at least with slope δ, so the root is below hi
  const double hi = (b - slope0) / reg.delta() + 1.0;
  double lo = 0.0, up = hi;
  for (int it = 0; it < numerics::kMaxIterations; ++it) {
    const double mid = 0.5 * (lo + up);
    if (up - lo <= 1e-15 * std::max(1.0, mid) || mid == lo || mid == up) return mid;
    if (reg_derivative(reg, mid) < b) lo = mid; else up = mid;
  }
  throw SolverError("conjugate derivative bisection did not converge");
}

double reg_conjugate(const RegularizedEnergy& reg, double b) {
  const double a = reg_conjugate_derivative(reg, b);
  if (a == 0.0) return 0.0;
  // the supremum also ranges over a = 0, where the objective is exactly 0
  return std::max(0.0, a * b - reg_value(reg, a).value());
}

// ---------------------------------------------------------------------------

ExtReal h1_density(const EnergyFamily& family, double a) {
  if (a < 0.0 || std::isnan(a)) return ExtReal::infinity();
  switch (family.kind()) {
    case EnergyKind::Heat: return 0.5 * a * a;
    case EnergyKind::PorousMedium:
    case EnergyKind::FastDiffusion: {
      const double m = family.exponent();
      return std::pow(a, m + 1.0) / (m + 1.0);
    }
    case EnergyKind::HeightConstraint:
      return a <= 1.0 ? ExtReal(0.0) : ExtReal::infinity();
    case EnergyKind::Custom: {
      const auto fa = energy_value(family, a);
      if (fa.is_infinite()) return ExtReal::infinity();
      const auto* c = family.custom_energy();
      const double integral = numerics::adaptive_simpson(c->value, 0.0, a, 1e-10);
      return a * fa.value() - 2.0 * integral;
    }
  }
  return ExtReal::infinity();
}

ExtReal h1_density(const RegularizedEnergy& reg, double a) {
  if (a < 0.0 || std::isnan(a)) return ExtReal::infinity();
  if (a == 0.0) return 0.0;
  auto f = [&](double s) { return reg_value(reg, s).value(); };
  const double integral = numerics::adaptive_simpson(f, 0.0, a, 1e-10);
  return a * f(a) - 2.0 * integral;
}

double h1_derivative(const EnergyFamily& family, double a) {
  switch (family.kind()) {
    case EnergyKind::Heat: return a;
    case EnergyKind::PorousMedium:
    case EnergyKind::FastDiffusion: return std::pow(a, family.exponent());
    case EnergyKind::HeightConstraint: return 0.0;
    case EnergyKind::Custom: return a * family.derivative(a) - energy_value(family, a).value();
  }
  return 0.0;
}

double h1_derivative(const RegularizedEnergy& reg, double a) {
  return a * reg_derivative(reg, a) - reg_value(reg, a).value();
}

double h1_truncation_point(const EnergyFamily& family, double m_level) {
  return truncation_point([&](double a) { return h1_sup_subgradient(family, a); },
                          family.domain_upper(), m_level);
}

double h1_truncation_point(const RegularizedEnergy& reg, double m_level) {
  return truncation_point([&](double a) { return h1_derivative(reg, a); },
                          std::numeric_limits<double>::infinity(), m_level);
}

ExtReal h1_truncated(const EnergyFamily& family, double m_level, double a) {
  if (a < 0.0 || std::isnan(a)) return ExtReal::infinity();
  const double am = h1_truncation_point(family, m_level);
  if (a < am) return h1_density(family, a);
  return h1_density(family, am).value() + m_level * (a - am);
}

ExtReal h1_truncated(const RegularizedEnergy& reg, double m_level, double a) {
  if (a < 0.0 || std::isnan(a)) return ExtReal::infinity();
  const double am = h1_truncation_point(reg, m_level);
  if (a < am) return h1_density(reg, a);
  return h1_density(reg, am).value() + m_level * (a - am);
}

}  // namespace blobflow
