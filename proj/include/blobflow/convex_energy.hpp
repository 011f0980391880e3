#pragma once

#include <functional>
#include <limits>
#include <stdexcept>
#include <string>

#include "blobflow/numerics.hpp"

namespace blobflow {

/// A value in R ∪ {+∞}. Infinity is carried as a finite sentinel so that it
/// never collides with a floating-point overflow.
class ExtReal {
 public:
  static constexpr double kSentinel = std::numeric_limits<double>::max();

  constexpr ExtReal(double v = 0.0) : value_(v) {}  // NOLINT(google-explicit-constructor)
  static constexpr ExtReal infinity() { return ExtReal(kSentinel); }

  constexpr bool is_infinite() const { return value_ == kSentinel; }
  constexpr bool is_finite() const { return value_ != kSentinel; }
  /// Raw storage; equals kSentinel when infinite.
  constexpr double raw() const { return value_; }
  /// The finite value. Throws std::domain_error on +∞.
  double value() const {
    if (is_infinite()) throw std::domain_error("ExtReal: value() on +infinity");
    return value_;
  }

  friend constexpr bool operator==(ExtReal a, ExtReal b) { return a.value_ == b.value_; }
  friend constexpr bool operator<(ExtReal a, ExtReal b) { return a.value_ < b.value_; }
  friend constexpr bool operator<=(ExtReal a, ExtReal b) { return a.value_ <= b.value_; }

 private:
  double value_;
};

enum class EnergyKind { Heat, PorousMedium, FastDiffusion, HeightConstraint, Custom };

/// User-supplied energy density for library callers. `value` and `derivative`
/// are only queried on [0, domain_upper]; value(0) must be 0.
struct CustomEnergy {
  std::function<double(double)> value;
  std::function<double(double)> derivative;
  double domain_upper = std::numeric_limits<double>::infinity();
  std::string name = "custom";
};

/// A convex internal energy density f with f(0) = 0 and f = +∞ on (-∞, 0).
///
///   Heat              f(s) = s log s - s
///   PorousMedium      f(s) = s^m / (m - 1),  m > 1
///   FastDiffusion     f(s) = s^m / (m - 1),  1 - 2/(d+2) < m < 1
///   HeightConstraint  f = indicator of [0, 1]
class EnergyFamily {
 public:
  static EnergyFamily heat();
  static EnergyFamily porous_medium(double m);
  static EnergyFamily fast_diffusion(double m, int dimension);
  static EnergyFamily height_constraint();
  static EnergyFamily custom(CustomEnergy energy);

  EnergyKind kind() const { return kind_; }
  double exponent() const { return m_; }
  int dimension_hint() const { return dim_; }
  std::string name() const;

  /// Supremum of dom(f): 1 for the height constraint, +∞ otherwise.
  double domain_upper() const;
  /// f'(a) for a in the interior of dom(f).
  double derivative(double a) const;
  /// Metric slope |∂f|(a) on the interior of the domain.
  double slope_at(double a) const;
  const CustomEnergy* custom_energy() const { return kind_ == EnergyKind::Custom ? &custom_ : nullptr; }

  /// Smallest m admitted for fast diffusion in dimension d.
  static double fast_diffusion_lower_bound(int d) { return 1.0 - 2.0 / (d + 2.0); }

 private:
  EnergyFamily(EnergyKind kind, double m, int dim) : kind_(kind), m_(m), dim_(dim) {}

  EnergyKind kind_;
  double m_ = 1.0;
  int dim_ = 1;
  CustomEnergy custom_;
};

/// f_ε built from a family and the Moreau-Yosida parameter δ:
///   f_ε(a) = (δ/2)a² + ^δf(a) - ^δf(0) for a ≥ 0, +∞ for a < 0.
class RegularizedEnergy {
 public:
  RegularizedEnergy(EnergyFamily family, double delta, double epsilon = 0.0);

  const EnergyFamily& family() const { return family_; }
  double delta() const { return delta_; }
  double epsilon() const { return epsilon_; }
  /// ^δf(0), cached at construction.
  double envelope_at_zero() const { return envelope_zero_; }
  /// Right derivative f_ε'(0), cached at construction.
  double derivative_at_zero() const { return derivative_zero_; }
  /// Lipschitz bound for f_ε' on [0, ∞): δ + 1/δ.
  double derivative_lipschitz() const { return delta_ + 1.0 / delta_; }

 private:
  EnergyFamily family_;
  double delta_;
  double epsilon_;
  double envelope_zero_ = 0.0;
  double derivative_zero_ = 0.0;
};

ExtReal energy_value(const EnergyFamily& family, double a);

/// Proximal map J_δ(a) = argmin_{b ≥ 0} f(b) + |a - b|²/(2δ), a ≥ 0.
double prox(const EnergyFamily& family, double delta, double a);

/// Moreau envelope ^δf(a) = f(J_δ(a)) + |a - J_δ(a)|²/(2δ).
double moreau_value(const EnergyFamily& family, double delta, double a);

ExtReal reg_value(const RegularizedEnergy& reg, double a);
/// f_ε'(a) = δa + (a - J_δ(a))/δ; right derivative at 0.
double reg_derivative(const RegularizedEnergy& reg, double a);
/// f_ε*(b) = sup_{a ≥ 0} ab - f_ε(a), evaluated at the unique maximizer.
double reg_conjugate(const RegularizedEnergy& reg, double b);
/// (f_ε*)'(b): the a ≥ 0 with f_ε'(a) = b, or 0 when b ≤ f_ε'(0).
double reg_conjugate_derivative(const RegularizedEnergy& reg, double b);

/// Ḣ⁻¹ energy density e(a) = a f(a) - 2∫₀^a f.
ExtReal h1_density(const EnergyFamily& family, double a);
ExtReal h1_density(const RegularizedEnergy& reg, double a);
/// e'(a) = a f'(a) - f(a) on the interior of the domain.
double h1_derivative(const EnergyFamily& family, double a);
double h1_derivative(const RegularizedEnergy& reg, double a);

/// Kink location a_m = sup{a : sup ∂e(a) ≤ m_level}.
double h1_truncation_point(const EnergyFamily& family, double m_level);
double h1_truncation_point(const RegularizedEnergy& reg, double m_level);
/// e_m: e below a_m, extended linearly with slope m_level above it.
ExtReal h1_truncated(const EnergyFamily& family, double m_level, double a);
ExtReal h1_truncated(const RegularizedEnergy& reg, double m_level, double a);

}  // namespace blobflow
