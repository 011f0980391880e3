#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "blobflow/convex_energy.hpp"
#include "blobflow/ensemble.hpp"

namespace blobflow {

/// δ(ε) = ε^β, admissible when 0 < β < (r - d)/(r - 1).
class DeltaSchedule {
 public:
  DeltaSchedule(double beta, double r, int d);

  static double max_beta(double r, int d) { return (r - d) / (r - 1.0); }

  double beta() const { return beta_; }
  double r() const { return r_; }
  int dim() const { return d_; }
  double delta(double epsilon) const;

 private:
  double beta_, r_;
  int d_;
};

double delta_of_eps(const DeltaSchedule& s, double epsilon);

/// (4πt)^{-d/2} exp(-|x|²/(4t))
double heat_kernel(int d, double t, std::span<const double> x);

/// Self-similar solution of ∂_t ρ = Δ(ρ^m) with unit mass.
///   m > 1:  t^{-α} (C - k|ξ|²)₊^{1/(m-1)}
///   m < 1:  t^{-α} (C + k|ξ|²)^{-1/(1-m)}
/// with ξ = x t^{-β}, α = d/(d(m-1)+2), β = α/d, k = α|m-1|/(2dm).
class BarenblattProfile {
 public:
  BarenblattProfile(double m, int d);

  double m() const { return m_; }
  int dim() const { return d_; }
  double alpha() const { return alpha_; }
  double beta() const { return beta_; }
  double k() const { return k_; }
  double constant() const { return c_; }

  double operator()(double t, std::span<const double> x) const;
  /// Radius of the support at time t (infinite for m < 1).
  double support_radius(double t) const;
  /// Radius outside of which at most `tail` mass remains (m < 1), or the support radius.
  double mass_radius(double t, double tail) const;

 private:
  double m_;
  int d_;
  double alpha_, beta_, k_, c_;
};

/// Cached profile per (m, d).
const BarenblattProfile& barenblatt_profile(double m, int d);
double barenblatt(double m, int d, double t, std::span<const double> x);

/// Potential V with gradient; v = ∇V is the drift in the particle ODE.
struct Potential {
  std::string name = "none";
  std::function<double(std::span<const double>)> value;
  std::function<void(std::span<const double>, std::span<double>)> gradient;
  /// Bound on ‖∇V‖_{W^{1,∞}} over a box.
  std::function<double(const Box&)> w1inf_on;

  /// V(x) = (c/2)|x|²
  static Potential quadratic(double c = 1.0);
};

/// Reference solutions packaged as ReferenceDensity objects (1D CDFs included).
ReferenceDensity heat_reference(int d, double t);
ReferenceDensity barenblatt_reference(double m, int d, double t);

/// ρ̄ = max{(f*)'(Z - V), 0} normalized to unit mass on a box.
class SteadyState {
 public:
  SteadyState(EnergyFamily family, Potential potential, Box box, double z);

  const EnergyFamily& family() const { return family_; }
  const Potential& potential() const { return potential_; }
  const Box& box() const { return box_; }
  double z() const { return z_; }

  double operator()(std::span<const double> x) const;
  ReferenceDensity as_reference() const;

 private:
  EnergyFamily family_;
  Potential potential_;
  Box box_;
  double z_;
};

/// (f*)'(b) in closed form for the shipped families; +∞ where f* is infinite.
double conjugate_derivative(const EnergyFamily& family, double b);

/// Solves for Z by bisection on the mass. `resolution` is the number of cells per axis.
SteadyState steady_state(const EnergyFamily& family, const Potential& potential, const Box& box,
                         int resolution = 4096);

}  // namespace blobflow
