#pragma once

#include <span>
#include <string>
#include <vector>

#include "blobflow/ensemble.hpp"

namespace blobflow {

enum class KernelKind { Gaussian, PolynomialBump };

/// φ_ε(x) = ε^{-d} φ(x/ε) for a radial unit profile φ:
///   Gaussian        (2π)^{-d/2} exp(-|x|²/2), cut to zero beyond truncation_radius_multiple
///   PolynomialBump  c_{d,q} (1 - |x|²)₊^q,  q = bump_order ≥ 3
struct MollifierKernel {
  KernelKind kind = KernelKind::Gaussian;
  double epsilon = 0.1;
  /// Tail exponent r used by the δ(ε) schedule check; 0 means d + 3.
  double effective_r = 0.0;
  double truncation_radius_multiple = 8.0;
  int bump_order = 3;

  static MollifierKernel gaussian(double epsilon) { return {KernelKind::Gaussian, epsilon}; }
  static MollifierKernel bump(double epsilon, int order = 3) {
    return {KernelKind::PolynomialBump, epsilon, 0.0, 8.0, order};
  }

  double tail_exponent(int d) const { return effective_r > 0.0 ? effective_r : d + 3.0; }
  /// Radius of the support of the unit profile.
  double unit_support() const { return kind == KernelKind::Gaussian ? truncation_radius_multiple : 1.0; }
  /// Radius beyond which φ_ε vanishes.
  double support_radius() const { return epsilon * unit_support(); }
  std::string name() const;
};

/// Normalizing constant of the unit bump (1 - |x|²)₊^q in dimension d.
double bump_normalization(int d, int q);

/// Unit radial profile φ(r) and its derivatives in r, at ε = 1.
double unit_profile(const MollifierKernel& k, int d, double r);
double unit_profile_d1(const MollifierKernel& k, int d, double r);
double unit_profile_d2(const MollifierKernel& k, int d, double r);

double kernel_value(const MollifierKernel& k, std::span<const double> x);
std::vector<double> kernel_gradient(const MollifierKernel& k, std::span<const double> x);

/// μ_ε(y) = (1/N) Σ_j φ_ε(y - x_j), summed in particle order.
std::vector<double> mollified_density(const ParticleEnsemble& particles, const MollifierKernel& k,
                                      const PointSet& queries);
/// ∇μ_ε(y) = (1/N) Σ_j ∇φ_ε(y - x_j), one vector per query.
PointSet mollified_density_gradient(const ParticleEnsemble& particles, const MollifierKernel& k,
                                    const PointSet& queries);

/// ‖φ_ε‖_∞, ‖∇φ_ε‖_{L¹}, ‖D²φ_ε‖_{L¹} (operator norm of the Hessian inside the integral).
struct KernelNorms {
  double sup = 0.0;
  double grad_l1 = 0.0;
  double hess_l1 = 0.0;
};
KernelNorms kernel_norms(const MollifierKernel& k, int d);

struct KernelValidation {
  double normalization_error = 0.0;
  bool even = true;
  double tail_constant = 0.0;  // estimate of C_φ from probe radii
  bool tail_bound = true;
  bool exponent_admissible = true;  // effective_r > max(d, 2)
  std::vector<std::string> failures;

  bool ok() const { return failures.empty(); }
};
KernelValidation validate_kernel(const MollifierKernel& k, int d);

}  // namespace blobflow
