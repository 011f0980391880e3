#include "blobflow/mollifier.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "blobflow/numerics.hpp"

namespace blobflow {

namespace {

double sphere_area(int d) { return 2.0 * std::pow(M_PI, 0.5 * d) / std::tgamma(0.5 * d); }

double gaussian_constant(int d) { return std::pow(2.0 * M_PI, -0.5 * d); }

void check_kernel(const MollifierKernel& k) {
  if (!(k.epsilon > 0.0)) throw std::invalid_argument("mollifier: epsilon must be positive");
  if (k.kind == KernelKind::PolynomialBump && k.bump_order < 3)
    throw std::invalid_argument("mollifier: bump order must be >= 3");
  if (k.kind == KernelKind::Gaussian && !(k.truncation_radius_multiple > 0.0))
    throw std::invalid_argument("mollifier: truncation radius must be positive");
}

// unit profile as a function of r² (avoids a square root on the hot path)
double profile_r2(const MollifierKernel& k, int d, double r2) {
  const double R = k.unit_support();
  if (r2 > R * R) return 0.0;
  if (k.kind == KernelKind::Gaussian) return gaussian_constant(d) * std::exp(-0.5 * r2);
  return bump_normalization(d, k.bump_order) * std::pow(1.0 - r2, k.bump_order);
}

// g'(r)/r as a function of r²
double slope_over_r(const MollifierKernel& k, int d, double r2) {
  const double R = k.unit_support();
  if (r2 > R * R) return 0.0;
  if (k.kind == KernelKind::Gaussian) return -gaussian_constant(d) * std::exp(-0.5 * r2);
  const int q = k.bump_order;
  return -2.0 * q * bump_normalization(d, q) * std::pow(1.0 - r2, q - 1);
}

}  // namespace

std::string MollifierKernel::name() const {
  std::ostringstream os;
  if (kind == KernelKind::Gaussian) os << "gaussian";
  else os << "bump" << bump_order;
  return os.str();
}

double bump_normalization(int d, int q) {
  return std::tgamma(q + 1.0 + 0.5 * d) / (std::pow(M_PI, 0.5 * d) * std::tgamma(q + 1.0));
}

double unit_profile(const MollifierKernel& k, int d, double r) { return profile_r2(k, d, r * r); }

double unit_profile_d1(const MollifierKernel& k, int d, double r) {
  return r * slope_over_r(k, d, r * r);
}

double unit_profile_d2(const MollifierKernel& k, int d, double r) {
  const double R = k.unit_support();
  if (r > R) return 0.0;
  const double r2 = r * r;
  if (k.kind == KernelKind::Gaussian) return gaussian_constant(d) * (r2 - 1.0) * std::exp(-0.5 * r2);
  const int q = k.bump_order;
  const double c = bump_normalization(d, q), s = 1.0 - r2;
  return c * (-2.0 * q * std::pow(s, q - 1) + 4.0 * q * (q - 1) * r2 * std::pow(s, q - 2));
}

double kernel_value(const MollifierKernel& k, std::span<const double> x) {
  check_kernel(k);
  const int d = static_cast<int>(x.size());
  double r2 = 0.0;
  for (double c : x) {
    const double y = c / k.epsilon;
    r2 += y * y;
  }
  return std::pow(k.epsilon, -d) * profile_r2(k, d, r2);
}

std::vector<double> kernel_gradient(const MollifierKernel& k, std::span<const double> x) {
  check_kernel(k);
  const int d = static_cast<int>(x.size());
  std::vector<double> y(d);
  double r2 = 0.0;
  for (int i = 0; i < d; ++i) {
    y[i] = x[i] / k.epsilon;
    r2 += y[i] * y[i];
  }
  const double s = std::pow(k.epsilon, -d - 1) * slope_over_r(k, d, r2);
  for (double& c : y) c *= s;
  return y;
}

std::vector<double> mollified_density(const ParticleEnsemble& particles, const MollifierKernel& k,
                                      const PointSet& queries) {
  const int d = particles.dim();
  if (queries.dim() != d) throw std::invalid_argument("mollified_density: dimension mismatch");
  std::vector<double> out(queries.size(), 0.0);
  std::vector<double> diff(d);
  for (std::size_t q = 0; q < queries.size(); ++q) {
    double s = 0.0;
    for (std::size_t j = 0; j < particles.size(); ++j) {
      for (int i = 0; i < d; ++i) diff[i] = queries[q][i] - particles[j][i];
      s += kernel_value(k, diff);
    }
    out[q] = s * particles.weight();
  }
  return out;
}

PointSet mollified_density_gradient(const ParticleEnsemble& particles, const MollifierKernel& k,
                                    const PointSet& queries) {
  const int d = particles.dim();
  if (queries.dim() != d)
    throw std::invalid_argument("mollified_density_gradient: dimension mismatch");
  PointSet out(d, queries.size());
  std::vector<double> diff(d);
  for (std::size_t q = 0; q < queries.size(); ++q) {
    auto o = out[q];
    for (std::size_t j = 0; j < particles.size(); ++j) {
      for (int i = 0; i < d; ++i) diff[i] = queries[q][i] - particles[j][i];
      const auto g = kernel_gradient(k, diff);
      for (int i = 0; i < d; ++i) o[i] += g[i];
    }
    for (int i = 0; i < d; ++i) o[i] *= particles.weight();
  }
  return out;
}

KernelNorms kernel_norms(const MollifierKernel& k, int d) {
  check_kernel(k);
  const double R = k.unit_support();
  const double area = sphere_area(d);
  KernelNorms n;
  n.sup = unit_profile(k, d, 0.0);
  if (k.kind == KernelKind::Gaussian) {
    // E|X| for X ~ N(0, I_d)
    n.grad_l1 = std::sqrt(2.0) * std::tgamma(0.5 * (d + 1)) / std::tgamma(0.5 * d);
  } else {
    n.grad_l1 = area * numerics::adaptive_simpson(
                           [&](double r) { return std::abs(unit_profile_d1(k, d, r)) * std::pow(r, d - 1); },
                           0.0, R, 1e-12);
  }
  if (k.kind == KernelKind::Gaussian && d == 1) {
    n.hess_l1 = 4.0 * unit_profile(k, 1, 1.0);
  } else {
    // Hessian eigenvalues of a radial function: g''(r) and g'(r)/r
    auto integrand = [&](double r) {
      const double radial = std::abs(unit_profile_d2(k, d, r));
      const double tangential = r > 0.0 ? std::abs(unit_profile_d1(k, d, r) / r) : radial;
      return std::max(radial, d > 1 ? tangential : 0.0) * std::pow(r, d - 1);
    };
    const double kink = k.kind == KernelKind::Gaussian ? 1.0 : 1.0 / std::sqrt(2.0 * k.bump_order - 1.0);
    n.hess_l1 = area * (numerics::adaptive_simpson(integrand, 0.0, kink, 1e-12) +
                        numerics::adaptive_simpson(integrand, kink, R, 1e-12));
  }
  const double eps = k.epsilon;
  n.sup *= std::pow(eps, -d);
  n.grad_l1 /= eps;
  n.hess_l1 /= eps * eps;
  return n;
}

KernelValidation validate_kernel(const MollifierKernel& k, int d) {
  KernelValidation v;
  if (!(k.epsilon > 0.0)) {
    v.failures.push_back("epsilon must be positive");
    return v;
  }
  if (k.kind == KernelKind::PolynomialBump && k.bump_order < 3) {
    v.failures.push_back("bump order must be >= 3 for a C^2 kernel");
    return v;
  }
  if (d < 1) {
    v.failures.push_back("dimension must be positive");
    return v;
  }

  const double R = k.unit_support();
  const double mass = sphere_area(d) * numerics::adaptive_simpson(
                                           [&](double r) { return unit_profile(k, d, r) * std::pow(r, d - 1); },
                                           0.0, R, 1e-14);
  v.normalization_error = std::abs(mass - 1.0);
  if (!(v.normalization_error < 1e-8)) {
    std::ostringstream os;
    os << "normalization error " << v.normalization_error << " exceeds 1e-8";
    v.failures.push_back(os.str());
  }

  // evenness at deterministic probes
  Rng rng(0x5eedULL);
  std::vector<double> x(d), mx(d);
  for (int p = 0; p < 64; ++p) {
    for (int i = 0; i < d; ++i) {
      x[i] = rng.uniform(-1.5, 1.5) * k.support_radius();
      mx[i] = -x[i];
    }
    if (kernel_value(k, x) != kernel_value(k, mx)) v.even = false;
  }
  if (!v.even) v.failures.push_back("kernel is not even");

  // tail: φ(ρ)ρ^r must stay bounded, i.e. be nonincreasing over the outer probes
  const double r = k.tail_exponent(d);
  const double radii[] = {1.0, 2.0, 4.0, 8.0, 16.0, 32.0};
  std::vector<double> scaled;
  for (double rho : radii) scaled.push_back(unit_profile(k, d, rho) * std::pow(rho, r));
  v.tail_constant = std::max(unit_profile(k, d, 0.0), *std::max_element(scaled.begin(), scaled.end()));
  for (std::size_t i = scaled.size() - 3; i + 1 < scaled.size(); ++i)
    if (!(scaled[i + 1] <= scaled[i]) || !std::isfinite(scaled[i])) v.tail_bound = false;
  if (!v.tail_bound) v.failures.push_back("tail bound phi(x) <= C|x|^-r fails at probe radii");

  v.exponent_admissible = r > std::max(d, 2);
  if (!v.exponent_admissible) {
    std::ostringstream os;
    os << "effective_r = " << r << " violates r > max(d,2) = " << std::max(d, 2);
    v.failures.push_back(os.str());
  }
  return v;
}

}  // namespace blobflow
