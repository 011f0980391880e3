#include "blobflow/reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <stdexcept>

#include "blobflow/numerics.hpp"

namespace blobflow {

namespace {

double sphere_area(int d) { return 2.0 * std::pow(M_PI, 0.5 * d) / std::tgamma(0.5 * d); }

// Normalized cumulative integral of w on [0, π/2], Hermite-interpolated.
class ThetaTable {
 public:
  template <class W>
  explicit ThetaTable(W w) {
    constexpr int kCells = 4096;
    h_ = 0.5 * M_PI / kCells;
    value_.resize(kCells + 1);
    slope_.resize(kCells + 1);
    double acc = 0.0;
    for (int i = 0; i <= kCells; ++i) {
      value_[i] = acc;
      slope_[i] = w(i * h_);
      if (i < kCells) acc += numerics::gauss_legendre8(w, i * h_, (i + 1) * h_);
    }
    total_ = numerics::adaptive_simpson(w, 0.0, 0.5 * M_PI, 1e-13);
    for (int i = 0; i <= kCells; ++i) {
      value_[i] /= acc;
      slope_[i] /= acc;
    }
  }

  double total() const { return total_; }

  double operator()(double theta) const {
    if (theta <= 0.0) return 0.0;
    const double u = theta / h_;
    const auto cells = static_cast<double>(value_.size() - 1);
    if (u >= cells) return 1.0;
    const auto k = static_cast<std::size_t>(u);
    const double s = u - static_cast<double>(k), s2 = s * s, s3 = s2 * s;
    return std::clamp((2 * s3 - 3 * s2 + 1) * value_[k] + (s3 - 2 * s2 + s) * h_ * slope_[k] +
                          (-2 * s3 + 3 * s2) * value_[k + 1] + (s3 - s2) * h_ * slope_[k + 1],
                      0.0, 1.0);
  }

 private:
  double h_ = 0.0, total_ = 0.0;
  std::vector<double> value_, slope_;
};

// angular weight of the radial mass integral after s = sin θ (m > 1) or s = tan θ (m < 1)
std::function<double(double)> theta_weight(double m, int d) {
  if (m > 1.0) {
    const double p = 1.0 / (m - 1.0);
    return [p, d](double th) { return std::pow(std::sin(th), d - 1) * std::pow(std::cos(th), 2 * p + 1); };
  }
  const double p = 1.0 / (1.0 - m);
  return [p, d](double th) { return std::pow(std::sin(th), d - 1) * std::pow(std::cos(th), 2 * p - d - 1); };
}

const ThetaTable& theta_table(double m, int d) {
  static std::mutex mutex;
  static std::map<std::pair<double, int>, std::unique_ptr<ThetaTable>> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto& slot = cache[{m, d}];
  if (!slot) slot = std::make_unique<ThetaTable>(theta_weight(m, d));
  return *slot;
}

void check_barenblatt_parameters(double m, int d) {
  if (d < 1) throw std::invalid_argument("barenblatt: dimension must be positive");
  if (m == 1.0) throw std::invalid_argument("barenblatt: m = 1 is the heat equation");
  if (!(m > EnergyFamily::fast_diffusion_lower_bound(d))) {
    std::ostringstream os;
    os << "barenblatt: m = " << m << " must exceed 1 - 2/(d+2) = "
       << EnergyFamily::fast_diffusion_lower_bound(d);
    throw std::invalid_argument(os.str());
  }
}

}  // namespace

DeltaSchedule::DeltaSchedule(double beta, double r, int d) : beta_(beta), r_(r), d_(d) {
  if (d < 1) throw std::invalid_argument("delta schedule: dimension must be positive");
  if (!(r > std::max(d, 2))) {
    std::ostringstream os;
    os << "delta schedule: kernel exponent r = " << r << " must exceed max(d,2) = " << std::max(d, 2);
    throw std::invalid_argument(os.str());
  }
  const double bound = max_beta(r, d);
  if (!(beta > 0.0 && beta < bound)) {
    std::ostringstream os;
    os << "delta schedule: beta = " << beta << " must satisfy 0 < beta < (r-d)/(r-1) = " << bound
       << " (r = " << r << ", d = " << d << ")";
    throw std::invalid_argument(os.str());
  }
}

double DeltaSchedule::delta(double epsilon) const {
  if (!(epsilon > 0.0)) throw std::invalid_argument("delta schedule: epsilon must be positive");
  return std::pow(epsilon, beta_);
}

double delta_of_eps(const DeltaSchedule& s, double epsilon) { return s.delta(epsilon); }

double heat_kernel(int d, double t, std::span<const double> x) {
  if (!(t > 0.0)) throw std::invalid_argument("heat_kernel: t must be positive");
  double r2 = 0.0;
  for (double c : x) r2 += c * c;
  return std::pow(4.0 * M_PI * t, -0.5 * d) * std::exp(-r2 / (4.0 * t));
}

BarenblattProfile::BarenblattProfile(double m, int d) : m_(m), d_(d) {
  check_barenblatt_parameters(m, d);
  alpha_ = d / (d * (m - 1.0) + 2.0);
  beta_ = alpha_ / d;
  k_ = alpha_ * std::abs(m - 1.0) / (2.0 * d * m);
  const double p = 1.0 / std::abs(m - 1.0);
  const double gamma = m > 1.0 ? 0.5 * d + p : 0.5 * d - p;
  const double a = sphere_area(d) * std::pow(k_, -0.5 * d) * theta_table(m, d).total();
  c_ = std::pow(a, -1.0 / gamma);
}

double BarenblattProfile::operator()(double t, std::span<const double> x) const {
  if (!(t > 0.0)) throw std::invalid_argument("barenblatt: t must be positive");
  double r2 = 0.0;
  for (double c : x) r2 += c * c;
  const double xi2 = r2 * std::pow(t, -2.0 * beta_);
  const double scale = std::pow(t, -alpha_);
  if (m_ > 1.0) {
    const double base = c_ - k_ * xi2;
    return base > 0.0 ? scale * std::pow(base, 1.0 / (m_ - 1.0)) : 0.0;
  }
  return scale * std::pow(c_ + k_ * xi2, -1.0 / (1.0 - m_));
}

double BarenblattProfile::support_radius(double t) const {
  if (m_ < 1.0) return std::numeric_limits<double>::infinity();
  return std::sqrt(c_ / k_) * std::pow(t, beta_);
}

double BarenblattProfile::mass_radius(double t, double tail) const {
  if (m_ > 1.0) return support_radius(t);
  const ThetaTable& table = theta_table(m_, d_);
  double lo = 0.0, hi = 0.5 * M_PI;
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (1.0 - table(mid) > tail) lo = mid; else hi = mid;
  }
  return std::sqrt(c_ / k_) * std::tan(hi) * std::pow(t, beta_);
}

const BarenblattProfile& barenblatt_profile(double m, int d) {
  static std::mutex mutex;
  static std::map<std::pair<double, int>, std::unique_ptr<BarenblattProfile>> cache;
  check_barenblatt_parameters(m, d);
  std::lock_guard<std::mutex> lock(mutex);
  auto& slot = cache[{m, d}];
  if (!slot) slot = std::make_unique<BarenblattProfile>(m, d);
  return *slot;
}

double barenblatt(double m, int d, double t, std::span<const double> x) {
  return barenblatt_profile(m, d)(t, x);
}

Potential Potential::quadratic(double c) {
  Potential p;
  std::ostringstream os;
  os << "quadratic(" << c << ")";
  p.name = os.str();
  p.value = [c](std::span<const double> x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return 0.5 * c * s;
  };
  p.gradient = [c](std::span<const double> x, std::span<double> g) {
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = c * x[i];
  };
  p.w1inf_on = [c](const Box& box) {
    double r2 = 0.0;
    for (int k = 0; k < box.dim(); ++k) {
      const double a = std::max(std::abs(box.lo[k]), std::abs(box.hi[k]));
      r2 += a * a;
    }
    return std::abs(c) * (std::sqrt(r2) + 1.0);
  };
  return p;
}

ReferenceDensity heat_reference(int d, double t) {
  if (!(t > 0.0)) throw std::invalid_argument("heat_reference: t must be positive");
  const double half = 10.0 * std::sqrt(2.0 * t);
  std::ostringstream name;
  name << "heat_kernel(t=" << t << ")";
  std::optional<ReferenceDensity::Cdf> cdf;
  if (d == 1) cdf = [t](double x) { return 0.5 * std::erfc(-x / (2.0 * std::sqrt(t))); };
  return ReferenceDensity([d, t](std::span<const double> x) { return heat_kernel(d, t, x); },
                          Box::cube(d, -half, half), cdf, name.str());
}

ReferenceDensity barenblatt_reference(double m, int d, double t) {
  const BarenblattProfile& profile = barenblatt_profile(m, d);
  if (!(t > 0.0)) throw std::invalid_argument("barenblatt_reference: t must be positive");
  const double radius = profile.mass_radius(t, 1e-10) * (m > 1.0 ? 1.0 + 1e-12 : 1.0);
  std::ostringstream name;
  name << "barenblatt(m=" << m << ",t=" << t << ")";
  std::optional<ReferenceDensity::Cdf> cdf;
  if (d == 1) {
    const ThetaTable* table = &theta_table(m, 1);
    const double s0 = std::sqrt(profile.constant() / profile.k()) * std::pow(t, profile.beta());
    const bool compact = m > 1.0;
    cdf = [table, s0, compact](double x) {
      const double u = std::abs(x) / s0;
      const double theta = compact ? (u >= 1.0 ? 0.5 * M_PI : std::asin(u)) : std::atan(u);
      const double half = 0.5 * (*table)(theta);
      return x < 0.0 ? 0.5 - half : 0.5 + half;
    };
  }
  return ReferenceDensity([&profile, t](std::span<const double> x) { return profile(t, x); },
                          Box::cube(d, -radius, radius), cdf, name.str());
}

// ---------------------------------------------------------------------------

double conjugate_derivative(const EnergyFamily& family, double b) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  switch (family.kind()) {
    case EnergyKind::Heat:
      return std::exp(b);
    case EnergyKind::PorousMedium: {
      const double m = family.exponent();
      return b > 0.0 ? std::pow((m - 1.0) * b / m, 1.0 / (m - 1.0)) : 0.0;
    }
    case EnergyKind::FastDiffusion: {
      const double m = family.exponent();
      return b < 0.0 ? std::pow((m - 1.0) * b / m, 1.0 / (m - 1.0)) : kInf;
    }
    case EnergyKind::HeightConstraint:
      return b > 0.0 ? 1.0 : 0.0;
    case EnergyKind::Custom:
      break;
  }
  throw std::invalid_argument("steady state: no closed-form (f*)' for custom energies");
}

SteadyState::SteadyState(EnergyFamily family, Potential potential, Box box, double z)
    : family_(std::move(family)), potential_(std::move(potential)), box_(std::move(box)), z_(z) {}

double SteadyState::operator()(std::span<const double> x) const {
  if (!box_.contains(x)) return 0.0;
  const double v = conjugate_derivative(family_, z_ - potential_.value(x));
  return std::isfinite(v) ? std::max(v, 0.0) : 0.0;
}

ReferenceDensity SteadyState::as_reference() const {
  SteadyState copy = *this;
  return ReferenceDensity([copy](std::span<const double> x) { return copy(x); }, box_, std::nullopt,
                          "steady_state(" + family_.name() + "," + potential_.name + ")");
}

SteadyState steady_state(const EnergyFamily& family, const Potential& potential, const Box& box,
                         int resolution) {
  const int d = box.dim();
  if (d < 1 || d > 3) throw std::invalid_argument("steady_state: box dimension must be 1, 2 or 3");
  if (resolution < 4) throw std::invalid_argument("steady_state: resolution must be >= 4");
  if (!potential.value) throw std::invalid_argument("steady_state: potential has no value");

  // V at cell corners
  const int n = resolution;
  std::vector<double> h(d);
  double cell = 1.0;
  std::size_t corners = 1;
  for (int k = 0; k < d; ++k) {
    h[k] = (box.hi[k] - box.lo[k]) / n;
    cell *= h[k];
    corners *= static_cast<std::size_t>(n + 1);
  }
  std::vector<double> vc(corners);
  std::vector<int> idx(d);
  std::vector<double> x(d);
  double vmin_in = std::numeric_limits<double>::infinity();
  double vmin_edge = std::numeric_limits<double>::infinity();
  double vmax = -std::numeric_limits<double>::infinity();
  for (std::size_t flat = 0; flat < corners; ++flat) {
    std::size_t rest = flat;
    bool edge = false;
    for (int k = d - 1; k >= 0; --k) {
      idx[k] = static_cast<int>(rest % (n + 1));
      rest /= (n + 1);
      x[k] = box.lo[k] + idx[k] * h[k];
      edge = edge || idx[k] == 0 || idx[k] == n;
    }
    vc[flat] = potential.value(x);
    vmax = std::max(vmax, vc[flat]);
    if (edge) vmin_edge = std::min(vmin_edge, vc[flat]);
    else vmin_in = std::min(vmin_in, vc[flat]);
  }
  const double margin = 1e-6 * (1.0 + std::abs(vmin_in));
  if (!(vmin_edge > vmin_in + margin)) {
    std::ostringstream os;
    os << "steady_state: potential is not coercive on the box (boundary min " << vmin_edge
       << ", interior min " << vmin_in << ")";
    throw std::invalid_argument(os.str());
  }

  // per-cell min/max and midpoint values
  std::size_t cells = 1;
  for (int k = 0; k < d; ++k) cells *= static_cast<std::size_t>(n);
  std::vector<double> cmin(cells), cmax(cells), cmid(cells);
  for (std::size_t flat = 0; flat < cells; ++flat) {
    std::size_t rest = flat;
    for (int k = d - 1; k >= 0; --k) {
      idx[k] = static_cast<int>(rest % n);
      rest /= n;
      x[k] = box.lo[k] + (idx[k] + 0.5) * h[k];
    }
    cmid[flat] = potential.value(x);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (int corner = 0; corner < (1 << d); ++corner) {
      std::size_t c = 0;
      for (int k = 0; k < d; ++k) c = c * (n + 1) + idx[k] + ((corner >> k) & 1);
      lo = std::min(lo, vc[c]);
      hi = std::max(hi, vc[c]);
    }
    cmin[flat] = std::min(lo, cmid[flat]);
    cmax[flat] = std::max(hi, cmid[flat]);
  }

  const bool height = family.kind() == EnergyKind::HeightConstraint;
  auto mass = [&](double z) {
    double s = 0.0;
    for (std::size_t c = 0; c < cells; ++c) {
      if (height) {
        // fraction of the cell below level z, linear ramp between corner extremes
        if (z <= cmin[c]) continue;
        s += cmax[c] > cmin[c] ? std::min(1.0, (z - cmin[c]) / (cmax[c] - cmin[c])) : 1.0;
      } else {
        const double v = conjugate_derivative(family, z - cmid[c]);
        if (!std::isfinite(v)) return std::numeric_limits<double>::infinity();
        s += std::max(v, 0.0);
      }
    }
    return s * cell;
  };

  double lo = vmin_in - 10.0, hi = vmax + 10.0;
  if (family.kind() == EnergyKind::FastDiffusion) hi = std::min(hi, vmin_in);
  if (!(mass(lo) < 1.0)) {
    // the fast-diffusion profile can carry unit mass far below min V
    for (int it = 0; it < 60 && !(mass(lo) < 1.0); ++it) lo -= 10.0 * (1 << std::min(it, 20));
  }
  if (!(mass(lo) < 1.0) || !(mass(hi) >= 1.0)) {
    std::ostringstream os;
    os << "steady_state: mass never reaches 1 on the box; enlarge the box (mass at Z = " << hi
       << " is " << mass(hi) << ")";
    throw std::runtime_error(os.str());
  }
  for (int it = 0; it < numerics::kMaxIterations; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (mass(mid) < 1.0) lo = mid; else hi = mid;
  }
  return SteadyState(family, potential, box, 0.5 * (lo + hi));
}

}  // namespace blobflow
