#include "blobflow/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "blobflow/numerics.hpp"

namespace blobflow {

PointSet::PointSet(int dim, std::vector<double> coords) : dim_(dim), coords_(std::move(coords)) {
  if (dim < 1) throw std::invalid_argument("PointSet: dimension must be positive");
  if (coords_.size() % dim != 0)
    throw std::invalid_argument("PointSet: coordinate count is not a multiple of the dimension");
}

double Box::diameter() const {
  double s = 0.0;
  for (int k = 0; k < dim(); ++k) s += (hi[k] - lo[k]) * (hi[k] - lo[k]);
  return std::sqrt(s);
}

bool Box::contains(std::span<const double> x) const {
  for (int k = 0; k < dim(); ++k)
    if (x[k] < lo[k] || x[k] > hi[k]) return false;
  return true;
}

ParticleEnsemble::ParticleEnsemble(PointSet positions, double time, std::uint64_t seed)
    : positions_(std::move(positions)), time_(time), seed_(seed) {
  if (positions_.size() == 0) throw std::invalid_argument("ParticleEnsemble: need N >= 1");
  for (double c : positions_.coords())
    if (!std::isfinite(c)) throw std::invalid_argument("ParticleEnsemble: non-finite coordinate");
  if (!(time >= 0.0)) throw std::invalid_argument("ParticleEnsemble: time must be >= 0");
}

Box ParticleEnsemble::bounds() const {
  const int d = dim();
  Box b{std::vector<double>(d, std::numeric_limits<double>::infinity()),
        std::vector<double>(d, -std::numeric_limits<double>::infinity())};
  for (std::size_t i = 0; i < size(); ++i) {
    auto x = positions_[i];
    for (int k = 0; k < d; ++k) {
      b.lo[k] = std::min(b.lo[k], x[k]);
      b.hi[k] = std::max(b.hi[k], x[k]);
    }
  }
  return b;
}

ParticleEnsemble ParticleEnsemble::translated(std::span<const double> shift) const {
  PointSet moved = positions_;
  for (std::size_t i = 0; i < moved.size(); ++i)
    for (int k = 0; k < dim(); ++k) moved[i][k] += shift[k];
  return ParticleEnsemble(std::move(moved), time_, seed_);
}

// ---------------------------------------------------------------------------

namespace {

// CDF tabulated on a uniform grid, interpolated by cubic Hermite with the
// density as slope.
struct CdfTable {
  double lo = 0.0, h = 1.0;
  std::vector<double> value, slope;

  double operator()(double x) const {
    if (x <= lo) return 0.0;
    const std::size_t cells = value.size() - 1;
    const double u = (x - lo) / h;
    if (u >= static_cast<double>(cells)) return std::min(1.0, value.back());
    const auto k = static_cast<std::size_t>(u);
    const double s = u - static_cast<double>(k);
    const double s2 = s * s, s3 = s2 * s;
    const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s;
    const double h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
    const double f = h00 * value[k] + h10 * h * slope[k] + h01 * value[k + 1] +
                     h11 * h * slope[k + 1];
    return std::clamp(f, 0.0, 1.0);
  }
};

std::shared_ptr<CdfTable> tabulate_cdf(const ReferenceDensity::Density& density, double lo,
                                       double hi) {
  constexpr std::size_t kCells = 1 << 16;
  auto table = std::make_shared<CdfTable>();
  table->lo = lo;
  table->h = (hi - lo) / kCells;
  table->value.resize(kCells + 1);
  table->slope.resize(kCells + 1);
  auto rho = [&](double x) { return density(std::span<const double>(&x, 1)); };
  double acc = 0.0;
  for (std::size_t k = 0; k <= kCells; ++k) {
    const double x = lo + table->h * static_cast<double>(k);
    table->value[k] = acc;
    table->slope[k] = rho(x);
    if (k < kCells) acc += numerics::gauss_legendre8(rho, x, x + table->h);
  }
  return table;
}

double bump_profile(double r2) { return r2 < 1.0 ? std::exp(-1.0 / (1.0 - r2)) : 0.0; }

// Integral of |c - F(x)| over [u, v] where F is nondecreasing.
template <class F>
double abs_gap_integral(const F& cdf, double c, double u, double v, double fu, double fv) {
  const double gu = c - fu, gv = c - fv;
  if ((gu >= 0.0) == (gv >= 0.0)) return 0.5 * (v - u) * (std::abs(gu) + std::abs(gv));
  double a = u, b = v;
  for (int it = 0; it < 60 && b - a > 1e-15 * std::max(1.0, std::abs(a)); ++it) {
    const double m = 0.5 * (a + b);
    if ((c - cdf(m) >= 0.0) == (gu >= 0.0)) a = m; else b = m;
  }
  const double x = 0.5 * (a + b);
  return 0.5 * (x - u) * std::abs(gu) + 0.5 * (v - x) * std::abs(gv);
}

// Transport cost <P, C> of the entropic plan between weighted point clouds.
double sinkhorn_cost(const PointSet& x, const std::vector<double>& a, const PointSet& y,
                     const std::vector<double>& b, double eta, int iterations) {
  const std::size_t n = x.size(), m = y.size();
  std::vector<double> cost(n * m), kernel(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (int k = 0; k < x.dim(); ++k) {
        const double dk = x[i][k] - y[j][k];
        s += dk * dk;
      }
      cost[i * m + j] = std::sqrt(s);
      kernel[i * m + j] = std::exp(-cost[i * m + j] / eta);
    }
  std::vector<double> u(n, 1.0), v(m, 1.0);
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += kernel[i * m + j] * v[j];
      u[i] = a[i] / std::max(s, 1e-300);
    }
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += kernel[i * m + j] * u[i];
      v[j] = b[j] / std::max(s, 1e-300);
    }
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) total += u[i] * kernel[i * m + j] * v[j] * cost[i * m + j];
  return total;
}

void require_1d_pair(const ParticleEnsemble& a, const ParticleEnsemble& b) {
  if (a.dim() != 1 || b.dim() != 1)
    throw std::invalid_argument("1D Wasserstein distance requires d = 1 ensembles");
  if (a.size() != b.size())
    throw std::invalid_argument("1D Wasserstein distance requires equal particle counts");
}

std::vector<double> sorted_coords(const ParticleEnsemble& e) {
  std::vector<double> v = e.positions().coords();
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

ReferenceDensity::ReferenceDensity(Density density, Box support, std::optional<Cdf> cdf,
                                   std::string name)
    : density_(std::move(density)), support_(std::move(support)), name_(std::move(name)) {
  if (!density_) throw std::invalid_argument("ReferenceDensity: empty evaluator");
  if (support_.dim() < 1 || support_.hi.size() != support_.lo.size())
    throw std::invalid_argument("ReferenceDensity: malformed support box");
  for (int k = 0; k < support_.dim(); ++k)
    if (!(support_.hi[k] > support_.lo[k]))
      throw std::invalid_argument("ReferenceDensity: empty support box");
  if (cdf) {
    cdf_ = std::move(*cdf);
  } else if (support_.dim() == 1) {
    auto table = tabulate_cdf(density_, support_.lo[0], support_.hi[0]);
    cdf_ = [table](double x) { return (*table)(x); };
  }
}

ReferenceDensity ReferenceDensity::on_interval(std::function<double(double)> density, double lo,
                                               double hi, std::optional<Cdf> cdf,
                                               std::string name) {
  Density wrapped = [density = std::move(density)](std::span<const double> x) {
    return density(x[0]);
  };
  return ReferenceDensity(std::move(wrapped), Box::interval(lo, hi), std::move(cdf),
                          std::move(name));
}

double ReferenceDensity::cdf(double x) const {
  if (!cdf_) throw std::logic_error("ReferenceDensity: no CDF in d > 1");
  return cdf_(x);
}

double ReferenceDensity::quantile(double u) const {
  if (!cdf_) throw std::logic_error("ReferenceDensity: no CDF in d > 1");
  double lo = support_.lo[0], hi = support_.hi[0];
  for (int it = 0; it < numerics::kMaxIterations; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (hi - lo <= 1e-14 * std::max(1.0, std::abs(mid)) || mid == lo || mid == hi) return mid;
    if (cdf_(mid) < u) lo = mid; else hi = mid;
  }
  return 0.5 * (lo + hi);
}

double ReferenceDensity::mass(int resolution) const {
  const int d = dim();
  std::vector<double> h(d);
  double cell = 1.0;
  std::size_t total = 1;
  for (int k = 0; k < d; ++k) {
    h[k] = (support_.hi[k] - support_.lo[k]) / resolution;
    cell *= h[k];
    total *= static_cast<std::size_t>(resolution);
  }
  std::vector<double> x(d);
  double sum = 0.0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t rest = flat;
    for (int k = d - 1; k >= 0; --k) {
      x[k] = support_.lo[k] + (static_cast<double>(rest % resolution) + 0.5) * h[k];
      rest /= resolution;
    }
    sum += density_(x);
  }
  return sum * cell;
}

// ---------------------------------------------------------------------------

ParticleEnsemble prepare_initial_particles(const ReferenceDensity& target, std::size_t n,
                                           std::uint64_t seed, PlacementMode mode) {
  if (n < 1) throw std::invalid_argument("prepare_initial_particles: need N >= 1");
  const int d = target.dim();
  if (mode == PlacementMode::QuantileGrid1D) {
    if (d != 1 || !target.has_cdf())
      throw std::invalid_argument("QuantileGrid1D placement requires d = 1 and a CDF");
    std::vector<double> xs(n);
    for (std::size_t i = 0; i < n; ++i)
      xs[i] = target.quantile((static_cast<double>(i) + 0.5) / static_cast<double>(n));
    return ParticleEnsemble(PointSet(1, std::move(xs)), 0.0, seed);
  }

  const Box& box = target.support();
  const int probes = d == 1 ? 4096 : (d == 2 ? 256 : 64);
  double peak = 0.0;
  {
    std::vector<double> x(d);
    std::size_t total = 1;
    for (int k = 0; k < d; ++k) total *= static_cast<std::size_t>(probes);
    for (std::size_t flat = 0; flat < total; ++flat) {
      std::size_t rest = flat;
      for (int k = d - 1; k >= 0; --k) {
        x[k] = box.lo[k] + (static_cast<double>(rest % probes) + 0.5) *
                               (box.hi[k] - box.lo[k]) / probes;
        rest /= probes;
      }
      peak = std::max(peak, target(x));
    }
  }
  if (!(peak > 0.0)) throw std::runtime_error("rejection sampling: target vanishes on its box");
  const double envelope = 1.1 * peak;

  Rng rng(seed);
  std::vector<double> coords;
  coords.reserve(n * d);
  std::vector<double> x(d);
  std::size_t attempts = 0, accepted = 0;
  while (accepted < n) {
    for (int k = 0; k < d; ++k) x[k] = rng.uniform(box.lo[k], box.hi[k]);
    const double u = rng.uniform01();
    ++attempts;
    if (u * envelope < target(x)) {
      coords.insert(coords.end(), x.begin(), x.end());
      ++accepted;
    }
    if (attempts % 100000 == 0 &&
        static_cast<double>(accepted) < 1e-4 * static_cast<double>(attempts)) {
      std::ostringstream os;
      os << "rejection sampling stalled: accepted " << accepted << " of " << attempts
         << " proposals (envelope " << envelope << " on box of diameter " << box.diameter()
         << ")";
      throw std::runtime_error(os.str());
    }
  }
  return ParticleEnsemble(PointSet(d, std::move(coords)), 0.0, seed);
}

ReferenceDensity well_prepared(const ReferenceDensity& target, double alpha) {
  if (alpha == 0.0) return target;
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("well_prepared: alpha must lie in (0, 1)");
  const int d = target.dim();
  if (d > 2) throw std::invalid_argument("well_prepared: supported for d <= 2");
  const double radius = 1.0 / alpha;

  // mass of ρ⁰ inside the ball of radius 1/α
  auto inside = [target, radius](std::span<const double> x) {
    double r2 = 0.0;
    for (double c : x) r2 += c * c;
    return r2 < radius * radius ? target(x) : 0.0;
  };
  const double ball_mass = ReferenceDensity(inside, target.support(), std::nullopt).mass(
      d == 1 ? 1 << 16 : 1024);
  if (!(ball_mass > 0.0)) throw std::runtime_error("well_prepared: no mass inside 1/alpha ball");
  const double scale = std::pow(ball_mass, -1.0 / d);

  auto truncated = [inside, scale](std::span<const double> x) {
    double y[2];
    for (std::size_t k = 0; k < x.size(); ++k) y[k] = x[k] / scale;
    return inside(std::span<const double>(y, x.size()));
  };
  // (ψ_α * ρ̃)(x) by a tensor Gauss-Legendre rule over the support of ψ_α, with the
  // discrete kernel weights normalized to sum to one so that mass is preserved exactly
  constexpr int kPanels = 4;
  std::vector<double> z1, w1;
  const double h = 2.0 * alpha / kPanels;
  for (int p = 0; p < kPanels; ++p) numerics::append_gauss_legendre8(-alpha + p * h, -alpha + (p + 1) * h, z1, w1);
  std::vector<double> nodes, weights;
  for (std::size_t flat = 0, total = static_cast<std::size_t>(std::pow(z1.size(), d)); flat < total; ++flat) {
    std::size_t rest = flat;
    double r2 = 0.0, w = 1.0;
    for (int k = 0; k < d; ++k) {
      const std::size_t j = rest % z1.size();
      rest /= z1.size();
      nodes.push_back(z1[j]);
      r2 += z1[j] * z1[j];
      w *= w1[j];
    }
    weights.push_back(w * bump_profile(r2 / (alpha * alpha)));
  }
  const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  for (double& w : weights) w /= wsum;

  ReferenceDensity::Density smoothed = [truncated, nodes, weights, d](std::span<const double> x) {
    double s = 0.0, y[2];
    for (std::size_t j = 0; j < weights.size(); ++j) {
      if (weights[j] == 0.0) continue;
      for (int k = 0; k < d; ++k) y[k] = x[k] - nodes[j * d + k];
      s += weights[j] * truncated(std::span<const double>(y, d));
    }
    return s;
  };
  Box box = target.support();
  for (int k = 0; k < d; ++k) {
    box.lo[k] = std::max(box.lo[k] * scale, -radius * scale) - alpha;
    box.hi[k] = std::min(box.hi[k] * scale, radius * scale) + alpha;
  }
  return ReferenceDensity(std::move(smoothed), std::move(box), std::nullopt,
                          target.name() + "_well_prepared");
}

// ---------------------------------------------------------------------------

double second_moment(const ParticleEnsemble& e) {
  double s = 0.0;
  for (double c : e.positions().coords()) s += c * c;
  return s / static_cast<double>(e.size());
}

double w1_1d(const ParticleEnsemble& a, const ParticleEnsemble& b) {
  require_1d_pair(a, b);
  const auto xa = sorted_coords(a), xb = sorted_coords(b);
  double s = 0.0;
  for (std::size_t i = 0; i < xa.size(); ++i) s += std::abs(xa[i] - xb[i]);
  return s / static_cast<double>(xa.size());
}

double w2_1d(const ParticleEnsemble& a, const ParticleEnsemble& b) {
  require_1d_pair(a, b);
  const auto xa = sorted_coords(a), xb = sorted_coords(b);
  double s = 0.0;
  for (std::size_t i = 0; i < xa.size(); ++i) s += (xa[i] - xb[i]) * (xa[i] - xb[i]);
  return std::sqrt(s / static_cast<double>(xa.size()));
}

W1Estimate w1_vs_density(const ParticleEnsemble& a, const ReferenceDensity& ref, int resolution) {
  if (a.dim() != ref.dim()) throw std::invalid_argument("w1_vs_density: dimension mismatch");
  if (resolution < 2) throw std::invalid_argument("w1_vs_density: resolution must be >= 2");
  if (a.dim() == 1) {
    const auto xs = sorted_coords(a);
    const double n = static_cast<double>(xs.size());
    const double lo = std::min(xs.front(), ref.quantile(1e-12));
    const double hi = std::max(xs.back(), ref.quantile(1.0 - 1e-12));
    // uniform nodes on the bulk, geometric nodes out to the far tails
    const double core_lo = std::max(lo, ref.quantile(1e-4));
    const double core_hi = std::min(hi, ref.quantile(1.0 - 1e-4));
    std::vector<double> nodes(static_cast<std::size_t>(resolution) + 1);
    for (int k = 0; k <= resolution; ++k) nodes[k] = core_lo + (core_hi - core_lo) * k / resolution;
    const double core_h = (core_hi - core_lo) / resolution;
    auto add_tail = [&](double edge, double far, double sign) {
      for (double step = core_h; sign * (far - edge) > step; step *= 1.05) nodes.push_back(edge + sign * step);
      nodes.push_back(far);
    };
    add_tail(core_lo, lo, -1.0);
    add_tail(core_hi, hi, 1.0);
    nodes.insert(nodes.end(), xs.begin(), xs.end());
    std::sort(nodes.begin(), nodes.end());
    auto cdf = [&](double x) { return ref.cdf(x); };
    double total = 0.0;
    std::size_t below = 0;  // particles at or left of the current node
    double f_prev = cdf(nodes[0]);
    while (below < xs.size() && xs[below] <= nodes[0]) ++below;
    for (std::size_t k = 0; k + 1 < nodes.size(); ++k) {
      const double u = nodes[k], v = nodes[k + 1];
      const double fv = cdf(v);
      if (v > u) total += abs_gap_integral(cdf, static_cast<double>(below) / n, u, v, f_prev, fv);
      while (below < xs.size() && xs[below] <= v) ++below;
      f_prev = fv;
    }
    return {total, false, 0.0};
  }
  if (a.dim() != 2) throw std::invalid_argument("w1_vs_density: only d = 1 or d = 2 supported");

  // d = 2: debiased entropic OT between the particles and a gridded reference
  const int r = std::min(resolution, 64);
  const Box& box = ref.support();
  std::vector<double> grid_coords, grid_weights;
  const double hx = (box.hi[0] - box.lo[0]) / r, hy = (box.hi[1] - box.lo[1]) / r;
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < r; ++j) {
      const double y[2] = {box.lo[0] + (i + 0.5) * hx, box.lo[1] + (j + 0.5) * hy};
      const double w = ref(y) * hx * hy;
      if (w > 0.0) {
        grid_coords.insert(grid_coords.end(), y, y + 2);
        grid_weights.push_back(w);
      }
    }
  const double mass = std::accumulate(grid_weights.begin(), grid_weights.end(), 0.0);
  for (double& w : grid_weights) w /= mass;
  const PointSet grid(2, std::move(grid_coords));
  const std::vector<double> pw(a.size(), a.weight());

  Box span = a.bounds();
  for (int k = 0; k < 2; ++k) {
    span.lo[k] = std::min(span.lo[k], box.lo[k]);
    span.hi[k] = std::max(span.hi[k], box.hi[k]);
  }
  const double eta = 0.01 * span.diameter();
  constexpr int kIterations = 500;
  const double cross = sinkhorn_cost(a.positions(), pw, grid, grid_weights, eta, kIterations);
  const double self_a = sinkhorn_cost(a.positions(), pw, a.positions(), pw, eta, kIterations);
  const double self_b = sinkhorn_cost(grid, grid_weights, grid, grid_weights, eta, kIterations);
  return {cross - 0.5 * (self_a + self_b), true, eta};
}

// ---------------------------------------------------------------------------

void write_snapshot_csv(std::ostream& os, const ParticleEnsemble& e) {
  char buf[64];
  os << "# N=" << e.size() << ",d=" << e.dim() << ",time=";
  std::snprintf(buf, sizeof buf, "%.17g", e.time());
  os << buf << ",seed=" << e.seed() << "\n";
  for (int k = 0; k < e.dim(); ++k) os << (k ? ",x" : "x") << (k + 1);
  os << "\n";
  for (std::size_t i = 0; i < e.size(); ++i) {
    auto x = e[i];
    for (int k = 0; k < e.dim(); ++k) {
      std::snprintf(buf, sizeof buf, "%.17g", x[k]);
      os << (k ? "," : "") << buf;
    }
    os << "\n";
  }
}

ParticleEnsemble read_snapshot_csv(std::istream& is) {
  std::string meta;
  if (!std::getline(is, meta) || meta.rfind("# ", 0) != 0)
    throw std::runtime_error("snapshot CSV: missing metadata line");
  std::size_t n = 0;
  int d = 0;
  double time = 0.0;
  unsigned long long seed = 0;
  if (std::sscanf(meta.c_str(), "# N=%zu,d=%d,time=%lf,seed=%llu", &n, &d, &time, &seed) != 4)
    throw std::runtime_error("snapshot CSV: malformed metadata line: " + meta);
  std::string header;
  std::getline(is, header);
  std::vector<double> coords;
  coords.reserve(n * d);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) coords.push_back(std::stod(cell));
  }
  if (coords.size() != n * static_cast<std::size_t>(d))
    throw std::runtime_error("snapshot CSV: row count does not match N and d");
  return ParticleEnsemble(PointSet(d, std::move(coords)), time, seed);
}

}  // namespace blobflow
