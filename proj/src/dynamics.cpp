#include "blobflow/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace blobflow {

// ---------------------------------------------------------------------------
// grid

std::size_t QuadratureGrid::size() const {
  std::size_t n = 1;
  for (int c : count) n *= static_cast<std::size_t>(c);
  return n;
}

double QuadratureGrid::weight() const { return std::pow(h, dim); }

Box QuadratureGrid::box() const {
  Box b{std::vector<double>(dim), std::vector<double>(dim)};
  for (int k = 0; k < dim; ++k) {
    b.lo[k] = static_cast<double>(first[k]) * h;
    b.hi[k] = static_cast<double>(first[k] + count[k]) * h;
  }
  return b;
}

PointSet QuadratureGrid::nodes() const {
  PointSet out(dim, size());
  for (std::size_t flat = 0; flat < size(); ++flat) {
    std::size_t rest = flat;
    for (int k = dim - 1; k >= 0; --k) {
      out[flat][k] = node(k, static_cast<int>(rest % count[k]));
      rest /= count[k];
    }
  }
  return out;
}

QuadratureGrid build_grid(const ParticleEnsemble& e, double epsilon, double padding, double spacing_fraction,
                          std::size_t node_budget) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("build_grid: epsilon must be positive");
  if (!(padding > 0.0)) throw std::invalid_argument("build_grid: padding must be positive");
  if (!(spacing_fraction > 0.0 && spacing_fraction <= 1.0))
    throw std::invalid_argument("build_grid: spacing fraction must lie in (0, 1]");
  const Box b = e.bounds();
  QuadratureGrid g;
  g.dim = e.dim();
  g.h = spacing_fraction * epsilon;
  g.first.resize(g.dim);
  g.count.resize(g.dim);
  double total = 1.0;
  for (int k = 0; k < g.dim; ++k) {
    const double lo = b.lo[k] - padding * epsilon, hi = b.hi[k] + padding * epsilon;
    const auto first = static_cast<long>(std::floor(lo / g.h - 0.5));
    const auto last = static_cast<long>(std::ceil(hi / g.h - 0.5));
    g.first[k] = first;
    total *= static_cast<double>(last - first + 1);
    g.count[k] = static_cast<int>(std::min<long>(last - first + 1, std::numeric_limits<int>::max()));
  }
  if (total > static_cast<double>(node_budget)) {
    std::ostringstream os;
    os << "build_grid: " << total << " nodes exceed the budget of " << node_budget << " (h = " << g.h
       << ", box";
    for (int k = 0; k < g.dim; ++k)
      os << " [" << b.lo[k] - padding * epsilon << ", " << b.hi[k] + padding * epsilon << "]";
    os << "); increase epsilon or the spacing fraction, or raise the budget";
    throw std::runtime_error(os.str());
  }
  return g;
}

// ---------------------------------------------------------------------------
// kernel windows on the lattice

namespace {

template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  if (threads <= 1 || n < 256) {
    fn(std::size_t{0}, n);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
    if (lo < hi) pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  for (auto& t : pool) t.join();
}

int effective_threads(int requested) {
  if (requested > 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

// Kernel windows of a point set on the lattice: for each point x the nodes y_g
// with |x - y_g| within the truncation radius, with φ_ε(x - y_g) and
// ∇_x φ_ε(x - y_g). Built once per evaluation and shared by the density scatter
// and the pressure gather. Gaussian node values are products of per-axis
// factors generated by the ratio recurrence of a Gaussian on a uniform lattice.
class WindowSet {
 public:
  WindowSet(const MollifierKernel& k, const QuadratureGrid& g, const PointSet& xs, int threads)
      : k_(k), g_(g), d_(g.dim), n_(xs.size()) {
    gaussian_ = k.kind == KernelKind::Gaussian;
    radius_ = k.unit_support();
    scale_ = std::pow(k.epsilon, -d_) *
             (gaussian_ ? std::pow(2.0 * M_PI, -0.5 * d_) : bump_normalization(d_, k.bump_order));
    width_ = 2 * static_cast<int>(std::ceil(radius_ * k.epsilon / g.h)) + 3;
    stride_.assign(d_, 1);
    for (int a = d_ - 2; a >= 0; --a) stride_[a] = stride_[a + 1] * static_cast<std::size_t>(g.count[a + 1]);
    // buffers are reused across evaluations on the same thread
    static thread_local Buffers buffers;
    buf_ = &buffers;
    buf_->lo.resize(n_ * d_);
    buf_->len.resize(n_ * d_);
    buf_->off.resize(n_ * d_ * width_);
    buf_->fac.resize(n_ * d_ * width_);
    if (d_ == 1) buf_->grad.resize(n_ * width_);
    parallel_for(n_, threads, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) place(i, xs[i]);
    });
  }

  // acc[g] += Σ_i φ_ε(y_g - x_i), points in index order
  void scatter(std::vector<double>& acc) const {
    for (std::size_t i = 0; i < n_; ++i) {
      if (d_ == 1) {
        const int len = buf_->len[i];
        if (len == 0) continue;
        double* out = acc.data() + base(i);
        const double* f = buf_->fac.data() + i * width_;
        for (int j = 0; j < len; ++j) out[j] += f[j];
        continue;
      }
      for_each(i, [&](std::size_t node, double value, const double*) { acc[node] += value; });
    }
  }

  // out_i = w Σ_g ∇φ_ε(x_i - y_g) q_g, nodes in row-major order
  void gather(const std::vector<double>& q, double w, std::vector<double>& out, int threads) const {
    out.assign(n_ * d_, 0.0);
    parallel_for(n_, threads, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        if (d_ == 1) {
          const int len = buf_->len[i];
          if (len == 0) continue;
          const double* qq = q.data() + base(i);
          const double* gr = buf_->grad.data() + i * width_;
          double acc = 0.0;
          for (int j = 0; j < len; ++j) acc += gr[j] * qq[j];
          out[i] = w * acc;
          continue;
        }
        double acc[3] = {0.0, 0.0, 0.0};
        for_each(i, [&](std::size_t node, double value, const double* off) {
          const double slope = gradient_factor(value, off);
          for (int a = 0; a < d_; ++a) acc[a] += slope * off[a] * q[node];
        });
        for (int a = 0; a < d_; ++a) out[i * d_ + a] = w * acc[a];
      }
    });
  }

 private:
  std::size_t base(std::size_t i) const {
    std::size_t b = 0;
    for (int a = 0; a < d_; ++a) b += static_cast<std::size_t>(buf_->lo[i * d_ + a] - g_.first[a]) * stride_[a];
    return b;
  }

  void place(std::size_t i, std::span<const double> x) {
    const double eps = k_.epsilon, h = g_.h, reach = radius_ * eps;
    for (int a = 0; a < d_; ++a) {
      long lo = static_cast<long>(std::ceil((x[a] - reach) / h - 0.5));
      long hi = static_cast<long>(std::floor((x[a] + reach) / h - 0.5));
      lo = std::max(lo, g_.first[a]);
      hi = std::min(hi, g_.first[a] + g_.count[a] - 1);
      if (hi < lo) {
        for (int b = 0; b < d_; ++b) buf_->len[i * d_ + b] = 0;
        return;
      }
      buf_->lo[i * d_ + a] = lo;
      const int len = static_cast<int>(hi - lo + 1);
      buf_->len[i * d_ + a] = len;
      double* o = buf_->off.data() + (i * d_ + a) * width_;
      const double inv = 1.0 / eps;
      for (int j = 0; j < len; ++j) o[j] = (x[a] - g_.coordinate(a, lo + j)) * inv;
      double* f = buf_->fac.data() + (i * d_ + a) * width_;
      if (gaussian_) {
        const long nearest = std::lround(x[a] / h - 0.5);
        gaussian_factors(o, f, len, static_cast<int>(std::clamp<long>(nearest - lo, 0, len - 1)));
      }
    }
    if (d_ != 1) return;
    // 1D: store final values and gradients
    const int len = buf_->len[i];
    const double* o = buf_->off.data() + i * width_;
    double* f = buf_->fac.data() + i * width_;
    double* gr = buf_->grad.data() + i * width_;
    for (int j = 0; j < len; ++j) {
      const double r2 = o[j] * o[j];
      double v = 0.0;
      if (gaussian_) v = r2 <= radius_ * radius_ ? scale_ * f[j] : 0.0;
      else v = r2 < 1.0 ? scale_ * std::pow(1.0 - r2, k_.bump_order) : 0.0;
      f[j] = v;
      gr[j] = gradient_factor(v, o + j) * o[j];
    }
  }

  void gaussian_factors(const double* o, double* f, int n, int c) const {
    const double s = g_.h / k_.epsilon;
    const double shrink = std::exp(-s * s);
    f[c] = std::exp(-0.5 * o[c] * o[c]);
    double up = std::exp(s * o[c] - 0.5 * s * s);
    for (int j = c + 1; j < n; ++j) {
      f[j] = f[j - 1] * up;
      up *= shrink;
    }
    double down = std::exp(-s * o[c] - 0.5 * s * s);
    for (int j = c - 1; j >= 0; --j) {
      f[j] = f[j + 1] * down;
      down *= shrink;
    }
  }

  // ∂φ_ε/∂x_a = factor · off_a
  double gradient_factor(double value, const double* off) const {
    if (gaussian_) return -value / k_.epsilon;
    double r2 = 0.0;
    for (int a = 0; a < d_; ++a) r2 += off[a] * off[a];
    const double s = 1.0 - r2;
    if (s <= 0.0) return 0.0;
    return scale_ * (-2.0 * k_.bump_order) * std::pow(s, k_.bump_order - 1) / k_.epsilon;
  }

  // d >= 2: fn(node, value, offsets) over the window in row-major order
  template <class Fn>
  void for_each(std::size_t i, Fn&& fn) const {
    int len[3] = {0, 0, 0};
    std::size_t total = 1;
    for (int a = 0; a < d_; ++a) {
      len[a] = buf_->len[i * d_ + a];
      total *= static_cast<std::size_t>(len[a]);
    }
    if (total == 0) return;
    const std::size_t b = base(i);
    int idx[3] = {0, 0, 0};
    double off[3] = {0.0, 0.0, 0.0};
    for (std::size_t n = 0; n < total; ++n) {
      double r2 = 0.0, prod = 1.0;
      std::size_t flat = b;
      for (int a = 0; a < d_; ++a) {
        const std::size_t slot = (i * d_ + a) * width_ + idx[a];
        off[a] = buf_->off[slot];
        r2 += off[a] * off[a];
        prod *= buf_->fac[slot];
        flat += static_cast<std::size_t>(idx[a]) * stride_[a];
      }
      if (gaussian_) {
        if (r2 <= radius_ * radius_) fn(flat, scale_ * prod, off);
      } else if (r2 < 1.0) {
        fn(flat, scale_ * std::pow(1.0 - r2, k_.bump_order), off);
      }
      for (int a = d_ - 1; a >= 0; --a) {
        if (++idx[a] < len[a]) break;
        idx[a] = 0;
      }
    }
  }

  const MollifierKernel& k_;
  const QuadratureGrid& g_;
  int d_;
  std::size_t n_;
  bool gaussian_ = true;
  double radius_ = 8.0, scale_ = 1.0;
  int width_ = 0;
  std::vector<std::size_t> stride_;
  struct Buffers {
    std::vector<long> lo;
    std::vector<int> len;
    std::vector<double> off, fac, grad;
  };
  Buffers* buf_ = nullptr;
};

void check_inside(const Box& b, const PointSet& xs) {
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!b.contains(xs[i])) {
      std::ostringstream os;
      os << "pressure gradient: query " << i << " lies outside the grid box";
      throw std::out_of_range(os.str());
    }
  }
}

void pressure_gradient_impl(const MollifierKernel& k, const QuadratureGrid& g, const std::vector<double>& q,
                            const PointSet& xs, std::vector<double>& out, int threads) {
  if (xs.dim() != g.dim) throw std::invalid_argument("pressure gradient: dimension mismatch");
  check_inside(g.box(), xs);
  WindowSet(k, g, xs, threads).gather(q, g.weight(), out, threads);
}

void central_gradient(const QuadratureGrid& g, const std::vector<double>& f, std::vector<double>& out) {
  const int d = g.dim;
  const std::size_t n = g.size();
  out.assign(n * d, 0.0);
  std::vector<std::size_t> stride(d, 1);
  for (int a = d - 2; a >= 0; --a) stride[a] = stride[a + 1] * static_cast<std::size_t>(g.count[a + 1]);
  for (std::size_t flat = 0; flat < n; ++flat) {
    for (int a = 0; a < d; ++a) {
      const int i = static_cast<int>((flat / stride[a]) % g.count[a]);
      const int last = g.count[a] - 1;
      if (last == 0) continue;
      if (i == 0) out[flat * d + a] = (f[flat + stride[a]] - f[flat]) / g.h;
      else if (i == last) out[flat * d + a] = (f[flat] - f[flat - stride[a]]) / g.h;
      else out[flat * d + a] = (f[flat + stride[a]] - f[flat - stride[a]]) / (2.0 * g.h);
    }
  }
}

template <class Fn>
void for_each_interior(const QuadratureGrid& g, Fn&& fn) {
  const int d = g.dim;
  std::vector<std::size_t> stride(d, 1);
  for (int a = d - 2; a >= 0; --a) stride[a] = stride[a + 1] * static_cast<std::size_t>(g.count[a + 1]);
  for (std::size_t flat = 0; flat < g.size(); ++flat) {
    bool interior = true;
    for (int a = 0; a < d && interior; ++a) {
      const int i = static_cast<int>((flat / stride[a]) % g.count[a]);
      interior = i > 0 && i < g.count[a] - 1;
    }
    if (interior) fn(flat);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// velocity

VelocityField VelocityField::gradient_of(Potential p) {
  VelocityField v;
  v.kind = VelocityKind::GradientOfPotential;
  v.potential = std::move(p);
  return v;
}

void VelocityField::evaluate(double t, std::span<const double> x, std::span<double> out) const {
  switch (kind) {
    case VelocityKind::None:
      std::fill(out.begin(), out.end(), 0.0);
      return;
    case VelocityKind::GradientOfPotential:
      potential.gradient(x, out);
      return;
    case VelocityKind::Custom:
      custom(t, x, out);
      return;
  }
}

double VelocityField::w1inf_on(const Box& box) const {
  switch (kind) {
    case VelocityKind::None:
      return 0.0;
    case VelocityKind::GradientOfPotential:
      return potential.w1inf_on ? potential.w1inf_on(box) : 0.0;
    case VelocityKind::Custom:
      return custom_w1inf ? custom_w1inf(box) : 0.0;
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// flow

ParticleFlow::ParticleFlow(RegularizedEnergy reg, MollifierKernel kernel, VelocityField velocity,
                           FlowSettings settings)
    : reg_(std::move(reg)),
      kernel_(kernel),
      velocity_(std::move(velocity)),
      settings_(settings),
      q_at_zero_(reg_.derivative_at_zero()) {
  if (!(kernel_.epsilon > 0.0)) throw std::invalid_argument("ParticleFlow: epsilon must be positive");
  if (velocity_.kind == VelocityKind::GradientOfPotential && !velocity_.potential.gradient)
    throw std::invalid_argument("ParticleFlow: potential has no gradient");
  if (velocity_.kind == VelocityKind::Custom && !velocity_.custom)
    throw std::invalid_argument("ParticleFlow: custom velocity is empty");
}

QuadratureGrid ParticleFlow::grid_for(const ParticleEnsemble& e) const {
  const double padding = std::max(settings_.padding, kernel_.unit_support() + 1.0);
  return build_grid(e, kernel_.epsilon, padding, settings_.spacing_fraction, settings_.node_budget);
}

void ParticleFlow::density_and_pressure(const ParticleEnsemble& e, const QuadratureGrid& g,
                                        std::vector<double>& mu, std::vector<double>& q) const {
  if (e.dim() != g.dim) throw std::invalid_argument("density: grid and ensemble dimensions differ");
  const int threads = effective_threads(settings_.threads);
  WindowSet windows(kernel_, g, e.positions(), threads);
  mu.assign(g.size(), 0.0);
  windows.scatter(mu);
  nodal_pressure(mu, q, e.weight());
}

void ParticleFlow::nodal_pressure(std::vector<double>& mu, std::vector<double>& q, double weight) const {
  q.resize(mu.size());
  parallel_for(mu.size(), effective_threads(settings_.threads), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t n = lo; n < hi; ++n) {
      mu[n] *= weight;
      q[n] = mu[n] > 0.0 ? reg_derivative(reg_, mu[n]) : q_at_zero_;
    }
  });
}

void ParticleFlow::pressure_gradient(const QuadratureGrid& g, const std::vector<double>& q, const PointSet& xs,
                                     std::vector<double>& out) const {
  pressure_gradient_impl(kernel_, g, q, xs, out, effective_threads(settings_.threads));
}

void ParticleFlow::velocity(const ParticleEnsemble& e, std::vector<double>& out, double* dissipation) const {
  const QuadratureGrid g = grid_for(e);
  const int threads = effective_threads(settings_.threads);
  WindowSet windows(kernel_, g, e.positions(), threads);
  std::vector<double> mu(g.size(), 0.0), q, grad_p;
  windows.scatter(mu);
  nodal_pressure(mu, q, e.weight());
  windows.gather(q, g.weight(), grad_p, threads);
  const int d = e.dim();
  out.assign(e.size() * d, 0.0);
  double v[3], diss = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    velocity_.evaluate(e.time(), e[i], std::span<double>(v, d));
    double pp = 0.0, pv = 0.0;
    for (int a = 0; a < d; ++a) {
      const double gp = grad_p[i * d + a];
      out[i * d + a] = -gp - v[a];
      pp += gp * gp;
      pv += v[a] * gp;
      if (!std::isfinite(out[i * d + a])) {
        std::ostringstream os;
        os << "non-finite velocity at particle " << i << " (t = " << e.time() << ")";
        throw std::runtime_error(os.str());
      }
    }
    diss += pp + pv;
  }
  if (dissipation) *dissipation = diss * e.weight();
}

FieldSnapshot ParticleFlow::fields(const ParticleEnsemble& e) const { return fields(e, grid_for(e)); }

FieldSnapshot ParticleFlow::fields(const ParticleEnsemble& e, const QuadratureGrid& g) const {
  FieldSnapshot f;
  f.grid = g;
  density_and_pressure(e, g, f.mu, f.q);
  f.zeta.resize(g.size());
  for (std::size_t n = 0; n < g.size(); ++n) {
    // f_ε*(q) is attained at a = μ because q = f_ε'(μ)
    f.zeta[n] = f.mu[n] > 0.0 ? std::max(0.0, f.mu[n] * f.q[n] - reg_value(reg_, f.mu[n]).value()) : 0.0;
  }
  central_gradient(g, f.mu, f.grad_mu);
  central_gradient(g, f.q, f.grad_q);
  return f;
}

FieldSnapshot compute_fields(const ParticleEnsemble& e, const RegularizedEnergy& reg, const MollifierKernel& k,
                             const QuadratureGrid& g) {
  return ParticleFlow(reg, k, VelocityField::none()).fields(e, g);
}

PointSet pressure_gradient_at(const FieldSnapshot& fields, const MollifierKernel& k, const PointSet& xs) {
  std::vector<double> flat;
  pressure_gradient_impl(k, fields.grid, fields.q, xs, flat, 1);
  return PointSet(fields.grid.dim, std::move(flat));
}

namespace {

ParticleEnsemble advance(const ParticleFlow& flow, const ParticleEnsemble& state, double dt, Scheme scheme,
                         const std::vector<double>& k1) {
  auto shifted = [&](const std::vector<double>& dir, double h) {
    PointSet p = state.positions();
    auto& c = p.coords();
    for (std::size_t j = 0; j < c.size(); ++j) c[j] += h * dir[j];
    return ParticleEnsemble(std::move(p), state.time() + h, state.seed());
  };
  if (scheme == Scheme::Euler) {
    ParticleEnsemble out = shifted(k1, dt);
    out.set_time(state.time() + dt);
    return out;
  }
  std::vector<double> k2, k3, k4;
  flow.velocity(shifted(k1, 0.5 * dt), k2);
  flow.velocity(shifted(k2, 0.5 * dt), k3);
  flow.velocity(shifted(k3, dt), k4);
  PointSet p = state.positions();
  auto& c = p.coords();
  for (std::size_t j = 0; j < c.size(); ++j) c[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
  return ParticleEnsemble(std::move(p), state.time() + dt, state.seed());
}

}  // namespace

ParticleEnsemble step(const ParticleFlow& flow, const ParticleEnsemble& state, double dt, Scheme scheme,
                      double* dissipation) {
  if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be positive");
  std::vector<double> k1;
  flow.velocity(state, k1, dissipation);
  return advance(flow, state, dt, scheme, k1);
}

// ---------------------------------------------------------------------------
// diagnostics

double energy_F_eps(const FieldSnapshot& fields, const RegularizedEnergy& reg) {
  double s = 0.0;
  for (double m : fields.mu)
    if (m > 0.0) s += reg_value(reg, m).value();
  return s * fields.grid.weight();
}

double entropy_mollified(const FieldSnapshot& fields) {
  double s = 0.0;
  for (double m : fields.mu)
    if (m > 0.0) s += m * std::log(m);
  return s * fields.grid.weight();
}

CrossTerm cross_term_min(const FieldSnapshot& fields) {
  const int d = fields.grid.dim;
  CrossTerm c;
  c.min = std::numeric_limits<double>::infinity();
  for_each_interior(fields.grid, [&](std::size_t n) {
    double dot = 0.0, gm = 0.0, gq = 0.0;
    for (int a = 0; a < d; ++a) {
      dot += fields.grad_mu[n * d + a] * fields.grad_q[n * d + a];
      gm += fields.grad_mu[n * d + a] * fields.grad_mu[n * d + a];
      gq += fields.grad_q[n * d + a] * fields.grad_q[n * d + a];
    }
    c.min = std::min(c.min, dot);
    c.integral += dot;
    c.scale = std::max(c.scale, std::sqrt(gm * gq));
  });
  if (!std::isfinite(c.min)) c.min = 0.0;
  c.integral *= fields.grid.weight();
  return c;
}

GradientSandwich gradient_sandwich(const FieldSnapshot& fields, const RegularizedEnergy& reg) {
  const int d = fields.grid.dim;
  const double lip = reg.delta() + 1.0 / reg.delta();
  const double inv = 1.0 / reg.delta();
  const double h = fields.grid.h;
  constexpr double kUlp = std::numeric_limits<double>::epsilon();
  std::vector<std::size_t> stride(d, 1);
  for (int a = d - 2; a >= 0; --a) stride[a] = stride[a + 1] * static_cast<std::size_t>(fields.grid.count[a + 1]);
  GradientSandwich s;
  for_each_interior(fields.grid, [&](std::size_t n) {
    double gm = 0.0, gq = 0.0, floor_mu = 0.0, floor_q = 0.0;
    for (int a = 0; a < d; ++a) {
      gm += fields.grad_mu[n * d + a] * fields.grad_mu[n * d + a];
      gq += fields.grad_q[n * d + a] * fields.grad_q[n * d + a];
      // rounding in a central difference of stored values
      const std::size_t up = n + stride[a], dn = n - stride[a];
      floor_mu = std::max(floor_mu, 4.0 * kUlp * (std::abs(fields.mu[up]) + std::abs(fields.mu[dn])) / (2.0 * h));
      floor_q = std::max(floor_q, 4.0 * kUlp * (std::abs(fields.q[up]) + std::abs(fields.q[dn])) / (2.0 * h));
    }
    gm = std::sqrt(gm);
    gq = std::sqrt(gq);
    if (gm > floor_mu * std::sqrt(d) * 64.0 || gq > floor_q * std::sqrt(d) * 64.0) {
      if (gm > 0.0) s.upper_ratio = std::max(s.upper_ratio, gq / (lip * gm));
      else if (gq > 0.0) s.upper_ratio = std::numeric_limits<double>::infinity();
      if (gq > 0.0) s.lower_ratio = std::max(s.lower_ratio, gm / (inv * gq));
      else if (gm > 0.0) s.lower_ratio = std::numeric_limits<double>::infinity();
    }
  });
  return s;
}

double exchange_residual(const ParticleEnsemble& e, const FieldSnapshot& fields, const MollifierKernel& k,
                         const std::function<double(std::span<const double>)>& g_test) {
  const int d = e.dim();
  const PointSet grad_p = pressure_gradient_at(fields, k, e.positions());
  std::vector<double> particle(d, 0.0), grid(d, 0.0);
  for (std::size_t i = 0; i < e.size(); ++i) {
    const double gv = g_test(e[i]);
    for (int a = 0; a < d; ++a) particle[a] += gv * grad_p[i][a];
  }
  for (double& v : particle) v *= e.weight();
  const PointSet nodes = fields.grid.nodes();
  for (std::size_t n = 0; n < nodes.size(); ++n) {
    if (fields.mu[n] == 0.0) continue;
    const double gv = g_test(nodes[n]);
    for (int a = 0; a < d; ++a) grid[a] += gv * fields.mu[n] * fields.grad_q[n * d + a];
  }
  double s = 0.0;
  for (int a = 0; a < d; ++a) {
    const double diff = particle[a] - grid[a] * fields.grid.weight();
    s += diff * diff;
  }
  return std::sqrt(s);
}

double lipschitz_estimate(const RegularizedEnergy& reg, const MollifierKernel& k, int d, double velocity_w1inf) {
  const KernelNorms n = kernel_norms(k, d);
  return 2.0 * velocity_w1inf +
         (n.grad_l1 + n.hess_l1) * (reg.derivative_lipschitz() * n.sup + std::abs(reg.derivative_at_zero()));
}

double dissipation_residual(const std::vector<DiagnosticsRecord>& records) {
  if (records.size() < 2) return 0.0;
  const auto& a = records.front();
  const auto& b = records.back();
  return b.F_eps + (b.dissipation_integral - a.dissipation_integral) - a.F_eps;
}

// ---------------------------------------------------------------------------
// run

double resolve_time_step(const ParticleFlow& flow, const ParticleEnsemble& initial, double requested) {
  const Box box = flow.grid_for(initial).box();
  const double c = lipschitz_estimate(flow.energy(), flow.kernel(), initial.dim(),
                                      flow.velocity_field().w1inf_on(box));
  const double cap = 0.5 / c;
  if (requested < 0.0 || !std::isfinite(requested))
    throw std::invalid_argument("time step must be positive or 0 for automatic");
  return requested > 0.0 ? std::min(requested, cap) : cap;
}

RunResult run(const ParticleFlow& flow, const ParticleEnsemble& initial, const RunOptions& options) {
  if (!(options.duration >= 0.0)) throw std::invalid_argument("run: duration must be >= 0");
  RunResult result;
  const Box box0 = flow.grid_for(initial).box();
  const double lip = lipschitz_estimate(flow.energy(), flow.kernel(), initial.dim(),
                                        flow.velocity_field().w1inf_on(box0));
  double dt = resolve_time_step(flow, initial, options.dt);
  std::size_t steps = 0;
  if (options.duration > 0.0) {
    steps = static_cast<std::size_t>(std::ceil(options.duration / dt - 1e-9));
    steps = std::max<std::size_t>(steps, 1);
    dt = options.duration / static_cast<double>(steps);
  }
  result.dt = dt;
  result.steps = steps;
  std::size_t stride = steps == 0 ? 1 : steps;
  if (options.record_interval > 0.0 && steps > 0) {
    const double intervals = options.duration / options.record_interval;
    const auto k = static_cast<std::size_t>(std::llround(intervals));
    if (k >= 1 && std::abs(intervals - static_cast<double>(k)) < 1e-9 * intervals) {
      // land records exactly on multiples of the interval
      steps = (steps + k - 1) / k * k;
      dt = options.duration / static_cast<double>(steps);
      result.dt = dt;
      result.steps = steps;
      stride = steps / k;
    } else {
      stride = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(options.record_interval / dt)));
    }
  }

  const double t0 = initial.time();
  auto record = [&](const ParticleEnsemble& state, double integral) {
    const FieldSnapshot f = flow.fields(state);
    DiagnosticsRecord r;
    r.t = state.time();
    r.F_eps = energy_F_eps(f, flow.energy());
    r.entropy_moll = entropy_mollified(f);
    r.M2 = second_moment(state);
    r.dissipation_integral = integral;
    r.diss_residual = result.records.empty() ? 0.0 : r.F_eps + integral - result.records.front().F_eps;
    const CrossTerm c = cross_term_min(f);
    r.min_cross_term = c.min;
    r.cross_term_scale = c.scale;
    r.cross_term_integral = c.integral;
    r.sandwich = gradient_sandwich(f, flow.energy());
    r.max_mu = *std::max_element(f.mu.begin(), f.mu.end());
    r.lipschitz_estimate = lip;
    if (options.reference) r.w1_to_reference = w1_vs_density(state, options.reference(r.t), options.w1_resolution).value;
    if (options.exchange)
      r.exchange_residual =
          exchange_residual(state, f, flow.kernel(), [](std::span<const double> x) { return std::sin(x[0]); });
    result.records.push_back(r);
    if (options.on_record) options.on_record(r, state);
  };

  ParticleEnsemble state = initial;
  double integral = 0.0, previous = 0.0;
  std::vector<double> k1;
  for (std::size_t n = 0; n <= steps; ++n) {
    if (n == steps && steps == 0) {
      record(state, 0.0);
      break;
    }
    double rate = 0.0;
    flow.velocity(state, k1, &rate);
    if (n > 0) integral += 0.5 * dt * (previous + rate);
    previous = rate;
    if (n % stride == 0 || n == steps) record(state, integral);
    if (n == steps) break;
    state = advance(flow, state, dt, options.scheme, k1);
    state.set_time(t0 + options.duration * (static_cast<double>(n + 1) / static_cast<double>(steps)));
  }
  result.final_state = state;
  return result;
}

}  // namespace blobflow
