#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace blobflow {

/// A flat, row-major list of points in R^d.
class PointSet {
 public:
  PointSet() = default;
  PointSet(int dim, std::vector<double> coords);
  PointSet(int dim, std::size_t count) : dim_(dim), coords_(count * dim, 0.0) {}

  int dim() const { return dim_; }
  std::size_t size() const { return dim_ == 0 ? 0 : coords_.size() / dim_; }
  std::span<const double> operator[](std::size_t i) const {
    return {coords_.data() + i * dim_, static_cast<std::size_t>(dim_)};
  }
  std::span<double> operator[](std::size_t i) {
    return {coords_.data() + i * dim_, static_cast<std::size_t>(dim_)};
  }
  const std::vector<double>& coords() const { return coords_; }
  std::vector<double>& coords() { return coords_; }

 private:
  int dim_ = 1;
  std::vector<double> coords_;
};

/// Axis-aligned box [lo, hi] in R^d.
struct Box {
  std::vector<double> lo;
  std::vector<double> hi;

  int dim() const { return static_cast<int>(lo.size()); }
  double diameter() const;
  bool contains(std::span<const double> x) const;
  static Box interval(double lo, double hi) { return Box{{lo}, {hi}}; }
  static Box cube(int d, double lo, double hi) {
    return Box{std::vector<double>(d, lo), std::vector<double>(d, hi)};
  }
};

/// N equal-weight particles ρ = (1/N) Σ δ_{x_i} at a given time.
class ParticleEnsemble {
 public:
  ParticleEnsemble() = default;
  ParticleEnsemble(PointSet positions, double time = 0.0, std::uint64_t seed = 0);

  std::size_t size() const { return positions_.size(); }
  int dim() const { return positions_.dim(); }
  double weight() const { return 1.0 / static_cast<double>(size()); }
  double time() const { return time_; }
  std::uint64_t seed() const { return seed_; }
  void set_time(double t) { time_ = t; }

  const PointSet& positions() const { return positions_; }
  PointSet& positions() { return positions_; }
  std::span<const double> operator[](std::size_t i) const { return positions_[i]; }

  /// Bounding box of the particle positions.
  Box bounds() const;
  ParticleEnsemble translated(std::span<const double> shift) const;

 private:
  PointSet positions_;
  double time_ = 0.0;
  std::uint64_t seed_ = 0;
};

/// Seedable generator with a documented stream: std::mt19937_64 (its output
/// sequence is fixed by the C++ standard), converted to doubles in [0, 1) by
/// taking the top 53 bits. No std:: distributions are used, so streams are
/// identical across platforms and standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

 private:
  std::mt19937_64 engine_;
};

/// A probability density with a bounding support box. In d = 1 a CDF is always
/// available: either supplied in closed form or tabulated on construction.
class ReferenceDensity {
 public:
  using Density = std::function<double(std::span<const double>)>;
  using Cdf = std::function<double(double)>;

  ReferenceDensity(Density density, Box support, std::optional<Cdf> cdf = std::nullopt,
                   std::string name = "reference");

  /// 1D convenience: density on [lo, hi]; the CDF is tabulated when not given.
  static ReferenceDensity on_interval(std::function<double(double)> density, double lo,
                                      double hi, std::optional<Cdf> cdf = std::nullopt,
                                      std::string name = "reference");

  double operator()(std::span<const double> x) const { return density_(x); }
  double operator()(double x) const { return density_(std::span<const double>(&x, 1)); }
  const Box& support() const { return support_; }
  int dim() const { return support_.dim(); }
  const std::string& name() const { return name_; }

  bool has_cdf() const { return static_cast<bool>(cdf_); }
  double cdf(double x) const;
  /// Inverse CDF by bisection on the support interval.
  double quantile(double u) const;
  /// Midpoint-rule mass on the support box.
  double mass(int resolution = 4096) const;

 private:
  Density density_;
  Box support_;
  Cdf cdf_;
  std::string name_;
};

enum class PlacementMode { QuantileGrid1D, Rejection };

ParticleEnsemble prepare_initial_particles(const ReferenceDensity& target, std::size_t n,
                                           std::uint64_t seed, PlacementMode mode);

/// Compactly supported smooth approximation of ρ⁰: truncate to the ball of
/// radius 1/α (rescaled to keep unit mass) and mollify at scale α with a C^∞
/// bump. α = 0 returns the target unchanged.
ReferenceDensity well_prepared(const ReferenceDensity& target, double alpha);

double second_moment(const ParticleEnsemble& e);
double w1_1d(const ParticleEnsemble& a, const ParticleEnsemble& b);
double w2_1d(const ParticleEnsemble& a, const ParticleEnsemble& b);

struct W1Estimate {
  double value = 0.0;
  bool approximate = false;     // true for the entropic d = 2 estimate
  double regularization = 0.0;  // η used by the entropic estimate
};

/// W₁ between the empirical measure and a reference density. d = 1 integrates
/// |F_A - F_ref|; d = 2 uses debiased entropic OT against the reference
/// discretized on a resolution×resolution grid.
W1Estimate w1_vs_density(const ParticleEnsemble& a, const ReferenceDensity& ref,
                         int resolution = 20000);

/// Snapshot CSV: "# N=..,d=..,time=..,seed=.." then a header x1..xd, one row per particle.
void write_snapshot_csv(std::ostream& os, const ParticleEnsemble& e);
ParticleEnsemble read_snapshot_csv(std::istream& is);

}  // namespace blobflow
