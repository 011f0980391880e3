#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "blobflow/dynamics.hpp"

namespace blobflow {

/// Invalid or inconsistent configuration. The message lists every problem found.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class FamilyKind { Heat, PorousMedium, FastDiffusion, HeightConstraint };
enum class InitialKind { Heat, Barenblatt, Uniform, Gaussian, Steady };
enum class PotentialKind { None, Quadratic };
enum class ReferenceKind { None, Heat, Barenblatt, Steady };

/// Every knob of a simulation. Sections of the text format are given in brackets.
struct SimConfig {
  // [energy]
  FamilyKind family = FamilyKind::Heat;
  double m = 2.0;
  // [domain]
  int d = 1;
  // [particles]
  std::size_t n = 512;
  std::uint64_t seed = 1;
  PlacementMode placement = PlacementMode::QuantileGrid1D;
  // [initial]
  InitialKind initial = InitialKind::Heat;
  double initial_time = 0.05;  // t₀ of the ensemble; exact profiles are evaluated at t₀
  double center = 0.0;         // gaussian: mean on every axis
  double width = 0.1;          // gaussian: standard deviation
  double lo = 0.0, hi = 1.0;   // uniform: [lo, hi]^d
  double alpha = 0.0;          // well-prepared mollification scale, 0 = off
  // [kernel]
  KernelKind kernel = KernelKind::Gaussian;
  double effective_r = 0.0;  // 0 = d + 3
  double truncation = 8.0;
  int bump_order = 3;
  // [schedule]
  std::vector<double> epsilons{0.1};
  double beta = 0.5;
  // [time]
  double duration = 0.2;
  std::optional<double> dt;  // unset = automatic 0.5/C_ε
  Scheme scheme = Scheme::RK4;
  double record_interval = 0.0;
  // [velocity]
  PotentialKind potential = PotentialKind::None;
  double strength = 1.0;  // V = (strength/2)|x|²
  // [reference]
  ReferenceKind reference = ReferenceKind::None;
  double box_half_width = 10.0;  // steady state box [-w, w]^d
  int steady_resolution = 4096;
  int w1_resolution = 20000;
  // [grid]
  double padding = 6.0;
  double spacing_fraction = 0.25;
  std::size_t node_budget = kDefaultNodeBudget;
  // [output]
  std::string out_dir = "out";
  bool snapshots = true;
  bool exchange = false;

  bool operator==(const SimConfig&) const = default;
};

/// Parses the sectioned key = value format. Unknown sections or keys, malformed
/// values and failed invariants raise ConfigError.
SimConfig parse_config(std::istream& is);
SimConfig parse_config_string(const std::string& text);
SimConfig load_config(const std::string& path);

/// Writes every field, so parse(serialize(c)) == c.
std::string serialize_config(const SimConfig& c);

/// Problems with a configuration, empty when valid.
std::vector<std::string> config_problems(const SimConfig& c);
void validate_config(const SimConfig& c);

std::string to_string(FamilyKind k);
std::string to_string(InitialKind k);
std::string to_string(PotentialKind k);
std::string to_string(ReferenceKind k);
std::string to_string(PlacementMode k);
std::string to_string(KernelKind k);
std::string to_string(Scheme k);

}  // namespace blobflow
