#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "blobflow/config.hpp"
#include "blobflow/dynamics.hpp"
#include "blobflow/reference.hpp"

namespace blobflow {

EnergyFamily make_family(const SimConfig& c);
Potential make_potential(const SimConfig& c);
MollifierKernel make_kernel(const SimConfig& c, double epsilon);
SteadyState make_steady_state(const SimConfig& c);
/// ρ⁰ as configured, mollified when initial.alpha > 0.
ReferenceDensity make_initial_density(const SimConfig& c);

/// Everything needed to integrate one ε of a configuration.
struct Experiment {
  double epsilon = 0.0;
  double delta = 0.0;
  ParticleFlow flow;
  ParticleEnsemble initial;
  RunOptions options;
};

/// threads: 0 = hardware concurrency.
Experiment make_experiment(const SimConfig& c, double epsilon, int threads = 1);

struct ExperimentResult {
  double epsilon = 0.0;
  double delta = 0.0;
  RunResult run;
  double seconds = 0.0;
};

using RecordCallback = std::function<void(const DiagnosticsRecord&, const ParticleEnsemble&)>;
ExperimentResult run_experiment(const SimConfig& c, double epsilon, int threads = 1,
                                const RecordCallback& on_record = {});

/// Diagnostics CSV with the fixed column order; optional cells are left empty.
void write_diagnostics_header(std::ostream& os);
void write_diagnostics_row(std::ostream& os, const DiagnosticsRecord& r);
std::string diagnostics_csv(const std::vector<DiagnosticsRecord>& records);

struct ConvergenceRow {
  double epsilon = 0.0;
  double delta = 0.0;
  std::vector<double> times;
  std::vector<double> w1;
  double seconds = 0.0;
};

struct ConvergenceTable {
  std::vector<ConvergenceRow> rows;
  /// Final-time W₁ strictly decreasing as ε decreases; unset for a single ε.
  std::optional<bool> strictly_decreasing;
};

ConvergenceTable convergence_table(const std::vector<ExperimentResult>& results);
void write_convergence_csv(std::ostream& os, const ConvergenceTable& table);

/// Options shared by the subcommands.
struct AppOptions {
  std::optional<std::string> out_dir;  // overrides output.dir
  int threads = 1;
  bool quiet = false;
};

/// Output directory: --out, then $BLOBFLOW_OUT_DIR, then output.dir.
std::string resolve_out_dir(const SimConfig& c, const AppOptions& o);

/// Subcommands. They return the process exit code: 0 ok, 1 runtime failure
/// (partial outputs flushed), 2 invalid configuration.
int cmd_run(const SimConfig& c, const AppOptions& o);
int cmd_converge(const SimConfig& c, const AppOptions& o);
int cmd_sample(const SimConfig& c, const AppOptions& o);

/// SHA-256 of the canonical serialization, hex encoded.
std::string config_hash(const SimConfig& c);

}  // namespace blobflow
