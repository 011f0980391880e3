#pragma once

#include <string>
#include <vector>

namespace blobflow {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SuiteResult {
  std::string name;
  std::vector<CheckResult> checks;
  double seconds = 0.0;

  bool passed() const;
};

struct SelftestOptions {
  /// Negative-control hook: "curvature" perturbs the energy fed to the
  /// curvature check so the convex_energy suite must fail.
  std::string inject_fault;
};

/// Property suites of every module at fixed seeds.
std::vector<SuiteResult> run_selftest(const SelftestOptions& options = {});

}  // namespace blobflow
