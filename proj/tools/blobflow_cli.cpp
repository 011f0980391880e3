#include <cstdio>
#include <string>

#include "CLI11.hpp"

#include "blobflow/app.hpp"
#include "blobflow/config.hpp"
#include "blobflow/selftest.hpp"

using namespace blobflow;

namespace {

int selftest(const std::string& fault, bool quiet) {
  SelftestOptions opt;
  opt.inject_fault = fault;
  const auto suites = run_selftest(opt);
  bool ok = true;
  for (const auto& s : suites) {
    ok = ok && s.passed();
    std::printf("%-14s %s  (%.2f s)\n", s.name.c_str(), s.passed() ? "PASS" : "FAIL", s.seconds);
    for (const auto& c : s.checks)
      if (!quiet || !c.passed)
        std::printf("    [%s] %s%s%s\n", c.passed ? "ok" : "FAIL", c.name.c_str(), c.detail.empty() ? "" : ": ",
                    c.detail.c_str());
  }
  std::printf("selftest %s\n", ok ? "passed" : "FAILED");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic blob-method simulator for nonlinear diffusion"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  int threads = 1;
  bool quiet = false;
  std::string fault;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    if (needs_config) sub->add_option("--config", config_path, "Configuration file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "Output directory (overrides output.dir and BLOBFLOW_OUT_DIR)");
    sub->add_option("--threads", threads, "Worker threads, 0 = all cores")->check(CLI::NonNegativeNumber);
    sub->add_flag("--quiet", quiet, "Only print failures and final results");
  };
  auto* run = app.add_subcommand("run", "Single simulation");
  auto* converge = app.add_subcommand("converge", "Epsilon convergence study against an exact reference");
  auto* sample = app.add_subcommand("sample", "Sampling run toward the steady state of a potential");
  auto* self = app.add_subcommand("selftest", "Property suites of every module");
  add_common(run, true);
  add_common(converge, true);
  add_common(sample, true);
  add_common(self, false);
  self->add_option("--inject-fault", fault, "Negative-control hook")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (self->parsed()) return selftest(fault, quiet);

  SimConfig config;
  try {
    config = load_config(config_path);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  }
  AppOptions options;
  if (!out_dir.empty()) options.out_dir = out_dir;
  options.threads = threads;
  options.quiet = quiet;
  try {
    if (run->parsed()) return cmd_run(config, options);
    if (converge->parsed()) return cmd_converge(config, options);
    return cmd_sample(config, options);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
