#include "blobflow/app.hpp"

#include <openssl/evp.h>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace blobflow {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int resolve_threads(int threads) {
  if (threads > 0) return threads;
  return std::max(1u, std::thread::hardware_concurrency());
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

json config_json(const SimConfig& c) {
  namespace pt = boost::property_tree;
  std::istringstream in(serialize_config(c));
  pt::ptree tree;
  pt::read_ini(in, tree);
  json out = json::object();
  for (const auto& [section, keys] : tree)
    for (const auto& [key, node] : keys) out[section][key] = node.data();
  return out;
}

json record_json(const DiagnosticsRecord& r) {
  json j{{"t", r.t},
         {"F_eps", r.F_eps},
         {"entropy_moll", r.entropy_moll},
         {"M2", r.M2},
         {"diss_residual", r.diss_residual},
         {"min_cross_term", r.min_cross_term},
         {"lipschitz_estimate", r.lipschitz_estimate}};
  j["w1_to_reference"] = r.w1_to_reference ? json(*r.w1_to_reference) : json(nullptr);
  j["exchange_residual"] = r.exchange_residual ? json(*r.exchange_residual) : json(nullptr);
  return j;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  out << j.dump(2) << "\n";
}

json summary_base(const std::string& command, const SimConfig& c) {
  return json{{"command", command}, {"config", config_json(c)}, {"config_sha256", config_hash(c)}};
}

// writes diagnostics rows and snapshots as records arrive, so failures leave partial output
class RecordWriter {
 public:
  RecordWriter(const fs::path& dir, bool snapshots, bool quiet)
      : dir_(dir), snapshots_(snapshots), quiet_(quiet), diag_(dir / "diagnostics.csv") {
    write_diagnostics_header(diag_);
    diag_.flush();
    if (snapshots_) fs::create_directories(dir_ / "snapshots");
  }

  void operator()(const DiagnosticsRecord& r, const ParticleEnsemble& e) {
    write_diagnostics_row(diag_, r);
    diag_.flush();
    if (snapshots_) {
      char name[32];
      std::snprintf(name, sizeof name, "snapshot_%05d.csv", index_);
      std::ofstream snap(dir_ / "snapshots" / name);
      write_snapshot_csv(snap, e);
    }
    ++index_;
    if (!quiet_) {
      std::printf("  t=%-10.6g F_eps=%-14.8g M2=%-10.6g", r.t, r.F_eps, r.M2);
      if (r.w1_to_reference) std::printf(" W1=%.6g", *r.w1_to_reference);
      std::printf("\n");
      std::fflush(stdout);
    }
  }

 private:
  fs::path dir_;
  bool snapshots_;
  bool quiet_;
  std::ofstream diag_;
  int index_ = 0;
};

int config_failure(const std::string& msg) {
  std::fprintf(stderr, "%s\n", msg.c_str());
  return 2;
}

}  // namespace

EnergyFamily make_family(const SimConfig& c) {
  switch (c.family) {
    case FamilyKind::Heat: return EnergyFamily::heat();
    case FamilyKind::PorousMedium: return EnergyFamily::porous_medium(c.m);
    case FamilyKind::FastDiffusion: return EnergyFamily::fast_diffusion(c.m, c.d);
    case FamilyKind::HeightConstraint: return EnergyFamily::height_constraint();
  }
  throw ConfigError("unknown energy family");
}

Potential make_potential(const SimConfig& c) {
  if (c.potential == PotentialKind::Quadratic) return Potential::quadratic(c.strength);
  return Potential{};
}

MollifierKernel make_kernel(const SimConfig& c, double epsilon) {
  MollifierKernel k = c.kernel == KernelKind::Gaussian ? MollifierKernel::gaussian(epsilon)
                                                        : MollifierKernel::bump(epsilon, c.bump_order);
  k.effective_r = c.effective_r;
  k.truncation_radius_multiple = c.truncation;
  return k;
}

SteadyState make_steady_state(const SimConfig& c) {
  if (c.potential == PotentialKind::None) throw ConfigError("steady state requires a potential");
  return steady_state(make_family(c), make_potential(c), Box::cube(c.d, -c.box_half_width, c.box_half_width),
                      c.steady_resolution);
}

ReferenceDensity make_initial_density(const SimConfig& c) {
  const int d = c.d;
  std::optional<ReferenceDensity> target;
  switch (c.initial) {
    case InitialKind::Heat: target = heat_reference(d, c.initial_time); break;
    case InitialKind::Barenblatt: target = barenblatt_reference(c.m, d, c.initial_time); break;
    case InitialKind::Uniform: {
      const double lo = c.lo, hi = c.hi, vol = std::pow(hi - lo, d);
      std::optional<ReferenceDensity::Cdf> cdf;
      if (d == 1) cdf = [lo, hi](double x) { return std::clamp((x - lo) / (hi - lo), 0.0, 1.0); };
      target = ReferenceDensity(
          [lo, hi, vol](std::span<const double> x) {
            for (double v : x)
              if (v < lo || v > hi) return 0.0;
            return 1.0 / vol;
          },
          Box::cube(d, lo, hi), cdf, "uniform");
      break;
    }
    case InitialKind::Gaussian: {
      const double mu = c.center, s = c.width;
      std::optional<ReferenceDensity::Cdf> cdf;
      if (d == 1) cdf = [mu, s](double x) { return normal_cdf((x - mu) / s); };
      target = ReferenceDensity(
          [mu, s, d](std::span<const double> x) {
            double r2 = 0.0;
            for (double v : x) r2 += (v - mu) * (v - mu);
            return std::exp(-0.5 * r2 / (s * s)) / std::pow(2.0 * M_PI * s * s, 0.5 * d);
          },
          Box::cube(d, mu - 10.0 * s, mu + 10.0 * s), cdf, "gaussian");
      break;
    }
    case InitialKind::Steady: target = make_steady_state(c).as_reference(); break;
  }
  if (c.alpha > 0.0) return well_prepared(*target, c.alpha);
  return *target;
}

Experiment make_experiment(const SimConfig& c, double epsilon, int threads) {
  validate_config(c);
  const MollifierKernel kernel = make_kernel(c, epsilon);
  const DeltaSchedule schedule(c.beta, kernel.tail_exponent(c.d), c.d);
  const double delta = delta_of_eps(schedule, epsilon);
  const EnergyFamily family = make_family(c);
  const VelocityField velocity = c.potential == PotentialKind::None
                                     ? VelocityField::none()
                                     : VelocityField::gradient_of(make_potential(c));
  FlowSettings settings;
  settings.padding = c.padding;
  settings.spacing_fraction = c.spacing_fraction;
  settings.node_budget = c.node_budget;
  settings.threads = resolve_threads(threads);

  ParticleEnsemble initial = prepare_initial_particles(make_initial_density(c), c.n, c.seed, c.placement);
  initial.set_time(c.initial_time);

  RunOptions options;
  options.duration = c.duration;
  options.dt = c.dt.value_or(0.0);
  options.scheme = c.scheme;
  options.record_interval = c.record_interval;
  options.exchange = c.exchange;
  options.w1_resolution = c.w1_resolution;
  switch (c.reference) {
    case ReferenceKind::None: break;
    case ReferenceKind::Heat: {
      const int d = c.d;
      options.reference = [d](double t) { return heat_reference(d, t); };
      break;
    }
    case ReferenceKind::Barenblatt: {
      const int d = c.d;
      const double m = c.m;
      options.reference = [m, d](double t) { return barenblatt_reference(m, d, t); };
      break;
    }
    case ReferenceKind::Steady: {
      // tabulate the CDF once for the whole run
      const ReferenceDensity steady = make_steady_state(c).as_reference();
      options.reference = [steady](double) { return steady; };
      break;
    }
  }
  return Experiment{epsilon, delta, ParticleFlow(RegularizedEnergy(family, delta, epsilon), kernel, velocity, settings),
                    std::move(initial), std::move(options)};
}

ExperimentResult run_experiment(const SimConfig& c, double epsilon, int threads, const RecordCallback& on_record) {
  Experiment ex = make_experiment(c, epsilon, threads);
  ex.options.on_record = on_record;
  const auto start = std::chrono::steady_clock::now();
  ExperimentResult out;
  out.epsilon = ex.epsilon;
  out.delta = ex.delta;
  out.run = run(ex.flow, ex.initial, ex.options);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

void write_diagnostics_header(std::ostream& os) {
  os << "t,F_eps,entropy_moll,M2,diss_residual,min_cross_term,lipschitz_estimate,w1_to_reference,"
        "exchange_residual\n";
}

void write_diagnostics_row(std::ostream& os, const DiagnosticsRecord& r) {
  os << fmt(r.t) << ',' << fmt(r.F_eps) << ',' << fmt(r.entropy_moll) << ',' << fmt(r.M2) << ','
     << fmt(r.diss_residual) << ',' << fmt(r.min_cross_term) << ',' << fmt(r.lipschitz_estimate) << ','
     << (r.w1_to_reference ? fmt(*r.w1_to_reference) : "") << ','
     << (r.exchange_residual ? fmt(*r.exchange_residual) : "") << '\n';
}

std::string diagnostics_csv(const std::vector<DiagnosticsRecord>& records) {
  std::ostringstream os;
  write_diagnostics_header(os);
  for (const auto& r : records) write_diagnostics_row(os, r);
  return os.str();
}

ConvergenceTable convergence_table(const std::vector<ExperimentResult>& results) {
  ConvergenceTable table;
  for (const auto& res : results) {
    ConvergenceRow row;
    row.epsilon = res.epsilon;
    row.delta = res.delta;
    row.seconds = res.seconds;
    for (const auto& r : res.run.records) {
      row.times.push_back(r.t);
      row.w1.push_back(r.w1_to_reference.value_or(std::nan("")));
    }
    table.rows.push_back(std::move(row));
  }
  if (table.rows.size() >= 2) {
    bool ok = true;
    for (std::size_t i = 1; i < table.rows.size(); ++i)
      ok = ok && table.rows[i].w1.back() < table.rows[i - 1].w1.back();
    table.strictly_decreasing = ok;
  }
  return table;
}

void write_convergence_csv(std::ostream& os, const ConvergenceTable& table) {
  os << "epsilon,delta";
  if (!table.rows.empty())
    for (double t : table.rows.front().times) {
      char label[40];
      std::snprintf(label, sizeof label, ",w1_t=%.12g", t);
      os << label;
    }
  os << ",runtime_s\n";
  for (const auto& row : table.rows) {
    os << fmt(row.epsilon) << ',' << fmt(row.delta);
    for (double w : row.w1) os << ',' << fmt(w);
    os << ',' << fmt(row.seconds) << '\n';
  }
}

std::string resolve_out_dir(const SimConfig& c, const AppOptions& o) {
  if (o.out_dir && !o.out_dir->empty()) return *o.out_dir;
  if (const char* env = std::getenv("BLOBFLOW_OUT_DIR"); env && *env) return env;
  return c.out_dir;
}

std::string config_hash(const SimConfig& c) {
  const std::string text = serialize_config(c);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex += kHex[md[i] >> 4];
    hex += kHex[md[i] & 15];
  }
  return hex;
}

int cmd_run(const SimConfig& c, const AppOptions& o) {
  try {
    validate_config(c);
  } catch (const ConfigError& e) {
    return config_failure(e.what());
  }
  const fs::path dir = resolve_out_dir(c, o);
  fs::create_directories(dir);
  json summary = summary_base("run", c);
  const double eps = c.epsilons.back();
  RecordWriter writer(dir, c.snapshots, o.quiet);
  try {
    const ExperimentResult res = run_experiment(c, eps, o.threads, std::ref(writer));
    summary["status"] = "ok";
    summary["epsilon"] = res.epsilon;
    summary["delta"] = res.delta;
    summary["dt"] = res.run.dt;
    summary["steps"] = res.run.steps;
    summary["records"] = res.run.records.size();
    summary["wall_time_s"] = res.seconds;
    summary["final"] = record_json(res.run.records.back());
    write_json(dir / "summary.json", summary);
    if (!o.quiet) std::printf("run finished: %zu steps, %.2f s, outputs in %s\n", res.run.steps, res.seconds,
                              dir.string().c_str());
    return 0;
  } catch (const ConfigError& e) {
    return config_failure(e.what());
  } catch (const std::exception& e) {
    summary["status"] = "failed";
    summary["error"] = e.what();
    write_json(dir / "summary.json", summary);
    std::fprintf(stderr, "run failed: %s\n", e.what());
    return 1;
  }
}

int cmd_converge(const SimConfig& c, const AppOptions& o) {
  try {
    validate_config(c);
    if (c.reference == ReferenceKind::None) throw ConfigError("converge requires reference.kind");
  } catch (const ConfigError& e) {
    return config_failure(e.what());
  }
  const fs::path dir = resolve_out_dir(c, o);
  fs::create_directories(dir);
  json summary = summary_base("converge", c);
  std::vector<ExperimentResult> results;
  try {
    for (std::size_t i = 0; i < c.epsilons.size(); ++i) {
      const double eps = c.epsilons[i];
      char name[32];
      std::snprintf(name, sizeof name, "eps_%zu", i);
      fs::create_directories(dir / name);
      if (!o.quiet) std::printf("epsilon = %g\n", eps);
      RecordWriter writer(dir / name, c.snapshots, o.quiet);
      results.push_back(run_experiment(c, eps, o.threads, std::ref(writer)));
    }
  } catch (const std::exception& e) {
    summary["status"] = "failed";
    summary["error"] = e.what();
    write_json(dir / "summary.json", summary);
    std::fprintf(stderr, "converge failed: %s\n", e.what());
    return 1;
  }
  const ConvergenceTable table = convergence_table(results);
  {
    std::ofstream csv(dir / "converge.csv");
    write_convergence_csv(csv, table);
  }
  json rows = json::array();
  for (const auto& row : table.rows)
    rows.push_back({{"epsilon", row.epsilon}, {"delta", row.delta}, {"times", row.times}, {"w1", row.w1},
                    {"runtime_s", row.seconds}});
  summary["status"] = "ok";
  summary["table"] = rows;
  summary["verdict"] = table.strictly_decreasing
                           ? json(*table.strictly_decreasing ? "strictly decreasing" : "not strictly decreasing")
                           : json(nullptr);
  write_json(dir / "summary.json", summary);
  if (!o.quiet) {
    std::ostringstream os;
    write_convergence_csv(os, table);
    std::printf("%s", os.str().c_str());
    if (table.strictly_decreasing)
      std::printf("verdict: final W1 %s in epsilon\n",
                  *table.strictly_decreasing ? "strictly decreasing" : "NOT strictly decreasing");
    else
      std::printf("verdict: none (single epsilon)\n");
  }
  return 0;
}

int cmd_sample(const SimConfig& c, const AppOptions& o) {
  SimConfig cfg = c;
  cfg.reference = ReferenceKind::Steady;
  try {
    if (c.potential == PotentialKind::None) throw ConfigError("sample requires velocity.potential");
    validate_config(cfg);
  } catch (const ConfigError& e) {
    return config_failure(e.what());
  }
  const fs::path dir = resolve_out_dir(cfg, o);
  fs::create_directories(dir);
  json summary = summary_base("sample", cfg);
  RecordWriter writer(dir, cfg.snapshots, o.quiet);
  std::ofstream series(dir / "sample_w1.csv");
  series << "t,w1_to_steady\n";
  auto on_record = [&](const DiagnosticsRecord& r, const ParticleEnsemble& e) {
    writer(r, e);
    series << fmt(r.t) << ',' << fmt(*r.w1_to_reference) << '\n';
    series.flush();
  };
  try {
    const SteadyState steady = make_steady_state(cfg);
    const ExperimentResult res = run_experiment(cfg, cfg.epsilons.back(), o.threads, on_record);
    summary["status"] = "ok";
    summary["epsilon"] = res.epsilon;
    summary["delta"] = res.delta;
    summary["dt"] = res.run.dt;
    summary["steps"] = res.run.steps;
    summary["steady_Z"] = steady.z();
    summary["wall_time_s"] = res.seconds;
    summary["final"] = record_json(res.run.records.back());
    write_json(dir / "summary.json", summary);
    if (!o.quiet)
      std::printf("sample finished: final W1 to steady state %.6g (Z = %.10g)\n",
                  *res.run.records.back().w1_to_reference, steady.z());
    return 0;
  } catch (const std::exception& e) {
    summary["status"] = "failed";
    summary["error"] = e.what();
    write_json(dir / "summary.json", summary);
    std::fprintf(stderr, "sample failed: %s\n", e.what());
    return 1;
  }
}

}  // namespace blobflow
