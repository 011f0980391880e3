#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <limits>

#include "blobflow/app.hpp"
#include "blobflow/config.hpp"
#include "blobflow/selftest.hpp"

namespace py = pybind11;
using namespace blobflow;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

double finite_or_inf(ExtReal v) { return v.is_infinite() ? std::numeric_limits<double>::infinity() : v.value(); }

// (N, d) or (N,) array to a point set.
PointSet to_points(const Array& a) {
  if (a.ndim() == 1) return PointSet(1, std::vector<double>(a.data(), a.data() + a.size()));
  if (a.ndim() != 2) throw py::value_error("positions must be a 1-D or 2-D array");
  const int d = static_cast<int>(a.shape(1));
  if (d < 1) throw py::value_error("positions need at least one column");
  return PointSet(d, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const PointSet& p) {
  Array out({static_cast<py::ssize_t>(p.size()), static_cast<py::ssize_t>(p.dim())});
  std::copy(p.coords().begin(), p.coords().end(), out.mutable_data());
  return out;
}

Array to_array(const std::vector<double>& v) {
  Array out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::dict record_dict(const DiagnosticsRecord& r) {
  py::dict d;
  d["t"] = r.t;
  d["F_eps"] = r.F_eps;
  d["entropy_moll"] = r.entropy_moll;
  d["M2"] = r.M2;
  d["diss_residual"] = r.diss_residual;
  d["min_cross_term"] = r.min_cross_term;
  d["lipschitz_estimate"] = r.lipschitz_estimate;
  d["w1_to_reference"] = r.w1_to_reference ? py::cast(*r.w1_to_reference) : py::none();
  d["exchange_residual"] = r.exchange_residual ? py::cast(*r.exchange_residual) : py::none();
  d["max_mu"] = r.max_mu;
  return d;
}

template <class F>
auto vectorize(F f) {
  return [f](const Array& a) {
    std::vector<double> out(a.size());
    for (py::ssize_t i = 0; i < a.size(); ++i) out[i] = f(a.data()[i]);
    Array r(std::vector<py::ssize_t>(a.shape(), a.shape() + a.ndim()));
    std::copy(out.begin(), out.end(), r.mutable_data());
    return r;
  };
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Deterministic particle method for nonlinear diffusion";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  // convex_energy
  py::class_<EnergyFamily>(m, "EnergyFamily")
      .def_static("heat", &EnergyFamily::heat)
      .def_static("porous_medium", &EnergyFamily::porous_medium, py::arg("m"))
      .def_static("fast_diffusion", &EnergyFamily::fast_diffusion, py::arg("m"), py::arg("d"))
      .def_static("height_constraint", &EnergyFamily::height_constraint)
      .def_property_readonly("name", &EnergyFamily::name)
      .def_property_readonly("exponent", &EnergyFamily::exponent)
      .def("value", [](const EnergyFamily& f, double a) { return finite_or_inf(energy_value(f, a)); }, py::arg("a"))
      .def("__repr__", [](const EnergyFamily& f) { return "EnergyFamily(" + f.name() + ")"; });

  py::class_<RegularizedEnergy>(m, "RegularizedEnergy")
      .def(py::init<EnergyFamily, double, double>(), py::arg("family"), py::arg("delta"), py::arg("epsilon") = 0.0)
      .def_property_readonly("family", &RegularizedEnergy::family)
      .def_property_readonly("delta", &RegularizedEnergy::delta)
      .def("value", [](const RegularizedEnergy& r, double a) { return finite_or_inf(reg_value(r, a)); }, py::arg("a"))
      .def("derivative", &reg_derivative, py::arg("a"))
      .def("conjugate", &reg_conjugate, py::arg("b"))
      .def("conjugate_derivative", &reg_conjugate_derivative, py::arg("b"))
      .def("derivative_array",
           [](const RegularizedEnergy& r, const Array& a) {
             return vectorize([&r](double x) { return reg_derivative(r, x); })(a);
           },
           py::arg("a"));

  m.def("prox", &prox, py::arg("family"), py::arg("delta"), py::arg("a"));
  m.def("moreau_value", &moreau_value, py::arg("family"), py::arg("delta"), py::arg("a"));
  m.def("h1_density", [](const EnergyFamily& f, double a) { return finite_or_inf(h1_density(f, a)); }, py::arg("family"),
        py::arg("a"));

  // mollifier
  py::class_<MollifierKernel>(m, "MollifierKernel")
      .def_static("gaussian", &MollifierKernel::gaussian, py::arg("epsilon"))
      .def_static("bump", &MollifierKernel::bump, py::arg("epsilon"), py::arg("order") = 3)
      .def_readwrite("epsilon", &MollifierKernel::epsilon)
      .def_readwrite("effective_r", &MollifierKernel::effective_r)
      .def_property_readonly("name", &MollifierKernel::name)
      .def_property_readonly("support_radius", &MollifierKernel::support_radius)
      .def("__call__",
           [](const MollifierKernel& k, const Array& x) {
             return kernel_value(k, std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
           },
           py::arg("x"));

  // ensemble
  py::class_<ParticleEnsemble>(m, "ParticleEnsemble")
      .def(py::init([](const Array& x, double t, std::uint64_t seed) { return ParticleEnsemble(to_points(x), t, seed); }),
           py::arg("positions"), py::arg("time") = 0.0, py::arg("seed") = 0)
      .def_property_readonly("positions", [](const ParticleEnsemble& e) { return to_array(e.positions()); })
      .def_property_readonly("time", &ParticleEnsemble::time)
      .def_property_readonly("dim", &ParticleEnsemble::dim)
      .def("__len__", &ParticleEnsemble::size);

  m.def("second_moment", &second_moment, py::arg("ensemble"));
  m.def("w1_1d", &w1_1d, py::arg("a"), py::arg("b"));
  m.def("w2_1d", &w2_1d, py::arg("a"), py::arg("b"));
  m.def("mollified_density",
        [](const ParticleEnsemble& e, const MollifierKernel& k, const Array& y) {
          return to_array(mollified_density(e, k, to_points(y)));
        },
        py::arg("ensemble"), py::arg("kernel"), py::arg("points"));

  // reference
  py::class_<DeltaSchedule>(m, "DeltaSchedule")
      .def(py::init<double, double, int>(), py::arg("beta"), py::arg("r"), py::arg("d"))
      .def_static("max_beta", &DeltaSchedule::max_beta, py::arg("r"), py::arg("d"))
      .def("__call__", &DeltaSchedule::delta, py::arg("epsilon"));
  m.def("heat_kernel",
        [](int d, double t, const Array& x) {
          return heat_kernel(d, t, std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
        },
        py::arg("d"), py::arg("t"), py::arg("x"));
  m.def("barenblatt",
        [](double mexp, int d, double t, const Array& x) {
          return barenblatt(mexp, d, t, std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
        },
        py::arg("m"), py::arg("d"), py::arg("t"), py::arg("x"));
  m.def("steady_state_z",
        [](const EnergyFamily& f, double strength, double half_width) {
          return steady_state(f, Potential::quadratic(strength), Box::interval(-half_width, half_width)).z();
        },
        py::arg("family"), py::arg("strength") = 1.0, py::arg("half_width") = 10.0,
        "Normalizing level Z of the steady state for V = (strength/2)|x|^2 in d = 1.");

  // configuration and experiments
  py::class_<SimConfig>(m, "SimConfig")
      .def_static("parse", &parse_config_string, py::arg("text"))
      .def_static("load", &load_config, py::arg("path"))
      .def("serialize", &serialize_config)
      .def("hash", &config_hash)
      .def("problems", &config_problems)
      .def_readwrite("n", &SimConfig::n)
      .def_readwrite("seed", &SimConfig::seed)
      .def_readwrite("epsilons", &SimConfig::epsilons)
      .def_readwrite("beta", &SimConfig::beta)
      .def_readwrite("duration", &SimConfig::duration)
      .def_readwrite("record_interval", &SimConfig::record_interval)
      .def_readwrite("out_dir", &SimConfig::out_dir)
      .def("__eq__", [](const SimConfig& a, const SimConfig& b) { return a == b; });

  m.def("run_experiment",
        [](const SimConfig& c, double epsilon, int threads) {
          ExperimentResult r;
          {
            py::gil_scoped_release release;
            r = run_experiment(c, epsilon, threads);
          }
          py::dict out;
          out["epsilon"] = r.epsilon;
          out["delta"] = r.delta;
          out["dt"] = r.run.dt;
          out["steps"] = r.run.steps;
          out["seconds"] = r.seconds;
          py::list records;
          for (const auto& rec : r.run.records) records.append(record_dict(rec));
          out["records"] = records;
          out["final_positions"] = to_array(r.run.final_state.positions());
          return out;
        },
        py::arg("config"), py::arg("epsilon"), py::arg("threads") = 1,
        "Integrates one epsilon of a configuration and returns the diagnostics records.");

  auto command = [](int (*cmd)(const SimConfig&, const AppOptions&)) {
    return [cmd](const SimConfig& c, std::optional<std::string> out_dir, int threads, bool quiet) {
      AppOptions o{std::move(out_dir), threads, quiet};
      py::gil_scoped_release release;
      return cmd(c, o);
    };
  };
  m.def("cmd_run", command(&cmd_run), py::arg("config"), py::arg("out_dir") = py::none(), py::arg("threads") = 1,
        py::arg("quiet") = true);
  m.def("cmd_converge", command(&cmd_converge), py::arg("config"), py::arg("out_dir") = py::none(),
        py::arg("threads") = 1, py::arg("quiet") = true);
  m.def("cmd_sample", command(&cmd_sample), py::arg("config"), py::arg("out_dir") = py::none(), py::arg("threads") = 1,
        py::arg("quiet") = true);

  m.def("selftest",
        [](const std::string& inject_fault) {
          SelftestOptions o;
          o.inject_fault = inject_fault;
          std::vector<SuiteResult> suites;
          {
            py::gil_scoped_release release;
            suites = run_selftest(o);
          }
          py::dict out;
          for (const auto& s : suites) out[py::str(s.name)] = s.passed();
          return out;
        },
        py::arg("inject_fault") = "", "Runs the property suites; maps suite name to pass/fail.");
}
