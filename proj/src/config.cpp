#include "blobflow/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "blobflow/reference.hpp"

namespace blobflow {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) {
  const std::string t = trim(s);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v))
    throw ConfigError("expected a finite number, got '" + s + "'");
  return v;
}

template <class Int>
Int parse_integer(const std::string& s) {
  const std::string t = trim(s);
  Int v{};
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
    throw ConfigError("expected an integer, got '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s) {
  const std::string t = trim(s);
  if (t == "true" || t == "yes" || t == "1") return true;
  if (t == "false" || t == "no" || t == "0") return false;
  throw ConfigError("expected true or false, got '" + s + "'");
}

template <class Enum>
Enum parse_enum(const std::string& s, const std::map<std::string, Enum>& names) {
  const auto it = names.find(trim(s));
  if (it != names.end()) return it->second;
  std::string allowed;
  for (const auto& [k, v] : names) allowed += (allowed.empty() ? "" : ", ") + k;
  throw ConfigError("unknown value '" + s + "' (allowed: " + allowed + ")");
}

const std::map<std::string, FamilyKind> kFamilies{{"heat", FamilyKind::Heat},
                                                  {"porous_medium", FamilyKind::PorousMedium},
                                                  {"fast_diffusion", FamilyKind::FastDiffusion},
                                                  {"height_constraint", FamilyKind::HeightConstraint}};
const std::map<std::string, InitialKind> kInitials{{"heat", InitialKind::Heat},
                                                   {"barenblatt", InitialKind::Barenblatt},
                                                   {"uniform", InitialKind::Uniform},
                                                   {"gaussian", InitialKind::Gaussian},
                                                   {"steady", InitialKind::Steady}};
const std::map<std::string, PotentialKind> kPotentials{{"none", PotentialKind::None},
                                                       {"quadratic", PotentialKind::Quadratic}};
const std::map<std::string, ReferenceKind> kReferences{{"none", ReferenceKind::None},
                                                       {"heat", ReferenceKind::Heat},
                                                       {"barenblatt", ReferenceKind::Barenblatt},
                                                       {"steady", ReferenceKind::Steady}};
const std::map<std::string, PlacementMode> kPlacements{{"quantile", PlacementMode::QuantileGrid1D},
                                                       {"rejection", PlacementMode::Rejection}};
const std::map<std::string, KernelKind> kKernels{{"gaussian", KernelKind::Gaussian},
                                                 {"bump", KernelKind::PolynomialBump}};
const std::map<std::string, Scheme> kSchemes{{"euler", Scheme::Euler}, {"rk4", Scheme::RK4}};

template <class Enum>
std::string enum_name(Enum v, const std::map<std::string, Enum>& names) {
  for (const auto& [k, e] : names)
    if (e == v) return k;
  return "?";
}

struct Field {
  std::string section;
  std::string key;
  std::function<void(SimConfig&, const std::string&)> read;
  std::function<std::string(const SimConfig&)> write;
};

template <class T>
Field number(const char* section, const char* key, T SimConfig::*member) {
  return {section, key,
          [member](SimConfig& c, const std::string& s) {
            if constexpr (std::is_floating_point_v<T>) c.*member = parse_double(s);
            else c.*member = parse_integer<T>(s);
          },
          [member](const SimConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_double(c.*member);
            else return std::to_string(c.*member);
          }};
}

template <class Enum>
Field choice(const char* section, const char* key, Enum SimConfig::*member,
             const std::map<std::string, Enum>& names) {
  return {section, key, [member, &names](SimConfig& c, const std::string& s) { c.*member = parse_enum(s, names); },
          [member, &names](const SimConfig& c) { return enum_name(c.*member, names); }};
}

Field flag(const char* section, const char* key, bool SimConfig::*member) {
  return {section, key, [member](SimConfig& c, const std::string& s) { c.*member = parse_bool(s); },
          [member](const SimConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      choice("energy", "family", &SimConfig::family, kFamilies),
      number("energy", "m", &SimConfig::m),
      number("domain", "d", &SimConfig::d),
      number("particles", "n", &SimConfig::n),
      number("particles", "seed", &SimConfig::seed),
      choice("particles", "placement", &SimConfig::placement, kPlacements),
      choice("initial", "kind", &SimConfig::initial, kInitials),
      number("initial", "time", &SimConfig::initial_time),
      number("initial", "center", &SimConfig::center),
      number("initial", "width", &SimConfig::width),
      number("initial", "lo", &SimConfig::lo),
      number("initial", "hi", &SimConfig::hi),
      number("initial", "alpha", &SimConfig::alpha),
      choice("kernel", "kind", &SimConfig::kernel, kKernels),
      number("kernel", "effective_r", &SimConfig::effective_r),
      number("kernel", "truncation", &SimConfig::truncation),
      number("kernel", "bump_order", &SimConfig::bump_order),
      {"schedule", "epsilon",
       [](SimConfig& c, const std::string& s) {
         c.epsilons.clear();
         std::stringstream ss(s);
         std::string item;
         while (std::getline(ss, item, ',')) c.epsilons.push_back(parse_double(item));
       },
       [](const SimConfig& c) {
         std::string out;
         for (double e : c.epsilons) out += (out.empty() ? "" : ", ") + format_double(e);
         return out;
       }},
      number("schedule", "beta", &SimConfig::beta),
      number("time", "duration", &SimConfig::duration),
      {"time", "dt",
       [](SimConfig& c, const std::string& s) {
         if (trim(s) == "auto") c.dt.reset();
         else c.dt = parse_double(s);
       },
       [](const SimConfig& c) { return c.dt ? format_double(*c.dt) : std::string("auto"); }},
      choice("time", "scheme", &SimConfig::scheme, kSchemes),
      number("time", "record_interval", &SimConfig::record_interval),
      choice("velocity", "potential", &SimConfig::potential, kPotentials),
      number("velocity", "strength", &SimConfig::strength),
      choice("reference", "kind", &SimConfig::reference, kReferences),
      number("reference", "box_half_width", &SimConfig::box_half_width),
      number("reference", "steady_resolution", &SimConfig::steady_resolution),
      number("reference", "w1_resolution", &SimConfig::w1_resolution),
      number("grid", "padding", &SimConfig::padding),
      number("grid", "spacing_fraction", &SimConfig::spacing_fraction),
      number("grid", "node_budget", &SimConfig::node_budget),
      {"output", "dir", [](SimConfig& c, const std::string& s) { c.out_dir = trim(s); },
       [](const SimConfig& c) { return c.out_dir; }},
      flag("output", "snapshots", &SimConfig::snapshots),
      flag("output", "exchange", &SimConfig::exchange),
  };
  return table;
}

}  // namespace

std::string to_string(FamilyKind k) { return enum_name(k, kFamilies); }
std::string to_string(InitialKind k) { return enum_name(k, kInitials); }
std::string to_string(PotentialKind k) { return enum_name(k, kPotentials); }
std::string to_string(ReferenceKind k) { return enum_name(k, kReferences); }
std::string to_string(PlacementMode k) { return enum_name(k, kPlacements); }
std::string to_string(KernelKind k) { return enum_name(k, kKernels); }
std::string to_string(Scheme k) { return enum_name(k, kSchemes); }

SimConfig parse_config(std::istream& is) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  SimConfig c;
  std::vector<std::string> problems;
  for (const auto& [section, keys] : tree) {
    if (keys.empty() && !keys.data().empty()) {
      problems.push_back("key '" + section + "' outside of a section");
      continue;
    }
    bool known_section = false;
    for (const Field& f : fields()) known_section = known_section || f.section == section;
    if (!known_section) {
      problems.push_back("unknown section [" + section + "]");
      continue;
    }
    for (const auto& [key, node] : keys) {
      const Field* match = nullptr;
      for (const Field& f : fields())
        if (f.section == section && f.key == key) match = &f;
      if (!match) {
        problems.push_back("unknown key '" + key + "' in [" + section + "]");
        continue;
      }
      try {
        match->read(c, node.data());
      } catch (const ConfigError& e) {
        problems.push_back(section + "." + key + ": " + e.what());
      }
    }
  }
  if (problems.empty()) problems = config_problems(c);
  if (!problems.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
  return c;
}

SimConfig parse_config_string(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

SimConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  return parse_config(in);
}

std::string serialize_config(const SimConfig& c) {
  std::string out, section;
  for (const Field& f : fields()) {
    if (f.section != section) {
      out += (section.empty() ? "[" : "\n[") + f.section + "]\n";
      section = f.section;
    }
    out += f.key + " = " + f.write(c) + "\n";
  }
  return out;
}

std::vector<std::string> config_problems(const SimConfig& c) {
  std::vector<std::string> p;
  if (c.d < 1 || c.d > 3) p.push_back("domain.d must be 1, 2 or 3");
  if (c.n < 1) p.push_back("particles.n must be >= 1");
  if (c.family == FamilyKind::PorousMedium && !(c.m > 1.0))
    p.push_back("energy.m must be > 1 for porous_medium");
  if (c.family == FamilyKind::FastDiffusion && c.d >= 1 && c.d <= 3) {
    const double lower = EnergyFamily::fast_diffusion_lower_bound(c.d);
    if (!(c.m > lower && c.m < 1.0))
      p.push_back("energy.m must lie in (" + format_double(lower) + ", 1) for fast_diffusion in d = " +
                  std::to_string(c.d));
  }
  if (c.placement == PlacementMode::QuantileGrid1D && c.d != 1)
    p.push_back("particles.placement = quantile requires d = 1");
  const bool barenblatt_family = c.family == FamilyKind::PorousMedium || c.family == FamilyKind::FastDiffusion;
  if ((c.initial == InitialKind::Heat || c.initial == InitialKind::Barenblatt) && !(c.initial_time > 0.0))
    p.push_back("initial.time must be > 0 for exact-profile initial data");
  if (c.initial_time < 0.0) p.push_back("initial.time must be >= 0");
  if (c.initial == InitialKind::Barenblatt && !barenblatt_family)
    p.push_back("initial.kind = barenblatt requires porous_medium or fast_diffusion");
  if (c.initial == InitialKind::Uniform && !(c.lo < c.hi)) p.push_back("initial.lo must be < initial.hi");
  if (c.initial == InitialKind::Gaussian && !(c.width > 0.0)) p.push_back("initial.width must be > 0");
  if (c.initial == InitialKind::Steady && c.potential == PotentialKind::None)
    p.push_back("initial.kind = steady requires a potential");
  if (c.alpha < 0.0) p.push_back("initial.alpha must be >= 0");
  if (c.kernel == KernelKind::PolynomialBump && c.bump_order < 3) p.push_back("kernel.bump_order must be >= 3");
  if (!(c.truncation > 0.0)) p.push_back("kernel.truncation must be > 0");
  if (c.effective_r < 0.0) p.push_back("kernel.effective_r must be >= 0 (0 = d + 3)");
  if (c.epsilons.empty()) p.push_back("schedule.epsilon must list at least one value");
  for (std::size_t i = 0; i < c.epsilons.size(); ++i) {
    if (!(c.epsilons[i] > 0.0)) p.push_back("schedule.epsilon values must be > 0");
    if (i > 0 && !(c.epsilons[i] < c.epsilons[i - 1]))
      p.push_back("schedule.epsilon list must be strictly decreasing");
  }
  if (c.d >= 1 && c.d <= 3) {
    const double r = c.effective_r > 0.0 ? c.effective_r : c.d + 3.0;
    try {
      DeltaSchedule(c.beta, r, c.d);
    } catch (const std::invalid_argument& e) {
      p.push_back(std::string("schedule: ") + e.what());
    }
  }
  if (!(c.duration >= 0.0)) p.push_back("time.duration must be >= 0");
  if (c.dt && !(*c.dt > 0.0)) p.push_back("time.dt must be > 0 or auto");
  if (c.record_interval < 0.0) p.push_back("time.record_interval must be >= 0");
  if (!(c.strength > 0.0)) p.push_back("velocity.strength must be > 0");
  if (c.reference == ReferenceKind::Heat && c.family != FamilyKind::Heat)
    p.push_back("reference.kind = heat requires energy.family = heat");
  if (c.reference == ReferenceKind::Barenblatt && !barenblatt_family)
    p.push_back("reference.kind = barenblatt requires porous_medium or fast_diffusion");
  if ((c.reference == ReferenceKind::Heat || c.reference == ReferenceKind::Barenblatt) && !(c.initial_time > 0.0))
    p.push_back("exact references need initial.time > 0");
  if (c.reference == ReferenceKind::Steady && c.potential == PotentialKind::None)
    p.push_back("reference.kind = steady requires a potential");
  if (c.reference != ReferenceKind::None && c.d > 2) p.push_back("W1 diagnostics support d = 1 or 2 only");
  if (!(c.box_half_width > 0.0)) p.push_back("reference.box_half_width must be > 0");
  if (c.steady_resolution < 16) p.push_back("reference.steady_resolution must be >= 16");
  if (c.w1_resolution < 2) p.push_back("reference.w1_resolution must be >= 2");
  if (!(c.padding > 0.0)) p.push_back("grid.padding must be > 0");
  if (!(c.spacing_fraction > 0.0 && c.spacing_fraction <= 1.0)) p.push_back("grid.spacing_fraction must be in (0, 1]");
  if (c.node_budget < 1) p.push_back("grid.node_budget must be >= 1");
  if (c.out_dir.empty()) p.push_back("output.dir must not be empty");
  return p;
}

void validate_config(const SimConfig& c) {
  const auto problems = config_problems(c);
  if (problems.empty()) return;
  std::string msg = "invalid configuration:";
  for (const auto& p : problems) msg += "\n  " + p;
  throw ConfigError(msg);
}

}  // namespace blobflow
