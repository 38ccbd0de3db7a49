#include "config.hpp"

#include "geoprev/error.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace geoprev::pipeline {

namespace {

struct Field {
  std::string section;
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double to_double(const std::string& s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw std::invalid_argument("expected a finite number, got '" + s + "'");
  }
  return v;
}

template <class Int>
Int to_int(const std::string& s) {
  Int v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw std::invalid_argument("expected an integer, got '" + s + "'");
  }
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw std::invalid_argument("expected true or false, got '" + s + "'");
}

std::vector<Field> fields(PipelineConfig& c) {
  std::vector<Field> f;
  auto str = [&](const char* sec, const char* key, std::string& v) {
    f.push_back({sec, key, [&v](const std::string& s) { v = s; }, [&v] { return v; }});
  };
  auto dbl = [&](const char* sec, const char* key, double& v) {
    f.push_back({sec, key, [&v](const std::string& s) { v = to_double(s); }, [&v] { return format_double(v); }});
  };
  auto integer = [&](const char* sec, const char* key, int& v) {
    f.push_back({sec, key, [&v](const std::string& s) { v = to_int<int>(s); }, [&v] { return std::to_string(v); }});
  };
  auto u64 = [&](const char* sec, const char* key, std::uint64_t& v) {
    f.push_back(
        {sec, key, [&v](const std::string& s) { v = to_int<std::uint64_t>(s); }, [&v] { return std::to_string(v); }});
  };
  auto boolean = [&](const char* sec, const char* key, bool& v) {
    f.push_back({sec, key, [&v](const std::string& s) { v = to_bool(s); }, [&v] { return std::string(v ? "true" : "false"); }});
  };

  u64("run", "seed", c.seed);
  integer("run", "threads", c.threads);

  str("paths", "boundary", c.paths.boundary);
  str("paths", "areas", c.paths.areas);
  str("paths", "data", c.paths.data);
  str("paths", "adjacency", c.paths.adjacency);
  str("paths", "locations", c.paths.locations);
  str("paths", "household_sizes", c.paths.household_sizes);
  str("paths", "output_dir", c.paths.output_dir);
  integer("paths", "num_areas", c.num_areas);
  u64("paths", "area_seed", c.area_seed);

  boolean("model", "spde", c.model.spde);
  boolean("model", "bym", c.model.bym);
  dbl("model", "interior_max_edge", c.model.interior_max_edge);
  dbl("model", "extension_factor", c.model.extension_factor);
  dbl("model", "exterior_max_edge", c.model.exterior_max_edge);
  dbl("model", "initial_range", c.model.initial_range);
  dbl("model", "initial_sigma2", c.model.initial_sigma2);
  boolean("model", "nugget", c.model.nugget);
  dbl("model", "nugget_initial_precision", c.model.nugget_initial_precision);
  dbl("model", "bym_initial_log_precision_icar", c.model.bym_initial_log_precision_icar);
  dbl("model", "bym_initial_log_precision_iid", c.model.bym_initial_log_precision_iid);
  dbl("model", "prior_sd", c.model.prior_sd);
  dbl("model", "fixed_precision", c.model.fixed_precision);
  str("model", "grid_offsets", c.model.grid_offsets);
  integer("model", "num_samples", c.model.num_samples);

  integer("survey", "total_psu", c.survey.total_psu);
  integer("survey", "households_per_ea", c.survey.households_per_ea);
  f.push_back({"survey", "fix_policy", [&c](const std::string& s) { c.survey.fix_policy = parse_fix_policy(s); },
               [&c] { return to_string(c.survey.fix_policy); }});

  dbl("functional", "u", c.functional.u);
  dbl("functional", "alpha_level", c.functional.alpha_level);
  integer("functional", "points_per_area", c.functional.points_per_area);
  dbl("functional", "grid_spacing", c.functional.grid_spacing);

  dbl("sim", "beta0", c.sim.beta0);
  dbl("sim", "tau", c.sim.tau);
  dbl("sim", "kappa", c.sim.kappa);
  dbl("sim", "nugget_variance", c.sim.nugget_variance);
  integer("sim", "n_clusters", c.sim.n_clusters);
  integer("sim", "total_psu", c.sim.total_psu);
  integer("sim", "households_per_ea", c.sim.households_per_ea);
  integer("sim", "m_min", c.sim.m_min);
  integer("sim", "m_max", c.sim.m_max);
  integer("sim", "truth_lattice", c.sim.truth_lattice);
  u64("sim", "seed", c.sim.seed);
  return f;
}

// "section.key" -> 1-based line of its last assignment.
std::map<std::string, int> key_lines(const std::string& text) {
  std::map<std::string, int> lines;
  std::istringstream in(text);
  std::string line, section;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string t = trim(line);
    if (t.empty() || t[0] == ';' || t[0] == '#') continue;
    if (t.front() == '[' && t.back() == ']') {
      section = trim(t.substr(1, t.size() - 2));
    } else if (const auto eq = t.find('='); eq != std::string::npos) {
      lines[section + "." + trim(t.substr(0, eq))] = n;
    }
  }
  return lines;
}

}  // namespace

std::vector<double> PipelineConfig::offsets() const {
  std::vector<double> out;
  std::stringstream ss(model.grid_offsets);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(to_double(item));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("model.grid_offsets: ") + e.what());
    }
  }
  return out;
}

void PipelineConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) { throw ConfigError(key + ": " + why); };
  if (threads < 0) fail("run.threads", "must be >= 0");
  if (paths.output_dir.empty()) fail("paths.output_dir", "must not be empty");
  if (num_areas < 1) fail("paths.num_areas", "must be >= 1");
  const std::pair<const char*, const std::string*> inputs[] = {
      {"paths.boundary", &paths.boundary},   {"paths.areas", &paths.areas},
      {"paths.data", &paths.data},           {"paths.adjacency", &paths.adjacency},
      {"paths.locations", &paths.locations}, {"paths.household_sizes", &paths.household_sizes},
  };
  for (const auto& [key, value] : inputs) {
    if (!value->empty() && !std::filesystem::exists(*value)) fail(key, "file not found: " + *value);
  }
  if (!(model.interior_max_edge > 0.0)) fail("model.interior_max_edge", "must be > 0");
  if (!(model.extension_factor >= 1.0)) fail("model.extension_factor", "must be >= 1");
  if (!(model.exterior_max_edge >= model.interior_max_edge)) {
    fail("model.exterior_max_edge", "must be >= model.interior_max_edge");
  }
  if (!(model.initial_range > 0.0)) fail("model.initial_range", "must be > 0");
  if (!(model.initial_sigma2 > 0.0)) fail("model.initial_sigma2", "must be > 0");
  if (!(model.nugget_initial_precision > 0.0)) fail("model.nugget_initial_precision", "must be > 0");
  if (!(model.prior_sd > 0.0)) fail("model.prior_sd", "must be > 0");
  if (!(model.fixed_precision > 0.0)) fail("model.fixed_precision", "must be > 0");
  if (offsets().empty()) fail("model.grid_offsets", "needs at least one offset");
  if (model.num_samples < 1) fail("model.num_samples", "must be >= 1");
  if (survey.total_psu < 1) fail("survey.total_psu", "must be >= 1");
  if (survey.households_per_ea < 1) fail("survey.households_per_ea", "must be >= 1");
  if (!(functional.u > 0.0 && functional.u < 1.0)) fail("functional.u", "must lie in (0, 1)");
  if (!(functional.alpha_level > 0.0 && functional.alpha_level <= 0.5)) {
    fail("functional.alpha_level", "must lie in (0, 0.5]");
  }
  if (functional.points_per_area < 1) fail("functional.points_per_area", "must be >= 1");
  if (!(functional.grid_spacing >= 0.0)) fail("functional.grid_spacing", "must be >= 0");
  sim.validate();
}

PipelineConfig parse_config(std::istream& in, const std::string& source) {
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  boost::property_tree::ptree tree;
  try {
    std::istringstream ss(text);
    boost::property_tree::read_ini(ss, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(source + " line " + std::to_string(e.line()) + ": " + e.message());
  }
  const auto lines = key_lines(text);
  PipelineConfig config;
  std::map<std::string, Field*> index;
  auto table = fields(config);
  for (auto& f : table) index[f.section + "." + f.key] = &f;

  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError(source + ": key '" + section + "' must be inside a [section]");
    }
    for (const auto& [key, value] : body) {
      const std::string name = section + "." + key;
      const auto it = lines.find(name);
      const std::string where = source + (it != lines.end() ? " line " + std::to_string(it->second) : "");
      const auto f = index.find(name);
      if (f == index.end()) throw ConfigError(where + ": unknown key '" + name + "'");
      try {
        f->second->set(trim(value.data()));
      } catch (const ConfigError& e) {
        throw ConfigError(where + ": " + name + ": " + e.what());
      } catch (const std::invalid_argument& e) {
        throw ConfigError(where + ": " + name + ": " + e.what());
      }
    }
  }
  config.validate();
  return config;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse_config(in, path.string());
}

void write_config(std::ostream& out, const PipelineConfig& config) {
  PipelineConfig copy = config;
  std::string section;
  for (const auto& f : fields(copy)) {
    if (f.section != section) {
      if (!section.empty()) out << '\n';
      section = f.section;
      out << '[' << section << "]\n";
    }
    out << f.key << " = " << f.get() << '\n';
  }
}

}  // namespace geoprev::pipeline
