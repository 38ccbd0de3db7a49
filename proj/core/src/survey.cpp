#include "geoprev/survey.hpp"

#include "geoprev/error.hpp"
#include "geoprev/geo_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <unordered_map>

namespace geoprev {

namespace {

template <class F>
void for_each_in_area(const SurveyFrame& frame, const std::string& area_id, F&& f) {
  for (const auto& c : frame.clusters) {
    if (c.area_id == area_id) f(c);
  }
}

double parse_number(const std::string& s, std::size_t line, const char* field) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) {
    throw DataError("survey CSV line " + std::to_string(line) + ": field '" + field + "' is not a number: '" + s + "'");
  }
  return v;
}

}  // namespace

void SurveyFrame::validate() const {
  for (const auto& c : clusters) {
    if (!is_finite(c.location)) throw DataError("cluster " + c.id + " has a non-finite location");
    for (const auto& h : c.households) {
      if (!(h.trials >= 0.0) || !(h.positives >= 0.0) || h.positives > h.trials) {
        throw DataError("cluster " + c.id + " household " + h.id + " needs 0 <= Y <= N");
      }
      if (!(h.weight > 0.0) || !std::isfinite(h.weight)) {
        throw DataError("cluster " + c.id + " household " + h.id + " needs a positive weight");
      }
    }
  }
}

std::vector<std::string> SurveyFrame::area_ids() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& c : clusters) {
    if (seen.insert(c.area_id).second) out.push_back(c.area_id);
  }
  return out;
}

double design_weight(int num_psu_sampled, int total_psu, int m_i, int households_per_ea) {
  if (num_psu_sampled <= 0 || total_psu <= 0 || m_i <= 0 || households_per_ea <= 0) {
    throw DataError("design_weight: zero selection probability (all counts must be positive)");
  }
  if (num_psu_sampled > total_psu || m_i > households_per_ea) {
    throw DataError("design_weight: sampled counts exceed their totals");
  }
  const double pi = (static_cast<double>(num_psu_sampled) / total_psu) * (static_cast<double>(m_i) / households_per_ea);
  return 1.0 / pi;
}

double design_weight(const DesignParams& design, int m_i) {
  return design_weight(design.num_psu_sampled, design.total_psu, m_i, design.households_per_ea);
}

double hajek(const SurveyFrame& frame, const std::string& area_id) {
  double num = 0.0, den = 0.0;
  for_each_in_area(frame, area_id, [&](const Cluster& c) {
    for (const auto& h : c.households) {
      num += h.weight * h.positives;
      den += h.weight * h.trials;
    }
  });
  if (!(den > 0.0)) throw DataError("area '" + area_id + "' has no tested members");
  return num / den;
}

std::optional<double> design_variance(const SurveyFrame& frame, const std::string& area_id, double p_hat) {
  std::vector<double> z;
  double den = 0.0;
  for_each_in_area(frame, area_id, [&](const Cluster& c) {
    double zi = 0.0;
    for (const auto& h : c.households) {
      zi += h.weight * (h.positives - p_hat * h.trials);
      den += h.weight * h.trials;
    }
    z.push_back(zi);
  });
  const auto n = static_cast<double>(z.size());
  if (z.size() < 2 || !(den > 0.0)) return std::nullopt;
  double mean = 0.0;
  for (double v : z) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : z) ss += (v - mean) * (v - mean);
  return n / (n - 1.0) * ss / (den * den);
}

double effective_sample_size(const SurveyFrame& frame, const std::string& area_id) {
  double s1 = 0.0, s2 = 0.0;
  for_each_in_area(frame, area_id, [&](const Cluster& c) {
    for (const auto& h : c.households) {
      s1 += h.weight * h.trials;
      s2 += h.weight * h.weight * h.trials;
    }
  });
  return s2 > 0.0 ? s1 * s1 / s2 : 0.0;
}

FixPolicy parse_fix_policy(const std::string& name) {
  if (name == "shrink") return FixPolicy::kShrink;
  if (name == "add_half") return FixPolicy::kAddHalf;
  if (name == "none") return FixPolicy::kNone;
  throw ConfigError("unknown fix policy '" + name + "' (expected shrink, add_half or none)");
}

std::string to_string(FixPolicy policy) {
  switch (policy) {
    case FixPolicy::kShrink: return "shrink";
    case FixPolicy::kAddHalf: return "add_half";
    case FixPolicy::kNone: return "none";
  }
  return "unknown";
}

LogitEstimate empirical_logit(double p_hat, double v_star, FixPolicy policy, const BoundaryContext& context) {
  if (!(p_hat >= 0.0 && p_hat <= 1.0)) throw DataError("empirical_logit: p_hat outside [0, 1]");
  LogitEstimate out;
  out.p_used = p_hat;
  double v = v_star;
  if (p_hat <= 0.0 || p_hat >= 1.0) {
    const double n = std::max(context.effective_size, 0.0);
    switch (policy) {
      case FixPolicy::kNone:
        throw DataError("empirical_logit: boundary estimate with fix policy 'none'");
      case FixPolicy::kShrink: {
        const double pbar = std::clamp(context.national_prevalence, 1e-6, 1.0 - 1e-6);
        out.p_used = (p_hat * n + pbar) / (n + 1.0);
        break;
      }
      case FixPolicy::kAddHalf:
        out.p_used = (p_hat * n + 0.5) / (n + 1.0);
        break;
    }
    v = out.p_used * (1.0 - out.p_used) / (n + 1.0);
    out.fixed = true;
  }
  const double q = out.p_used * (1.0 - out.p_used);
  out.y_logit = std::log(out.p_used / (1.0 - out.p_used));
  out.v_logit = v / (q * q);
  return out;
}

// Linearization variances this far below p(1 - p) are rounding residue of
// identical clusters.
constexpr double kNegligibleVariance = 1e-12;

std::vector<DirectEstimate> direct_estimates(const SurveyFrame& frame, const std::vector<std::string>& areas,
                                             FixPolicy policy) {
  frame.validate();
  double num = 0.0, den = 0.0;
  for (const auto& c : frame.clusters) {
    for (const auto& h : c.households) {
      num += h.weight * h.positives;
      den += h.weight * h.trials;
    }
  }
  if (!(den > 0.0)) throw DataError("survey frame has no tested members");
  const double national = num / den;

  std::vector<DirectEstimate> out;
  std::vector<double> multi_vlogit;
  for (const auto& area : areas) {
    int clusters = 0;
    double tested = 0.0;
    for_each_in_area(frame, area, [&](const Cluster& c) {
      ++clusters;
      for (const auto& h : c.households) tested += h.trials;
    });
    if (!(tested > 0.0)) continue;
    DirectEstimate e;
    e.area_id = area;
    e.n_clusters = clusters;
    e.p_hat = hajek(frame, area);
    e.n_eff = effective_sample_size(frame, area);
    const auto v = design_variance(frame, area, e.p_hat);
    e.variance_pooled = !v.has_value();
    e.v_star = v.value_or(0.0);
    if (e.v_star <= kNegligibleVariance * e.p_hat * (1.0 - e.p_hat)) e.v_star = 0.0;
    const LogitEstimate l = empirical_logit(e.p_hat, e.v_star, policy, {national, e.n_eff});
    e.boundary_fixed = l.fixed;
    e.y_logit = l.y_logit;
    e.v_logit = l.v_logit;
    if (!e.variance_pooled && !e.boundary_fixed && e.v_logit > 0.0) multi_vlogit.push_back(e.v_logit);
    out.push_back(e);
  }
  double median = std::numeric_limits<double>::quiet_NaN();
  if (!multi_vlogit.empty()) {
    std::sort(multi_vlogit.begin(), multi_vlogit.end());
    const std::size_t n = multi_vlogit.size();
    median = n % 2 == 1 ? multi_vlogit[n / 2] : 0.5 * (multi_vlogit[n / 2 - 1] + multi_vlogit[n / 2]);
  }
  for (auto& e : out) {
    // Boundary fixes carry their own variance. Otherwise zero linearization
    // variance (single cluster, or identical clusters) takes the pooled median.
    if (e.boundary_fixed) {
      e.variance_pooled = false;
    } else if (e.variance_pooled || !(e.v_logit > 0.0)) {
      if (std::isnan(median)) throw DataError("no multi-cluster area with positive variance to pool from");
      e.variance_pooled = true;
      e.v_logit = median;
      const double q = 1.0 / (1.0 + std::exp(-e.y_logit));
      e.v_star = median * (q * (1.0 - q)) * (q * (1.0 - q));
    }
  }
  return out;
}

std::vector<DirectEstimate> direct_estimates(const SurveyFrame& frame, FixPolicy policy) {
  return direct_estimates(frame, frame.area_ids(), policy);
}

SurveyFrame read_survey_csv(std::istream& in, const std::optional<DesignParams>& design) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("survey CSV is empty");
  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* req : {"cluster_id", "area_id", "x", "y", "household_id", "N", "Y"}) {
    if (!col.count(req)) throw DataError(std::string("survey CSV is missing column '") + req + "'");
  }
  const bool has_weight = col.count("weight") > 0;
  if (!has_weight && !design) throw DataError("survey CSV has no weight column and no design parameters were given");

  SurveyFrame frame;
  std::unordered_map<std::string, std::size_t> index;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split_csv_line(line);
    if (f.size() < header.size()) throw DataError("survey CSV line " + std::to_string(lineno) + " has too few fields");
    const std::string& cid = f[col["cluster_id"]];
    auto [it, inserted] = index.try_emplace(cid, frame.clusters.size());
    if (inserted) {
      Cluster c;
      c.id = cid;
      c.area_id = f[col["area_id"]];
      c.location = {parse_number(f[col["x"]], lineno, "x"), parse_number(f[col["y"]], lineno, "y")};
      frame.clusters.push_back(std::move(c));
    }
    Cluster& c = frame.clusters[it->second];
    if (c.area_id != f[col["area_id"]]) {
      throw DataError("survey CSV line " + std::to_string(lineno) + ": cluster " + cid + " appears in two areas");
    }
    Household h;
    h.id = f[col["household_id"]];
    h.trials = parse_number(f[col["N"]], lineno, "N");
    h.positives = parse_number(f[col["Y"]], lineno, "Y");
    h.weight = has_weight ? parse_number(f[col["weight"]], lineno, "weight") : 0.0;
    c.households.push_back(h);
  }
  if (!has_weight) {
    DesignParams d = *design;
    if (d.num_psu_sampled <= 0) d.num_psu_sampled = static_cast<int>(frame.clusters.size());
    for (auto& c : frame.clusters) {
      const double w = design_weight(d, c.sampled_households());
      for (auto& h : c.households) h.weight = w;
    }
  }
  frame.validate();
  return frame;
}

SurveyFrame read_survey_csv(const std::filesystem::path& path, const std::optional<DesignParams>& design) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open survey file " + path.string());
  return read_survey_csv(in, design);
}

void write_survey_csv(std::ostream& out, const SurveyFrame& frame) {
  out << "cluster_id,area_id,x,y,household_id,N,Y,weight\n";
  out << std::setprecision(17);
  for (const auto& c : frame.clusters) {
    for (const auto& h : c.households) {
      out << c.id << ',' << c.area_id << ',' << c.location.x << ',' << c.location.y << ',' << h.id << ','
          << h.trials << ',' << h.positives << ',' << h.weight << '\n';
    }
  }
}

void write_direct_estimates_csv(std::ostream& out, const std::vector<DirectEstimate>& estimates) {
  out << "area_id,p_hat,v_star,y_logit,v_logit,n_clusters,n_eff,boundary_fixed,variance_pooled\n";
  out << std::setprecision(17);
  for (const auto& e : estimates) {
    out << e.area_id << ',' << e.p_hat << ',' << e.v_star << ',' << e.y_logit << ',' << e.v_logit << ','
        << e.n_clusters << ',' << e.n_eff << ',' << (e.boundary_fixed ? 1 : 0) << ',' << (e.variance_pooled ? 1 : 0)
        << '\n';
  }
}

}  // namespace geoprev
