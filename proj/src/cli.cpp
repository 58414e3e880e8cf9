#include "nestiq/cli.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace nestiq::cli {

using Json = nlohmann::ordered_json;

namespace {

constexpr const char* kPilotFormat = "nestiq-pilot";
constexpr const char* kPlanFormat = "nestiq-plan";
constexpr const char* kEstimateFormat = "nestiq-estimate";

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  int depth = 0;
  for (char c : s) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (c == sep && depth == 0) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

double to_double(const std::string& raw) {
  const std::string s = trim(raw);
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, v);
  if (s.empty() || r.ec != std::errc() || r.ptr != end || !std::isfinite(v))
    throw ParseError("not a finite number: '" + s + "'");
  return v;
}

std::uint64_t to_u64(const std::string& raw) {
  const std::string s = trim(raw);
  std::uint64_t v = 0;
  const auto* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, v);
  if (s.empty() || r.ec != std::errc() || r.ptr != end) throw ParseError("not a non-negative integer: '" + s + "'");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw ParseError("expected true or false, got '" + s + "'");
}

bool is_pow2(std::size_t x) { return x > 0 && (x & (x - 1)) == 0; }

void require_pow2_ladder(const std::vector<std::size_t>& ladder, const std::string& what) {
  if (ladder.size() < 2) throw UsageError(what + " needs at least two rungs");
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    if (!is_pow2(ladder[i])) throw UsageError(what + " entries must be powers of two");
    if (i > 0 && ladder[i] <= ladder[i - 1]) throw UsageError(what + " must be increasing");
  }
}

Eigen::MatrixXd parse_matrix(const std::string& s) {
  std::vector<std::vector<double>> rows;
  for (const auto& row : split(s, ';')) rows.push_back(parse_double_list(row));
  const std::size_t cols = rows.front().size();
  Eigen::MatrixXd J(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != cols) throw ParseError("matrix rows have different lengths");
    for (std::size_t j = 0; j < cols; ++j) J(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return J;
}

stats::PriorSpec parse_prior(const std::string& s) {
  std::vector<stats::PriorComponent> comps;
  for (const auto& item : split(s, ',')) {
    const auto open = item.find('(');
    if (open == std::string::npos || item.back() != ')') throw ParseError("prior component '" + item + "' is malformed");
    const std::string name = trim(item.substr(0, open));
    const auto args = parse_double_list(item.substr(open + 1, item.size() - open - 2));
    if (args.size() != 2) throw ParseError("prior component '" + item + "' needs two parameters");
    if (name == "normal") {
      if (!(args[1] > 0.0)) throw ParseError("normal prior needs sigma > 0");
      comps.emplace_back(stats::Normal{args[0], args[1]});
    } else if (name == "lognormal") {
      if (!(args[1] > 0.0)) throw ParseError("lognormal prior needs sigma > 0");
      comps.emplace_back(stats::LogNormal{args[0], args[1]});
    } else if (name == "uniform") {
      if (!(args[0] < args[1])) throw ParseError("uniform prior needs lo < hi");
      comps.emplace_back(stats::Uniform{args[0], args[1]});
    } else {
      throw ParseError("unknown prior family '" + name + "'");
    }
  }
  return stats::PriorSpec(std::move(comps));
}

std::size_t positive_count(const std::string& s) {
  const auto v = to_u64(s);
  if (v == 0) throw ParseError("count must be positive");
  return static_cast<std::size_t>(v);
}

double positive(const std::string& s) {
  const double v = to_double(s);
  if (!(v > 0.0)) throw ParseError("value must be positive");
  return v;
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string fixed(double x, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, x);
  return buf;
}

void row(std::ostream& log, const std::string& key, const std::string& value) {
  std::string k = key;
  k.resize(std::max<std::size_t>(k.size(), 18), ' ');
  log << "  " << k << value << '\n';
}

Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

RandomizationKey master_key(std::uint64_t seed, const char* tag) { return RandomizationKey{seed, tag, {0, 0, 0}}; }

est::NestedProblem nested_problem(const ExperimentConfig& c, const oed::OEDProblem& p) {
  switch (c.estimator) {
    case EstimatorId::dlmc:
    case EstimatorId::rdlqmc:
      return oed::marginal_problem(p);
    case EstimatorId::dlmcis:
    case EstimatorId::rdlqmcis:
      return oed::importance_marginal_problem(p, c.laplace_mode);
    default:
      throw UsageError("estimator " + to_string(c.estimator) + " has no inner loop");
  }
}

/// Single-loop EIG estimate (closed-form evidence or Laplace-only).
est::EstimatorResult single_loop(const ExperimentConfig& c, const oed::OEDProblem& p, std::size_t N, std::size_t S,
                                 const RandomizationKey& key) {
  if (c.estimator == EstimatorId::mc || c.estimator == EstimatorId::rqmc)
    return oed::eig_exact_evidence(p, N, S, c.sampler, key);
  return oed::eig_laplace_only(p, N, S, c.sampler, key);
}

Json parse_json(const std::string& text, const char* format) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed ") + format + " file: " + e.what());
  }
  if (!j.is_object() || !j.contains("format") || j["format"] != format)
    throw ParseError(std::string("not a ") + format + " file");
  return j;
}

template <class T>
T field(const Json& j, const char* key) {
  if (!j.contains(key)) throw ParseError(std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ParseError(std::string("field '") + key + "' has the wrong type");
  }
}

alloc::AllocationPlan plan_for(const alloc::PilotConstants& c, double tol, double alpha, bool chebyshev) {
  if (!(tol > 0.0) || !std::isfinite(tol)) throw UsageError("tolerance must be positive");
  if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("alpha must lie in (0, 1)");
  return alloc::solve_allocation(c, tol, alpha, chebyshev);
}

Json plan_json(const alloc::AllocationPlan& plan, const Json& pilot, bool chebyshev) {
  const bool nested = field<bool>(pilot, "nested");
  Json j;
  j["format"] = kPlanFormat;
  j["config_hash"] = pilot["config_hash"];
  j["seed"] = pilot["seed"];
  j["estimator"] = pilot["estimator"];
  j["nested"] = nested;
  j["tol"] = plan.tol;
  j["alpha"] = plan.alpha;
  j["chebyshev"] = chebyshev;
  j["C_alpha"] = plan.C_alpha;
  j["kappa_star"] = plan.kappa_star;
  j["N_star"] = plan.N_star;
  if (nested) j["M_star"] = plan.M_star;
  j["h_star"] = optional_number(plan.h_star);
  j["predicted_work"] = plan.predicted_work;
  j["bias"] = plan.bias;
  j["variance"] = plan.variance;
  Json raw;
  raw["N"] = plan.N_raw;
  if (nested) raw["M"] = plan.M_raw;
  raw["h"] = optional_number(plan.h_raw);
  raw["kappa"] = plan.kappa_raw;
  raw["N_seed"] = plan.N_seed;
  j["raw"] = raw;
  return j;
}

void log_plan(std::ostream& log, const alloc::AllocationPlan& plan, bool nested) {
  log << "plan\n";
  row(log, "tol", fixed(plan.tol));
  row(log, "C_alpha", fixed(plan.C_alpha, 7));
  row(log, "kappa*", fixed(plan.kappa_star, 4));
  row(log, "N*", std::to_string(plan.N_star));
  if (nested) row(log, "M*", std::to_string(plan.M_star));
  if (plan.h_star) row(log, "h*", fixed(*plan.h_star));
  row(log, "predicted work", fixed(plan.predicted_work));
}

void require_matching_config(const Json& j, const ExperimentConfig& c, const char* what) {
  if (field<std::string>(j, "config_hash") != config_hash(c))
    throw UsageError(std::string(what) + " was produced for a different config");
  if (field<std::string>(j, "estimator") != to_string(c.estimator))
    throw UsageError(std::string(what) + " was produced for a different estimator");
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string to_string(EstimatorId id) {
  switch (id) {
    case EstimatorId::mc: return "mc";
    case EstimatorId::rqmc: return "rqmc";
    case EstimatorId::dlmc: return "dlmc";
    case EstimatorId::dlmcis: return "dlmcis";
    case EstimatorId::rdlqmc: return "rdlqmc";
    case EstimatorId::rdlqmcis: return "rdlqmcis";
    case EstimatorId::mcla: return "mcla";
    case EstimatorId::rqmcla: return "rqmcla";
  }
  return "?";
}

EstimatorId estimator_from_string(const std::string& s) {
  for (auto id : {EstimatorId::mc, EstimatorId::rqmc, EstimatorId::dlmc, EstimatorId::dlmcis, EstimatorId::rdlqmc,
                  EstimatorId::rdlqmcis, EstimatorId::mcla, EstimatorId::rqmcla})
    if (to_string(id) == s) return id;
  throw ParseError("unknown estimator '" + s + "'");
}

bool is_nested(EstimatorId id) {
  return id == EstimatorId::dlmc || id == EstimatorId::dlmcis || id == EstimatorId::rdlqmc ||
         id == EstimatorId::rdlqmcis;
}

bool is_iid(EstimatorId id) {
  return id == EstimatorId::mc || id == EstimatorId::dlmc || id == EstimatorId::dlmcis || id == EstimatorId::mcla;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  if (trim(s).empty()) return out;
  for (const auto& item : split(s, ',')) out.push_back(to_double(item));
  return out;
}

std::vector<std::size_t> parse_count_list(const std::string& s) {
  std::vector<std::size_t> out;
  if (trim(s).empty()) return out;
  for (const auto& item : split(s, ',')) out.push_back(positive_count(item));
  return out;
}

std::string format_double(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const ExperimentConfig& config) { return hex16(fnv1a64(config.canonical)); }

ExperimentConfig parse_config(const std::string& text) {
  std::map<std::string, std::pair<std::string, std::size_t>> entries;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", lineno);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError("empty key", lineno);
    if (value.empty()) throw ParseError("empty value for '" + key + "'", lineno);
    if (!entries.emplace(key, std::make_pair(value, lineno)).second)
      throw ParseError("key '" + key + "' given twice", lineno);
  }

  ExperimentConfig c;
  std::optional<std::string> prior_text, design_values_text, noise_text, sampler_text;
  bool design_given = false, reading_given = false;

  using Setter = std::function<void(const std::string&)>;
  const std::map<std::string, Setter> setters = {
      {"model", [&](const std::string& v) {
         if (v != "pk" && v != "linear_gaussian" && v != "synthetic") throw ParseError("unknown model '" + v + "'");
         c.model = v;
       }},
      {"model.J", [&](const std::string& v) { c.J = parse_matrix(v); }},
      {"model.C", [&](const std::string& v) { c.perturbation = to_double(v); }},
      {"model.eta", [&](const std::string& v) { c.eta = positive(v); }},
      {"model.gamma", [&](const std::string& v) {
         c.gamma = to_double(v);
         if (c.gamma < 0.0) throw ParseError("gamma must be non-negative");
       }},
      {"model.h", [&](const std::string& v) { c.h = positive(v); }},
      {"design", [&](const std::string& v) {
         if (v != "geom" && v != "even" && v != "explicit") throw ParseError("unknown design '" + v + "'");
         c.design = v;
         design_given = true;
       }},
      {"design.values", [&](const std::string& v) { design_values_text = v; }},
      {"prior", [&](const std::string& v) { prior_text = v; }},
      {"prior.reading", [&](const std::string& v) {
         try {
           c.prior_reading = models::prior_reading_from_string(v);
         } catch (const DomainError& e) {
           throw ParseError(e.what());
         }
         reading_given = true;
       }},
      {"noise.variance", [&](const std::string& v) { noise_text = v; }},
      {"N_e", [&](const std::string& v) { c.N_e = positive_count(v); }},
      {"truncation.enabled", [&](const std::string& v) { c.truncation.enabled = to_bool(v); }},
      {"truncation.p", [&](const std::string& v) { c.truncation.p = positive(v); }},
      {"truncation.tol", [&](const std::string& v) {
         c.truncation.tol = positive(v);
         if (!(c.truncation.tol < 1.0)) throw ParseError("truncation.tol must be below 1");
       }},
      {"estimator", [&](const std::string& v) { c.estimator = estimator_from_string(v); }},
      {"sampler", [&](const std::string& v) { sampler_text = v; }},
      {"sampler.outer_lattice", [&](const std::string& v) { c.sampler.outer_lattice = parse_double_list(v); }},
      {"sampler.inner_lattice", [&](const std::string& v) { c.sampler.inner_lattice = parse_double_list(v); }},
      {"laplace.mode", [&](const std::string& v) {
         try {
           c.laplace_mode = oed::laplace_mode_from_string(v);
         } catch (const DomainError& e) {
           throw ParseError(e.what());
         }
       }},
      {"seed", [&](const std::string& v) { c.seed = to_u64(v); }},
      {"pilot.outer_ladder", [&](const std::string& v) { c.pilot.outer_ladder = parse_count_list(v); }},
      {"pilot.outer_M", [&](const std::string& v) { c.pilot.outer_M = positive_count(v); }},
      {"pilot.S", [&](const std::string& v) { c.pilot.S = positive_count(v); }},
      {"pilot.inner_ladder", [&](const std::string& v) { c.pilot.inner_ladder = parse_count_list(v); }},
      {"pilot.inner_N", [&](const std::string& v) { c.pilot.inner_N = positive_count(v); }},
      {"pilot.R", [&](const std::string& v) { c.pilot.R = positive_count(v); }},
      {"discretization.C_disc", [&](const std::string& v) {
         c.C_disc = to_double(v);
         if (c.C_disc < 0.0) throw ParseError("C_disc must be non-negative");
       }},
      {"discretization.h_max", [&](const std::string& v) { c.h_max = positive(v); }},
      {"discretization.h_min", [&](const std::string& v) {
         c.h_min = to_double(v);
         if (c.h_min < 0.0) throw ParseError("h_min must be non-negative");
       }},
      {"discretization.bias_split", [&](const std::string& v) {
         c.bias_split = to_double(v);
         if (!(c.bias_split > 0.0 && c.bias_split < 1.0)) throw ParseError("bias_split must lie in (0, 1)");
       }},
  };

  std::string canonical;
  for (const auto& [key, entry] : entries) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw ParseError("unknown key '" + key + "'", entry.second);
    try {
      it->second(entry.first);
    } catch (const ParseError& e) {
      throw ParseError(std::string(e.what()) + " (key '" + key + "')", entry.second);
    }
    canonical += key + " = " + entry.first + "\n";
  }
  c.canonical = canonical;

  // Model-dependent defaults and cross-key checks.
  if (c.model == "pk") {
    if (prior_text) throw ParseError("the pk model fixes its prior; use prior.reading");
    if (entries.count("model.J")) throw ParseError("model.J does not apply to the pk model");
    c.prior = models::pk_prior(c.prior_reading);
    const auto designs = models::pk_designs();
    if (c.design == "geom") c.design_values = designs.geometric;
    else if (c.design == "even") c.design_values = designs.even;
  } else {
    if (reading_given) throw ParseError("prior.reading applies to the pk model only");
    if (c.J.size() == 0) c.J = Eigen::MatrixXd::Identity(1, 1);
    if (c.model == "linear_gaussian") {
      if (design_given || design_values_text) throw ParseError("the linear model takes no design");
      c.design = "none";
    } else {
      if (design_given && c.design != "explicit") throw ParseError("the synthetic model needs an explicit design");
      c.design = "explicit";
    }
    const auto d = static_cast<std::size_t>(c.J.cols());
    c.prior = prior_text ? parse_prior(*prior_text)
                         : stats::PriorSpec(std::vector<stats::PriorComponent>(d, stats::Normal{0.0, 1.0}));
    if (c.prior.dimension() != d) throw ParseError("prior dimension does not match model.J");
  }
  if (c.design == "explicit") {
    if (design_values_text) c.design_values = parse_double_list(*design_values_text);
    else if (c.model == "synthetic") c.design_values.assign(static_cast<std::size_t>(c.J.rows()), 0.0);
    else throw ParseError("design = explicit needs design.values");
  } else if (design_values_text) {
    throw ParseError("design.values needs design = explicit");
  }
  if (c.model == "synthetic" && c.design_values.size() != static_cast<std::size_t>(c.J.rows()))
    throw ParseError("the synthetic design needs one value per output");
  if (c.model != "synthetic") {
    for (const char* k : {"model.C", "model.eta", "model.gamma", "model.h"})
      if (entries.count(k)) throw ParseError(std::string(k) + " applies to the synthetic model only");
  }

  const std::size_t dy = c.model == "pk" ? c.design_values.size() : static_cast<std::size_t>(c.J.rows());
  const std::vector<double> nv = noise_text ? parse_double_list(*noise_text)
                                            : std::vector<double>{c.model == "pk" ? 1e-2 : 1.0};
  if (nv.size() == 1) c.noise_variances.assign(dy, nv[0]);
  else if (nv.size() == dy) c.noise_variances = nv;
  else throw ParseError("noise.variance needs one value or one per output");
  for (double v : c.noise_variances)
    if (!(v > 0.0)) throw ParseError("noise variances must be positive");

  if (sampler_text) {
    try {
      c.sampler.kind = est::sampler_from_string(*sampler_text);
    } catch (const DomainError& e) {
      throw ParseError(e.what());
    }
  } else {
    c.sampler.kind = is_iid(c.estimator) ? est::SamplerKind::mc : est::SamplerKind::sobol_owen;
  }
  if (is_iid(c.estimator) && c.sampler.kind != est::SamplerKind::mc)
    throw ParseError("estimator " + to_string(c.estimator) + " uses iid sampling; drop the sampler key or set mc");
  if (!is_iid(c.estimator) && c.sampler.kind == est::SamplerKind::mc)
    throw ParseError("estimator " + to_string(c.estimator) + " needs a randomized low-discrepancy sampler");
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

oed::OEDProblem build_problem(const ExperimentConfig& c) {
  oed::OEDProblem p;
  if (c.model == "pk") p.model = std::make_shared<models::PharmacokineticModel>();
  else if (c.model == "linear_gaussian") p.model = std::make_shared<models::LinearGaussianModel>(c.J);
  else p.model = std::make_shared<models::SyntheticDiscretizedModel>(c.J, c.perturbation, c.eta, c.gamma);
  p.design = c.design_values;
  p.prior = c.prior;
  p.noise_variances = c.noise_variances;
  p.N_e = c.N_e;
  p.truncation = c.truncation;
  p.h = c.h;
  if (c.model == "synthetic" && !p.h) p.h = c.h_max;
  p.validate();
  return p;
}

est::EstimatorResult run_estimator(const ExperimentConfig& c, const est::Counts& counts, std::optional<double> h,
                                   std::uint64_t seed) {
  oed::OEDProblem p = build_problem(c);
  if (h) p.h = h;
  const RandomizationKey key = master_key(seed, "estimate");
  if (!is_nested(c.estimator)) return single_loop(c, p, counts.N, counts.S, key);
  switch (c.estimator) {
    case EstimatorId::dlmc:
    case EstimatorId::rdlqmc:
      return oed::eig_nested(p, counts, c.sampler, key);
    default:
      return oed::eig_importance_sampled(p, counts, c.sampler, c.laplace_mode, key);
  }
}

std::string cmd_pilot(const ExperimentConfig& c, const PilotOptions& o, std::ostream& log) {
  const bool nested = is_nested(c.estimator);
  const auto outer_ladder = o.outer_ladder.value_or(c.pilot.outer_ladder);
  const auto inner_ladder = o.inner_ladder.value_or(c.pilot.inner_ladder);
  const std::size_t S = o.S.value_or(c.pilot.S);
  const std::size_t R = o.R.value_or(c.pilot.R);
  const std::uint64_t seed = o.seed.value_or(c.seed);
  if (S < 2) throw UsageError("the pilot needs S >= 2 outer randomizations for a variance");
  require_pow2_ladder(outer_ladder, "outer ladder");
  if (nested) {
    if (R < 2) throw UsageError("the pilot needs R >= 2 inner randomizations for a variance");
    require_pow2_ladder(inner_ladder, "inner ladder");
  }

  const oed::OEDProblem p = build_problem(c);
  const RandomizationKey key = master_key(seed, "pilot");
  alloc::PilotConstants k;
  if (nested) {
    const est::NestedProblem np = nested_problem(c, p);
    k = alloc::run_pilot(np, outer_ladder, c.pilot.outer_M, S, inner_ladder, c.pilot.inner_N, R, key, c.sampler);
  } else {
    std::vector<double> v;
    for (std::size_t N : outer_ladder) {
      const auto r = single_loop(c, p, N, S, key);
      v.push_back(static_cast<double>(S) * *r.variance_of_mean);
    }
    const auto fit = alloc::fit_outer_rates(outer_ladder, v);
    k.C_Q1 = fit.C_Q1;
    k.beta = fit.beta;
    k.meta.outer_ladder = outer_ladder;
    k.meta.outer_S = S;
    k.meta.outer_rungs = fit.rungs;
    k.meta.outer_residual = fit.residual;
    k.meta.seed = seed;
    k.meta.sampler = est::to_string(c.sampler.kind);
    k.gamma = 0.0;
  }
  k.C_disc = c.C_disc;
  k.h_max = c.h_max;
  k.h_min = c.h_min;
  k.bias_split = c.bias_split;
  if (c.model == "synthetic") {
    k.eta = c.eta;
    k.gamma = c.gamma;
  }
  k.validate();

  Json j;
  j["format"] = kPilotFormat;
  j["config_hash"] = config_hash(c);
  j["seed"] = seed;
  j["estimator"] = to_string(c.estimator);
  j["nested"] = nested;
  j["sampler"] = est::to_string(c.sampler.kind);
  Json constants;
  constants["C_Q1"] = k.C_Q1;
  constants["beta"] = k.beta;
  constants["C_Q2"] = k.C_Q2;
  constants["delta"] = k.delta;
  constants["C_Q3"] = k.C_Q3;
  j["constants"] = constants;
  Json disc;
  disc["C_disc"] = k.C_disc;
  disc["eta"] = k.eta;
  disc["gamma"] = k.gamma;
  disc["h_max"] = k.h_max;
  disc["h_min"] = k.h_min;
  disc["bias_split"] = k.bias_split;
  j["discretization"] = disc;
  Json settings;
  settings["outer_ladder"] = outer_ladder;
  settings["outer_M"] = nested ? c.pilot.outer_M : 0;
  settings["S"] = S;
  if (nested) {
    settings["inner_ladder"] = inner_ladder;
    settings["inner_N"] = c.pilot.inner_N;
    settings["R"] = R;
  }
  j["settings"] = settings;
  Json fit;
  fit["outer_residual"] = k.meta.outer_residual;
  fit["inner_variance_residual"] = k.meta.inner_variance_residual;
  fit["inner_bias_residual"] = k.meta.inner_bias_residual;
  fit["bias_low_confidence"] = k.meta.bias_low_confidence;
  fit["reference_M"] = k.meta.reference_M;
  j["fit"] = fit;
  Json orungs = Json::array();
  for (const auto& r : k.meta.outer_rungs) orungs.push_back(Json{{"N", r.N}, {"variance", r.variance}});
  j["outer_rungs"] = orungs;
  Json irungs = Json::array();
  for (const auto& r : k.meta.inner_rungs)
    irungs.push_back(Json{{"M", r.M}, {"variance", r.variance}, {"bias", r.bias}, {"bias_stderr", r.bias_stderr}});
  j["inner_rungs"] = irungs;

  log << "pilot (" << to_string(c.estimator) << ", config " << config_hash(c) << ", seed " << seed << ")\n";
  row(log, "C_Q1", fixed(k.C_Q1));
  row(log, "beta", fixed(k.beta, 4));
  if (nested) {
    row(log, "C_Q2", fixed(k.C_Q2));
    row(log, "delta", fixed(k.delta, 4));
    row(log, "C_Q3", fixed(k.C_Q3) + (k.meta.bias_low_confidence ? "  (bias below noise)" : ""));
  }
  for (const auto& r : k.meta.outer_rungs) row(log, "  N=" + std::to_string(r.N), "var " + fixed(r.variance, 4));
  for (const auto& r : k.meta.inner_rungs)
    row(log, "  M=" + std::to_string(r.M),
        "var " + fixed(r.variance, 4) + "  bias " + fixed(r.bias, 3) + " +- " + fixed(r.bias_stderr, 2));
  return j.dump(2) + "\n";
}

alloc::PilotConstants read_pilot(const std::string& text) {
  const Json j = parse_json(text, kPilotFormat);
  alloc::PilotConstants k;
  const Json& c = j.at("constants");
  k.C_Q1 = field<double>(c, "C_Q1");
  k.beta = field<double>(c, "beta");
  k.C_Q2 = field<double>(c, "C_Q2");
  k.delta = field<double>(c, "delta");
  k.C_Q3 = field<double>(c, "C_Q3");
  const Json& d = j.at("discretization");
  k.C_disc = field<double>(d, "C_disc");
  k.eta = field<double>(d, "eta");
  k.gamma = field<double>(d, "gamma");
  k.h_max = field<double>(d, "h_max");
  k.h_min = field<double>(d, "h_min");
  k.bias_split = field<double>(d, "bias_split");
  k.meta.seed = field<std::uint64_t>(j, "seed");
  k.meta.sampler = field<std::string>(j, "sampler");
  k.meta.bias_low_confidence = field<bool>(j.at("fit"), "bias_low_confidence");
  try {
    k.validate();
  } catch (const DomainError& e) {
    throw ParseError(std::string("pilot constants rejected: ") + e.what());
  }
  return k;
}

std::string cmd_plan(const std::string& pilot, const PlanOptions& o, std::ostream& log) {
  const Json pj = parse_json(pilot, kPilotFormat);
  const auto k = read_pilot(pilot);
  const auto plan = plan_for(k, o.tol, o.alpha, o.chebyshev);
  log_plan(log, plan, field<bool>(pj, "nested"));
  return plan_json(plan, pj, o.chebyshev).dump(2) + "\n";
}

std::string cmd_estimate(const ExperimentConfig& c, const EstimateOptions& o, std::ostream& log) {
  const bool nested = is_nested(c.estimator);
  if (!o.plan && !o.N) throw UsageError("estimate needs --plan or --N");
  if (o.plan && (o.N || o.M)) throw UsageError("--plan and --N/--M are exclusive");
  est::Counts counts;
  std::optional<double> h = c.h;
  if (o.plan) {
    const Json pj = parse_json(*o.plan, kPlanFormat);
    require_matching_config(pj, c, "the plan");
    counts.N = field<std::size_t>(pj, "N_star");
    if (nested) counts.M = field<std::size_t>(pj, "M_star");
    if (!pj.at("h_star").is_null()) h = field<double>(pj, "h_star");
  } else {
    counts.N = *o.N;
    if (nested) {
      if (!o.M) throw UsageError("estimator " + to_string(c.estimator) + " needs --M");
      counts.M = *o.M;
    } else if (o.M || o.R) {
      throw UsageError("estimator " + to_string(c.estimator) + " has no inner loop; drop --M/--R");
    }
  }
  counts.S = o.S.value_or(1);
  counts.R = nested ? o.R.value_or(1) : 1;
  if (counts.N < 1 || counts.M < 1 || counts.S < 1 || counts.R < 1) throw UsageError("counts must be positive");
  const std::uint64_t seed = o.seed.value_or(c.seed);

  const auto r = run_estimator(c, counts, h, seed);

  Json j;
  j["format"] = kEstimateFormat;
  j["config_hash"] = config_hash(c);
  j["seed"] = seed;
  j["estimator"] = to_string(c.estimator);
  j["sampler"] = est::to_string(c.sampler.kind);
  j["estimate"] = r.estimate;
  j["stderr"] = optional_number(r.standard_error);
  j["variance_of_mean"] = optional_number(r.variance_of_mean);
  Json cj;
  cj["N"] = counts.N;
  if (nested) cj["M"] = counts.M;
  cj["S"] = counts.S;
  if (nested) cj["R"] = counts.R;
  j["counts"] = cj;
  j["h"] = optional_number(c.model == "synthetic" ? std::optional<double>(h.value_or(c.h_max)) : std::nullopt);
  j["work"] = r.work;

  log << "estimate (" << to_string(c.estimator) << ", config " << config_hash(c) << ", seed " << seed << ")\n";
  row(log, "EIG", fixed(r.estimate, 8));
  row(log, "stderr", r.standard_error ? fixed(*r.standard_error, 4) : "n/a (single randomization)");
  row(log, "N", std::to_string(counts.N));
  if (nested) row(log, "M", std::to_string(counts.M));
  row(log, "S", std::to_string(counts.S));
  if (nested) row(log, "R", std::to_string(counts.R));
  row(log, "work", fixed(r.work));
  return j.dump(2) + "\n";
}

std::string cmd_sweep(const ExperimentConfig& c, const std::string& pilot, const SweepOptions& o, std::ostream& log) {
  const Json pj = parse_json(pilot, kPilotFormat);
  require_matching_config(pj, c, "the pilot");
  const auto k = read_pilot(pilot);
  const bool nested = is_nested(c.estimator);
  const std::uint64_t seed = o.seed.value_or(c.seed);

  std::string csv = "tol,kappa_star,N_star,M_star,h_star,predicted_work,estimate,stderr,realized_work,seed,error\n";
  log << "sweep (" << to_string(c.estimator) << ", config " << config_hash(c) << ")\n";
  log << "  tol          N*        M*    estimate      work\n";
  for (std::size_t i = 0; i < o.tols.size(); ++i) {
    const double tol = o.tols[i];
    const std::uint64_t row_seed = seed + i;
    std::vector<std::string> f(11);
    f[0] = format_double(tol);
    f[9] = std::to_string(row_seed);
    try {
      const auto plan = plan_for(k, tol, o.alpha, o.chebyshev);
      f[1] = format_double(plan.kappa_star);
      f[2] = std::to_string(plan.N_star);
      if (nested) f[3] = std::to_string(plan.M_star);
      if (plan.h_star) f[4] = format_double(*plan.h_star);
      f[5] = format_double(plan.predicted_work);
      const est::Counts counts{plan.N_star, nested ? plan.M_star : 1, 1, 1};
      const auto r = run_estimator(c, counts, plan.h_star ? plan.h_star : c.h, row_seed);
      f[6] = format_double(r.estimate);
      if (r.standard_error) f[7] = format_double(*r.standard_error);
      f[8] = format_double(r.work);
      char buf[160];
      std::snprintf(buf, sizeof buf, "  %-10.4g %-9zu %-5s %-12.8g %.4g\n", tol, plan.N_star, f[3].c_str(),
                    r.estimate, r.work);
      log << buf;
    } catch (const std::exception& e) {
      f[10] = e.what();
      log << "  " << f[0] << "  failed: " << e.what() << '\n';
    }
    for (std::size_t m = 0; m < f.size(); ++m) csv += (m ? "," : "") + csv_field(f[m]);
    csv += '\n';
  }
  return csv;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const InfeasibleError*>(&e)) return 3;
  if (dynamic_cast<const NumericalError*>(&e) || dynamic_cast<const FitQualityError*>(&e)) return 4;
  if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
      dynamic_cast<const DomainError*>(&e))
    return 2;
  return 1;
}

}  // namespace nestiq::cli
