#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clusterlab/estimators.hpp"
#include "clusterlab/functionals.hpp"
#include "clusterlab/generators.hpp"
#include "clusterlab/iid_oracle.hpp"
#include "clusterlab/io.hpp"
#include "clusterlab/parallel.hpp"
#include "clusterlab/processes.hpp"
#include "clusterlab/tail_models.hpp"

namespace clusterlab {

using json = nlohmann::json;

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Schema

enum class FieldType { number, integer, string, boolean, number_array, integer_array, string_array, object, any };

inline const char* to_string(FieldType t) {
  switch (t) {
  case FieldType::number: return "number";
  case FieldType::integer: return "integer";
  case FieldType::string: return "string";
  case FieldType::boolean: return "boolean";
  case FieldType::number_array: return "array of numbers";
  case FieldType::integer_array: return "array of integers";
  case FieldType::string_array: return "array of strings";
  case FieldType::object: return "object";
  case FieldType::any: return "any";
  }
  return "?";
}

struct Field {
  std::string name;
  FieldType type = FieldType::number;
  json def = nullptr;     // null: no default
  bool required = false;
  double lo = -std::numeric_limits<double>::infinity();
  bool lo_open = false;   // value must be > lo rather than >= lo
  double hi = std::numeric_limits<double>::infinity();
  std::vector<std::string> choices;
  std::string help;
};

namespace schema {

inline Field num(std::string name, json def, std::string help, double lo = -INFINITY, bool lo_open = false,
                 double hi = INFINITY) {
  return {std::move(name), FieldType::number, std::move(def), false, lo, lo_open, hi, {}, std::move(help)};
}
inline Field pos(std::string name, json def, std::string help) { return num(std::move(name), std::move(def), std::move(help), 0.0, true); }
inline Field prob(std::string name, json def, std::string help) {
  return num(std::move(name), std::move(def), std::move(help), 0.0, true, 1.0);
}
inline Field integer(std::string name, json def, std::string help, double lo = 0.0) {
  return {std::move(name), FieldType::integer, std::move(def), false, lo, false, INFINITY, {}, std::move(help)};
}
inline Field str(std::string name, json def, std::string help, std::vector<std::string> choices = {}) {
  return {std::move(name), FieldType::string, std::move(def), false, -INFINITY, false, INFINITY, std::move(choices),
          std::move(help)};
}
inline Field boolean(std::string name, json def, std::string help) {
  return {std::move(name), FieldType::boolean, std::move(def), false, -INFINITY, false, INFINITY, {}, std::move(help)};
}
inline Field typed(std::string name, FieldType t, json def, std::string help, double lo = -INFINITY, bool lo_open = false) {
  return {std::move(name), t, std::move(def), false, lo, lo_open, INFINITY, {}, std::move(help)};
}

inline void check_number(const Field& f, double v, const std::string& path) {
  if (!std::isfinite(v)) throw ConfigError(path + ": must be finite");
  if (f.lo_open ? !(v > f.lo) : !(v >= f.lo))
    throw ConfigError(path + ": must be " + (f.lo_open ? "> " : ">= ") + detail::format_number(f.lo) + ", got " +
                      detail::format_number(v));
  if (f.hi < INFINITY && !(f.lo_open && f.hi == 1.0 ? v < f.hi : v <= f.hi))
    throw ConfigError(path + ": must be " + (f.lo_open && f.hi == 1.0 ? "< " : "<= ") + detail::format_number(f.hi) +
                      ", got " + detail::format_number(v));
}

inline void check_value(const Field& f, const json& v, const std::string& path) {
  auto need = [&](bool ok) {
    if (!ok) throw ConfigError(path + ": expected " + to_string(f.type) + ", got " + v.dump());
  };
  auto check_int = [&](const json& x, const std::string& p) {
    if (!x.is_number_integer()) throw ConfigError(p + ": expected integer, got " + x.dump());
    if (x.is_number_unsigned()) {
      check_number(f, static_cast<double>(x.get<std::uint64_t>()), p);
    } else {
      check_number(f, static_cast<double>(x.get<std::int64_t>()), p);
    }
  };
  switch (f.type) {
  case FieldType::number: need(v.is_number()); check_number(f, v.get<double>(), path); break;
  case FieldType::integer: check_int(v, path); break;
  case FieldType::string:
    need(v.is_string());
    if (!f.choices.empty() && std::find(f.choices.begin(), f.choices.end(), v.get<std::string>()) == f.choices.end()) {
      std::string list;
      for (const auto& c : f.choices) list += (list.empty() ? "" : ", ") + c;
      throw ConfigError(path + ": '" + v.get<std::string>() + "' is not one of {" + list + "}");
    }
    break;
  case FieldType::boolean: need(v.is_boolean()); break;
  case FieldType::number_array:
    need(v.is_array());
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ConfigError(path + "[" + std::to_string(i) + "]: expected number");
      check_number(f, v[i].get<double>(), path + "[" + std::to_string(i) + "]");
    }
    break;
  case FieldType::integer_array:
    need(v.is_array());
    for (std::size_t i = 0; i < v.size(); ++i) check_int(v[i], path + "[" + std::to_string(i) + "]");
    break;
  case FieldType::string_array:
    need(v.is_array());
    for (const auto& x : v) need(x.is_string());
    break;
  case FieldType::object: need(v.is_object()); break;
  case FieldType::any: break;
  }
}

// Validates `obj` against `fields`, rejects unknown keys and fills defaults.
inline json resolve(const json& obj, const std::vector<Field>& fields, const std::string& path) {
  if (!obj.is_object()) throw ConfigError(path + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::none_of(fields.begin(), fields.end(), [&](const Field& f) { return f.name == key; })) {
      std::string known;
      for (const auto& f : fields) known += (known.empty() ? "" : ", ") + f.name;
      throw ConfigError(path + ": unknown key '" + key + "' (allowed: " + known + ")");
    }
  }
  json out = json::object();
  for (const auto& f : fields) {
    const std::string p = path + "." + f.name;
    if (obj.contains(f.name)) {
      check_value(f, obj.at(f.name), p);
      out[f.name] = obj.at(f.name);
    } else if (f.required) {
      throw ConfigError(p + ": required");
    } else if (!f.def.is_null()) {
      out[f.name] = f.def;
    }
  }
  return out;
}

inline json describe(const std::vector<Field>& fields) {
  json out = json::object();
  for (const auto& f : fields) {
    json d{{"type", to_string(f.type)}, {"help", f.help}};
    if (!f.def.is_null()) d["default"] = f.def;
    if (f.required) d["required"] = true;
    if (f.lo > -INFINITY) d[f.lo_open ? "exclusive_minimum" : "minimum"] = f.lo;
    if (f.hi < INFINITY) d["maximum"] = f.hi;
    if (!f.choices.empty()) d["enum"] = f.choices;
    out[f.name] = d;
  }
  return out;
}

} // namespace schema

// ---------------------------------------------------------------------------
// Results

struct Check {
  std::string name;
  double value = 0.0;
  double target = 0.0;
  double tolerance = 0.0;
  std::string rule; // "abs_err<=tol", "rel_err<=tol", "value<=tol", ...
  bool pass = false;
};

inline void to_json(json& j, const Check& c) {
  j = json{{"name", c.name}, {"value", c.value}, {"target", c.target}, {"tolerance", c.tolerance}, {"rule", c.rule},
           {"pass", c.pass}};
}

inline Check check_abs(std::string name, double value, double target, double tol) {
  return {std::move(name), value, target, tol, "|value-target|<=tol", std::abs(value - target) <= tol};
}
inline Check check_rel(std::string name, double value, double target, double tol) {
  return {std::move(name), value, target, tol, "|value-target|/|target|<=tol",
          std::abs(value - target) <= tol * std::abs(target)};
}
inline Check check_le(std::string name, double value, double tol) {
  return {std::move(name), value, 0.0, tol, "value<=tol", value <= tol};
}
inline Check check_ge(std::string name, double value, double tol) {
  return {std::move(name), value, 0.0, tol, "value>=tol", value >= tol};
}

struct ExperimentResult {
  json outputs = json::object();
  json targets = json::object();
  std::vector<Check> checks;
  std::vector<std::string> warnings;
  std::map<std::string, CsvTable> tables;          // detail tables, keyed by file stem
  std::map<std::string, std::string> raw_files;    // extra files written verbatim

  bool pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
  }
};

struct RunContext {
  json params;
  json tolerances;
  GeneratorModel model;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

// ---------------------------------------------------------------------------
// Shared parameter helpers

namespace detail {

inline std::size_t get_size(const json& j, const char* key) { return j.at(key).get<std::size_t>(); }

inline std::optional<double> get_opt(const json& j, const char* key) {
  if (!j.contains(key)) return std::nullopt;
  return j.at(key).get<double>();
}

inline std::vector<ClusterFunctional> parse_functionals(const json& list) {
  std::vector<ClusterFunctional> out;
  for (const auto& s : list) {
    try {
      out.push_back(builtin(s.get<std::string>()));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("params.functionals: ") + e.what());
    }
  }
  if (out.empty()) throw ConfigError("params.functionals: at least one functional is required");
  return out;
}

// Threshold from exactly one of params.u / params.w.
inline double resolve_level(const GeneratorModel& model, const json& p) {
  const bool has_u = p.contains("u"), has_w = p.contains("w");
  if (has_u == has_w) throw ConfigError("params: give exactly one of 'u' (level) or 'w' (exceedance probability)");
  if (has_u) return p.at("u").get<double>();
  return level_for_w(model, p.at("w").get<double>());
}

inline const char* regime_tag(double r, double w, double gamma) {
  if (std::pow(r, gamma + 1.0) * w >= 1.0) return "large";
  if (std::pow(r, 2.0 * gamma + 1.0) * w <= 1.0) return "small";
  return "moderate";
}

inline int regime_rank(const std::string& tag) { return tag == "small" ? 0 : (tag == "moderate" ? 1 : 2); }

} // namespace detail

// ---------------------------------------------------------------------------
// Experiments

namespace experiments {

using namespace schema;

inline std::vector<Field> level_fields() {
  return {pos("u", nullptr, "threshold level (give u or w)"), prob("w", nullptr, "target exceedance probability P(X_0 > u)")};
}

template <class... V>
std::vector<Field> join(std::vector<Field> a, V... rest) {
  (a.insert(a.end(), rest.begin(), rest.end()), ...);
  return a;
}

// oracle_table: closed forms against brute-force enumeration.
inline std::vector<Field> oracle_table_params() {
  return {integer("r_min", 2, "smallest block size", 1), integer("r_max", 12, "largest block size (<= 24)", 1),
          typed("w_list", FieldType::number_array, json{0.1, 0.3, 0.5}, "exceedance probabilities", 0.0, true),
          typed("gammas", FieldType::number_array, json{0.0, 1.0, 2.0}, "length-moment exponents", 0.0)};
}
inline std::vector<Field> oracle_table_tol() { return {num("max_err", 1e-12, "max |closed-enumerated|/max(1,|enumerated|)", 0.0)}; }

inline ExperimentResult oracle_table(const RunContext& ctx) {
  const auto& p = ctx.params;
  const auto r_min = detail::get_size(p, "r_min"), r_max = detail::get_size(p, "r_max");
  if (r_min > r_max) throw ConfigError("params: r_min must not exceed r_max");
  if (r_max > iid::kMaxEnumerationLength) throw ConfigError("params.r_max: enumeration is limited to r <= 24");
  for (double w : p.at("w_list").get<std::vector<double>>())
    if (!(w < 1.0)) throw ConfigError("params.w_list: values must lie in (0,1)");
  ExperimentResult res;
  CsvTable t({"r", "w", "statistic", "closed_form", "enumerated", "err"});
  double max_err = 0.0;
  auto add = [&](std::size_t r, double w, const std::string& stat, double a, double b) {
    const double err = std::abs(a - b) / std::max(1.0, std::abs(b));
    max_err = std::max(max_err, err);
    t.add({static_cast<std::uint64_t>(r), w, stat, a, b, err});
  };
  auto st = [](double s, double tt) { return s * tt; };
  for (std::size_t r = r_min; r <= r_max; ++r)
    for (double w : p.at("w_list").get<std::vector<double>>()) {
      const auto f = iid::closed_form_length_pmf(r, w);
      const auto g = iid::enumerated_length_pmf(r, w);
      for (std::size_t i = 0; i < r; ++i) add(r, w, "pmf(" + std::to_string(i + 1) + ")", f[i], g[i]);
      for (double gamma : p.at("gammas").get<std::vector<double>>())
        add(r, w, "E[L^" + detail::format_number(gamma) + " 1A]", iid::length_moment(r, w, gamma),
            iid::enumerate_patterns(r, w, iid::as_pattern(length_pow(gamma))).expectation_on_a);
      add(r, w, "E[t1 1A]", iid::first_jump_moment(r, w, 1.0),
          iid::enumerate_patterns(r, w, iid::as_pattern(tmin())).expectation_on_a);
      add(r, w, "E[t1 tN 1A]", iid::joint_jump_moment(r, w, st),
          iid::enumerate_patterns(r, w, iid::joint_jump_pattern(st)).expectation_on_a);
    }
  res.outputs = {{"rows", t.rows()}, {"max_err", max_err}};
  res.checks.push_back(check_le("max_err", max_err, ctx.tolerances.at("max_err").get<double>()));
  res.tables.emplace("oracle_table", std::move(t));
  return res;
}

// moment_rate: exact iid rate table with per-row checks.
inline std::vector<Field> moment_rate_params() {
  return {typed("r_list", FieldType::integer_array, json{100, 1000, 10000}, "block sizes", 1),
          pos("w_scale", 1e-6, "w = w_scale * r^(-w_exponent)"), num("w_exponent", 0.0, "see w_scale"),
          num("gamma", 1.0, "moment exponent", 0.0)};
}
inline std::vector<Field> moment_rate_tol() {
  return {typed("checks", FieldType::any, json::array(),
                "array of {r, statistic: length_small|length_large|first_jump|joint_posdiff, tol}")};
}

inline const char* kStatJointPosdiff = "E[(tN-t1)^g 1A]/(r^(g+2) w)";

inline ExperimentResult moment_rate(const RunContext& ctx) {
  if (ctx.model.kind != ModelKind::iid_pareto) throw ConfigError("moment_rate: exact tables exist for the iid model only");
  const auto& p = ctx.params;
  const auto r_list = p.at("r_list").get<std::vector<std::size_t>>();
  if (r_list.empty()) throw ConfigError("params.r_list: must not be empty");
  const iid::WRule rule{p.at("w_scale").get<double>(), p.at("w_exponent").get<double>()};
  const double gamma = p.at("gamma").get<double>();
  for (std::size_t r : r_list)
    if (!(rule(r) > 0.0 && rule(r) < 1.0)) throw ConfigError("params: w(r) must lie in (0,1) for every r");
  auto rows = iid::moment_rate_table(r_list, rule, gamma);
  for (std::size_t r : r_list) {
    const double w = rule(r), rd = static_cast<double>(r);
    const double v = iid::joint_jump_moment(r, w, [gamma](double s, double t) { return t > s ? std::pow(t - s, gamma) : 0.0; }) /
                     (std::pow(rd, gamma + 2.0) * w);
    rows.push_back({r, w, gamma, kStatJointPosdiff, v, 0.0, v});
  }
  ExperimentResult res;
  CsvTable t({"r", "w", "gamma", "statistic", "value", "target", "rel_err", "regime"});
  for (const auto& row : rows)
    t.add({static_cast<std::uint64_t>(row.r), row.w, row.gamma, row.statistic, row.value, row.target, row.rel_err,
           std::string(detail::regime_tag(static_cast<double>(row.r), row.w, gamma))});
  const std::map<std::string, std::string> names{{"length_small", iid::kStatLengthSmall},
                                                 {"length_large", iid::kStatLengthLarge},
                                                 {"first_jump", iid::kStatFirstJump},
                                                 {"joint_posdiff", kStatJointPosdiff}};
  const auto& checks = ctx.tolerances.at("checks");
  if (!checks.is_array()) throw ConfigError("tolerances.checks: expected an array");
  for (std::size_t i = 0; i < checks.size(); ++i) {
    const auto c = schema::resolve(checks[i],
                                   {integer("r", nullptr, "", 1), str("statistic", nullptr, "", {"length_small", "length_large", "first_jump", "joint_posdiff"}),
                                    num("tol", nullptr, "", 0.0)},
                                   "tolerances.checks[" + std::to_string(i) + "]");
    if (!c.contains("r") || !c.contains("statistic") || !c.contains("tol"))
      throw ConfigError("tolerances.checks[" + std::to_string(i) + "]: needs r, statistic and tol");
    const auto r = c.at("r").get<std::size_t>();
    const auto stat = c.at("statistic").get<std::string>();
    const auto it = std::find_if(rows.begin(), rows.end(), [&](const iid::RateRow& row) {
      return row.r == r && row.statistic == names.at(stat);
    });
    if (it == rows.end()) throw ConfigError("tolerances.checks[" + std::to_string(i) + "]: r not in params.r_list");
    const std::string name = stat + "@r=" + std::to_string(r);
    if (stat == "joint_posdiff")
      res.checks.push_back(check_le(name, it->value, c.at("tol").get<double>()));
    else
      res.checks.push_back(check_rel(name, it->value, it->target, c.at("tol").get<double>()));
  }
  res.outputs = {{"rows", t.rows()}};
  res.tables.emplace("moment_rate", std::move(t));
  return res;
}

// jump_law: conditional law of t(1)/r and t(N)/r against U(0,1).
inline std::vector<Field> jump_law_params() {
  return join(std::vector<Field>{integer("r", 200, "block size", 1), integer("n_samples", 100000, "exceeding blocks", 1),
                                 integer("max_blocks", std::uint64_t{1} << 40, "block budget", 1)},
              level_fields());
}
inline std::vector<Field> jump_law_tol() { return {num("ks", 0.02, "KS distance bound for both jump times", 0.0)}; }

inline ExperimentResult jump_law(const RunContext& ctx) {
  const auto& p = ctx.params;
  const double u = detail::resolve_level(ctx.model, p);
  const auto r = detail::get_size(p, "r");
  const auto law = jump_time_law(ctx.model, r, u, detail::get_size(p, "n_samples"), ctx.seed, ctx.workers,
                                 p.at("max_blocks").get<std::uint64_t>());
  ExperimentResult res;
  CsvTable t({"q", "first", "last"});
  auto a = law.first, b = law.last;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  for (int i = 1; i < 100; ++i) {
    const double q = i / 100.0;
    const auto idx = std::min(a.size() - 1, static_cast<std::size_t>(q * static_cast<double>(a.size())));
    t.add({q, a[idx], b[idx]});
  }
  res.outputs = {{"u", u},
                 {"samples", law.first.size()},
                 {"blocks_simulated", law.blocks_simulated},
                 {"fast_path", law.fast_path},
                 {"ks_first", law.ks_first},
                 {"ks_last", law.ks_last},
                 {"mean_first", law.moment_first(1.0)},
                 {"mean_last", law.moment_last(1.0)}};
  if (law.first.size() < detail::get_size(p, "n_samples"))
    res.warnings.push_back("block budget exhausted before n_samples exceeding blocks were found");
  const double tol = ctx.tolerances.at("ks").get<double>();
  res.checks.push_back(check_le("ks_first", law.ks_first, tol));
  res.checks.push_back(check_le("ks_last", law.ks_last, tol));
  res.tables.emplace("jump_law_quantiles", std::move(t));
  return res;
}

// consistency: pseudo-estimators over independent replications.
inline std::vector<Field> consistency_params() {
  return join(std::vector<Field>{integer("n", 10000000, "series length", 1), integer("r", 500, "block size", 1),
                                 integer("replications", 50, "independent series", 2),
                                 str("functional", "ei", "cluster functional for the blocks estimator"),
                                 num("gamma", 1.0, "exponent of the extremal index estimator", 0.0),
                                 num("target_theta", nullptr, "known target; otherwise tail-process Monte Carlo"),
                                 integer("n_paths", 1000000, "tail paths for the Monte Carlo target", 1)},
              level_fields());
}
inline std::vector<Field> consistency_tol() { return {pos("n_se", 3.0, "allowed deviation in combined standard errors")}; }

inline ExperimentResult consistency(const RunContext& ctx) {
  const auto& p = ctx.params;
  const double u = detail::resolve_level(ctx.model, p);
  const auto w = exact_tail_prob(ctx.model, u);
  if (!w || !(*w < 1.0)) throw ConfigError("consistency: the pseudo-estimator needs a model with closed-form P(X_0 > u)");
  ClusterFunctional h;
  try {
    h = builtin(p.at("functional").get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("params.functional: ") + e.what());
  }
  BlockScheme scheme;
  scheme.n = detail::get_size(p, "n");
  scheme.r = detail::get_size(p, "r");
  scheme.threshold = FixedLevel{u};
  scheme.w = *w;
  try {
    scheme.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("params: ") + e.what());
  }
  const double gamma = p.at("gamma").get<double>();
  const auto reps = detail::get_size(p, "replications");
  struct Rep {
    double nu = 0.0, theta = 0.0;
  };
  const auto values = parallel_map<Rep>(reps, ctx.workers, [&](std::size_t i) {
    const auto series = generate(ctx.model, scheme.n, ctx.seed, Materialization::streamed, i);
    return Rep{empirical_cluster_measure(series, h, scheme, 0.0), extremal_index_estimator(series, scheme, gamma)};
  });
  RunningMoments nu, th;
  ExperimentResult res;
  CsvTable t({"replication", "nu_tilde", "theta_tilde"});
  for (std::size_t i = 0; i < reps; ++i) {
    nu.add(values[i].nu);
    th.add(values[i].theta);
    t.add({static_cast<std::uint64_t>(i), values[i].nu, values[i].theta});
  }
  const double rd = static_cast<double>(reps);
  const double se_nu = std::sqrt(nu.variance() / rd), se_th = std::sqrt(th.variance() / rd);
  double target = 0.0, target_se = 0.0;
  if (p.contains("target_theta")) {
    target = p.at("target_theta").get<double>();
  } else {
    const auto ct = candidate_theta(TailProcessModel(ctx.model), detail::get_size(p, "n_paths"), derive_seed(ctx.seed, 0x7A), ctx.workers);
    target = ct.mc.value;
    target_se = ct.mc.std_error;
    res.targets["theta_mc"] = ct.mc;
    if (ct.exact) res.targets["theta_exact"] = ct.value.value;
  }
  const double k = ctx.tolerances.at("n_se").get<double>();
  res.targets["theta"] = target;
  res.targets["theta_se"] = target_se;
  res.outputs = {{"u", u},
                 {"w", *w},
                 {"rw", static_cast<double>(scheme.r) * *w},
                 {"nu_tilde", {{"functional", h.name}, {"mean", nu.mean()}, {"se", se_nu}}},
                 {"theta_tilde", {{"gamma", gamma}, {"mean", th.mean()}, {"se", se_th}}}};
  res.checks.push_back(check_abs("nu_tilde(" + h.name + ")", nu.mean(), target, k * std::hypot(se_nu, target_se)));
  res.checks.push_back(check_abs("theta_tilde", th.mean(), target, k * std::hypot(se_th, target_se)));
  res.tables.emplace("consistency_replications", std::move(t));
  return res;
}

// process_clt: replicate distribution of G~, K~ or L~.
inline std::vector<Field> process_clt_params() {
  return join(std::vector<Field>{str("kind", "G_tilde", "process", {"G_tilde", "K_tilde", "L_tilde"}),
                                 typed("functionals", FieldType::string_array, json{"ei"}, "functionals"),
                                 integer("n", 10000000, "series length per replicate", 1), integer("r", 100, "block size", 1),
                                 integer("n_replicates", 1000, "replicates", 2),
                                 integer("centering_rep", 0, "blocks in the centering run (0: 100 x m, at least 20 x n_replicates)"),
                                 num("gamma", nullptr, "homogeneity exponent in the scale (default: first functional)", 0.0),
                                 typed("variance_targets", FieldType::any, json::array(),
                                       "per functional: number, null or \"iid_exact\""),
                                 boolean("gaussianity", true, "run the Gaussianity check on the first functional")},
              level_fields());
}
inline std::vector<Field> process_clt_tol() {
  return {num("var_rel", 0.10, "relative error bound on each targeted variance", 0.0),
          num("ks", 0.05, "KS bound against the fitted normal", 0.0),
          num("skewness", nullptr, "bound on |skewness| (optional)", 0.0)};
}

inline ExperimentResult process_clt(const RunContext& ctx) {
  const auto& p = ctx.params;
  const double u = detail::resolve_level(ctx.model, p);
  const auto kind = parse_process_kind(p.at("kind").get<std::string>());
  const auto hs = detail::parse_functionals(p.at("functionals"));
  BlockScheme scheme;
  scheme.n = detail::get_size(p, "n");
  scheme.r = detail::get_size(p, "r");
  scheme.threshold = FixedLevel{u};
  try {
    scheme.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("params: ") + e.what());
  }
  const auto reps = detail::get_size(p, "n_replicates");
  std::uint64_t cent = p.at("centering_rep").get<std::uint64_t>();
  if (cent == 0) cent = std::max<std::uint64_t>(100 * static_cast<std::uint64_t>(scheme.m()), 20 * reps);
  if (cent < 20 * static_cast<std::uint64_t>(reps)) throw ConfigError("params.centering_rep: must be at least 20 x n_replicates");
  const auto targets_in = p.at("variance_targets");
  if (!targets_in.is_array() || targets_in.size() > hs.size())
    throw ConfigError("params.variance_targets: expected an array with at most one entry per functional");
  for (const auto& t : targets_in)
    if (!(t.is_null() || t.is_number() || (t.is_string() && t.get<std::string>() == "iid_exact")))
      throw ConfigError("params.variance_targets: entries must be numbers, null or \"iid_exact\"");
  std::optional<double> gamma;
  if (p.contains("gamma")) gamma = p.at("gamma").get<double>();
  ProcessSample ps;
  try {
    ps = sample_process(kind, ctx.model, hs, scheme, reps, cent, ctx.seed, ctx.workers, gamma);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("process_clt: ") + e.what());
  }
  std::vector<std::optional<double>> targets(hs.size());
  for (std::size_t i = 0; i < targets_in.size(); ++i) {
    if (targets_in[i].is_number()) {
      targets[i] = targets_in[i].get<double>();
    } else if (targets_in[i].is_string()) {
      if (ctx.model.kind != ModelKind::iid_pareto) throw ConfigError("params.variance_targets: iid_exact needs the iid model");
      targets[i] = iid_exact_process_variance(kind, hs[i], ps.scheme, *ps.scheme.w, ps.gamma);
      if (!targets[i]) throw ConfigError("params.variance_targets: no exact iid variance for '" + hs[i].name + "'");
    }
  }
  ExperimentResult res;
  res.warnings = ps.warnings;
  json report = json::object();
  if (reps >= 100) {
    const auto vr = variance_report(ps, targets);
    report["covariance"] = vr.covariance;
    report["covariance_se"] = vr.covariance_se;
    report["mean"] = vr.mean;
    for (std::size_t i = 0; i < hs.size(); ++i) {
      if (!vr.target[i]) continue;
      res.targets["variance(" + hs[i].name + ")"] = *vr.target[i];
      if (kind == ProcessKind::L_tilde)
        res.targets["variance_alt(" + hs[i].name + ")"] = *vr.target[i] * (2.0 * ps.gamma + 1.0) / (ps.gamma + 1.0);
      res.checks.push_back(check_rel("variance(" + hs[i].name + ")", vr.covariance[i][i], *vr.target[i],
                                     ctx.tolerances.at("var_rel").get<double>()));
    }
  } else {
    res.warnings.push_back("fewer than 100 replicates: variance report skipped");
  }
  if (p.at("gaussianity").get<bool>()) {
    if (reps >= 500) {
      const auto g = gaussianity_check(ps, 0, 200, derive_seed(ctx.seed, 0x6A));
      report["gaussianity"] = {{"functional", hs[0].name},  {"ks", g.ks},
                               {"skewness", g.skewness},      {"skewness_se", g.skewness_se},
                               {"excess_kurtosis", g.excess_kurtosis}, {"excess_kurtosis_se", g.excess_kurtosis_se}};
      res.checks.push_back(check_le("ks(" + hs[0].name + ")", g.ks, ctx.tolerances.at("ks").get<double>()));
      if (ctx.tolerances.contains("skewness"))
        res.checks.push_back(check_le("|skewness|(" + hs[0].name + ")", std::abs(g.skewness), ctx.tolerances.at("skewness").get<double>()));
    } else {
      res.warnings.push_back("fewer than 500 replicates: Gaussianity check skipped");
    }
  }
  res.outputs = {{"kind", to_string(kind)},
                 {"u", ps.u},
                 {"w", *ps.scheme.w},
                 {"w_provenance", ps.scheme.w_provenance == WProvenance::model_true ? "model_true" : "estimated"},
                 {"scale", ps.scale},
                 {"gamma", ps.gamma},
                 {"m", scheme.m()},
                 {"centering_blocks", ps.centering_blocks},
                 {"centering", ps.centering},
                 {"centering_offset_sd", ps.centering_offset_sd},
                 {"report", report}};
  CsvTable t({"replicate", "functional", "value"});
  for (std::size_t i = 0; i < reps; ++i)
    for (std::size_t k = 0; k < hs.size(); ++k) t.add({static_cast<std::uint64_t>(i), hs[k].name, ps.values[k][i]});
  res.tables.emplace("replicates", std::move(t));
  return res;
}

// theta_hat: tail-process and block-maxima routes to the extremal index.
inline std::vector<Field> theta_hat_params() {
  return join(std::vector<Field>{integer("r", 500, "block size", 1), integer("n_blocks", 1000000, "blocks for the block-maxima oracle", 2),
                                 integer("n_paths", 1000000, "tail paths", 1),
                                 str("w_source", "estimated", "normalizing w for the block oracle", {"estimated", "model_true"}),
                                 num("expected", nullptr, "known extremal index (optional)")},
              level_fields());
}
inline std::vector<Field> theta_hat_tol() {
  return {pos("n_se", 3.0, "agreement in combined standard errors"), num("abs", 0.01, "bound on |estimate - expected|", 0.0)};
}

inline ExperimentResult theta_hat(const RunContext& ctx) {
  const auto& p = ctx.params;
  const double u = detail::resolve_level(ctx.model, p);
  const auto r = detail::get_size(p, "r");
  const auto blocks = detail::get_size(p, "n_blocks");
  const auto src = p.at("w_source").get<std::string>() == "model_true" ? WSource::model_true : WSource::estimated;
  if (src == WSource::model_true && !exact_tail_prob(ctx.model, u))
    throw ConfigError("params.w_source: model_true needs a closed-form tail probability");
  const auto ct = candidate_theta(TailProcessModel(ctx.model), detail::get_size(p, "n_paths"), derive_seed(ctx.seed, 0x7A), ctx.workers);
  const auto bo = block_maxima_theta_oracle(ctx.model, blocks * r, r, u, ctx.seed, ctx.workers, src);
  ExperimentResult res;
  res.outputs = {{"u", u},
                 {"candidate_theta", ct.mc},
                 {"block_maxima", bo.estimate},
                 {"w", bo.w},
                 {"rw", bo.rw},
                 {"exceeding_blocks", bo.exceeding_blocks}};
  if (ct.exact) res.targets["theta_exact"] = ct.value.value;
  const double k = ctx.tolerances.at("n_se").get<double>();
  res.checks.push_back(check_abs("candidate_vs_block_maxima", ct.mc.value, bo.estimate.value,
                                 k * std::hypot(ct.mc.std_error, bo.estimate.std_error)));
  if (p.contains("expected")) {
    const double e = p.at("expected").get<double>(), tol = ctx.tolerances.at("abs").get<double>();
    res.targets["expected"] = e;
    res.checks.push_back(check_abs("candidate_theta", ct.mc.value, e, tol));
    res.checks.push_back(check_abs("block_maxima", bo.estimate.value, e, tol));
  }
  return res;
}

// anticluster_diag: weighted joint-exceedance sum over lags ell..r.
inline std::vector<Field> anticluster_params() {
  return join(std::vector<Field>{num("gamma", 1.0, "lag weight exponent", 0.0), integer("ell", 1, "first lag", 1),
                                 integer("r", 100, "last lag", 1), integer("n_rep", 10000000, "time points", 1)},
              level_fields());
}
inline std::vector<Field> anticluster_tol() { return {num("max_value", nullptr, "upper bound on the diagnostic (optional)", 0.0)}; }

inline ExperimentResult anticluster_diag(const RunContext& ctx) {
  const auto& p = ctx.params;
  const double u = detail::resolve_level(ctx.model, p);
  AnticlusterResult a;
  try {
    a = anticlustering_diagnostic(ctx.model, p.at("gamma").get<double>(), detail::get_size(p, "ell"), detail::get_size(p, "r"), u,
                                  detail::get_size(p, "n_rep"), ctx.seed, ctx.workers);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("anticluster_diag: ") + e.what());
  }
  ExperimentResult res;
  res.outputs = {{"u", u}, {"w", a.w}, {"value", a.value},
                 {"w_provenance", a.w_provenance == WProvenance::model_true ? "model_true" : "estimated"}};
  if (a.iid_exact) res.targets["iid_exact"] = *a.iid_exact;
  if (ctx.tolerances.contains("max_value"))
    res.checks.push_back(check_le("diagnostic", a.value.value, ctx.tolerances.at("max_value").get<double>()));
  return res;
}

// sweep: rate table across r with regime tags.
inline std::vector<Field> sweep_params() {
  return {typed("r_list", FieldType::integer_array, json::array(), "explicit block sizes", 1),
          integer("n", 0, "series length for the r = n^a grid"),
          typed("r_exponents", FieldType::number_array, json::array(), "exponents a for r = floor(n^a)", 0.0, true),
          pos("w_scale", 1e-5, "w = w_scale * r^(-w_exponent)"), num("w_exponent", 0.0, "see w_scale"),
          num("gamma", 1.0, "moment exponent", 0.0), integer("n_rep", 1000000, "blocks per r for non-iid models", 2)};
}
inline std::vector<Field> sweep_tol() { return {}; }

inline ExperimentResult sweep(const RunContext& ctx) {
  const auto& p = ctx.params;
  auto r_list = p.at("r_list").get<std::vector<std::size_t>>();
  const auto exps = p.at("r_exponents").get<std::vector<double>>();
  if (r_list.empty() == exps.empty()) throw ConfigError("params: give exactly one of r_list or (n, r_exponents)");
  if (!exps.empty()) {
    const double n = p.at("n").get<double>();
    if (!(n >= 2.0)) throw ConfigError("params.n: needed (>= 2) with r_exponents");
    for (double a : exps) r_list.push_back(std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::pow(n, a)))));
  }
  std::sort(r_list.begin(), r_list.end());
  const iid::WRule rule{p.at("w_scale").get<double>(), p.at("w_exponent").get<double>()};
  const double gamma = p.at("gamma").get<double>();
  ExperimentResult res;
  CsvTable t({"r", "w", "gamma", "statistic", "value", "target", "rel_err", "regime", "se"});
  std::vector<std::string> tags;
  for (std::size_t r : r_list) {
    const double w = rule(r);
    if (!(w > 0.0 && w < 1.0)) throw ConfigError("params: w(r) must lie in (0,1) for every r");
    const std::string tag = detail::regime_tag(static_cast<double>(r), w, gamma);
    tags.push_back(tag);
    if (ctx.model.kind == ModelKind::iid_pareto) {
      for (const auto& row : iid::moment_rate_table({r}, rule, gamma))
        t.add({static_cast<std::uint64_t>(r), w, gamma, row.statistic, row.value, row.target, row.rel_err, tag, 0.0});
    } else {
      const double u = level_for_w(ctx.model, w);
      const auto est = block_cluster_measure_detail(ctx.model, length_pow(gamma), r, u, detail::get_size(p, "n_rep"),
                                                    NormalizationKind::rw, derive_seed(ctx.seed, r), ctx.workers);
      t.add({static_cast<std::uint64_t>(r), est.w, gamma, std::string(iid::kStatLengthSmall), est.estimate.value,
             std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN(), tag, est.estimate.std_error});
    }
  }
  bool monotone = true;
  if (rule.exponent <= 0.0)
    for (std::size_t i = 1; i < tags.size(); ++i) monotone &= detail::regime_rank(tags[i]) >= detail::regime_rank(tags[i - 1]);
  res.outputs = {{"r_list", r_list}, {"regimes", tags}, {"regimes_monotone", monotone}};
  if (rule.exponent <= 0.0) res.checks.push_back({"regimes_monotone_in_r", monotone ? 1.0 : 0.0, 1.0, 0.0, "value==1", monotone});
  res.tables.emplace("sweep", std::move(t));
  return res;
}

// simulate: one series, dumped as CSV or binary.
inline std::vector<Field> simulate_params() {
  return {integer("n", 100000, "series length", 1), integer("replication", 0, "replication index"),
          str("dump", "csv", "series file format", {"csv", "binary", "none"}), pos("u", nullptr, "report exceedances of u")};
}
inline std::vector<Field> simulate_tol() { return {}; }

inline ExperimentResult simulate(const RunContext& ctx) {
  const auto& p = ctx.params;
  const auto n = detail::get_size(p, "n");
  const auto series = generate(ctx.model, n, ctx.seed, Materialization::eager, p.at("replication").get<std::uint64_t>());
  ExperimentResult res;
  const auto& x = series.values();
  RunningMoments mom;
  double mx = 0.0;
  for (double v : x) {
    mom.add(v);
    mx = std::max(mx, v);
  }
  res.outputs = {{"n", n}, {"max", mx}, {"median", [&] {
                                           auto c = x;
                                           std::nth_element(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(c.size() / 2), c.end());
                                           return c[c.size() / 2];
                                         }()}};
  if (p.contains("u")) {
    const double u = p.at("u").get<double>();
    std::size_t e = 0;
    for (double v : x) e += v > u;
    res.outputs["exceedances"] = e;
    if (const auto w = exact_tail_prob(ctx.model, u)) res.targets["expected_exceedances"] = *w * static_cast<double>(n);
  }
  const auto dump = p.at("dump").get<std::string>();
  if (dump == "csv") {
    CsvTable t({"t", "value"});
    for (std::size_t i = 0; i < x.size(); ++i) t.add({static_cast<std::uint64_t>(i), x[i]});
    res.tables.emplace("series", std::move(t));
  } else if (dump == "binary") {
    const auto tmp = std::filesystem::temp_directory_path() / ("clusterlab_" + std::to_string(ctx.seed) + "_" + std::to_string(n) + ".bin");
    write_series_binary(tmp.string(), series);
    std::ifstream in(tmp, std::ios::binary);
    res.raw_files["series.bin"] = std::string(std::istreambuf_iterator<char>(in), {});
    std::filesystem::remove(tmp);
  }
  return res;
}

// estimate: blocks estimators on a CSV series or a simulated one.
inline std::vector<Field> estimate_params() {
  return {str("input", nullptr, "CSV file with the series (default: simulate from the model)"),
          integer("n", 1000000, "simulated series length (ignored with input)", 1), integer("r", 100, "block size", 1),
          pos("u", nullptr, "fixed threshold level"), integer("k", nullptr, "order-statistic threshold (k-th largest norm)", 1),
          str("norm", "euclidean", "norm for d-dimensional input", {"euclidean", "sup", "l1"}),
          typed("functionals", FieldType::string_array, json{"ei", "length_pow(1)"}, "functionals"),
          num("gamma", 1.0, "exponent of the extremal index estimator", 0.0)};
}
inline std::vector<Field> estimate_tol() { return {}; }

inline ExperimentResult estimate(const RunContext& ctx) {
  const auto& p = ctx.params;
  const auto hs = detail::parse_functionals(p.at("functionals"));
  std::vector<double> norms;
  std::string source;
  if (p.contains("input")) {
    Window w;
    try {
      w = ingest_csv(p.at("input").get<std::string>());
    } catch (const std::exception& e) {
      throw ConfigError(std::string("params.input: ") + e.what());
    }
    norms = w.norms(NormSpec{parse_norm_kind(p.at("norm").get<std::string>())});
    source = p.at("input").get<std::string>();
  } else {
    norms = generate(ctx.model, detail::get_size(p, "n"), ctx.seed).values();
    source = ctx.model.label();
  }
  BlockScheme scheme;
  scheme.n = norms.size();
  scheme.r = detail::get_size(p, "r");
  if (p.contains("u") == p.contains("k")) throw ConfigError("params: give exactly one of 'u' or 'k'");
  if (p.contains("u")) {
    const double u = p.at("u").get<double>();
    scheme.threshold = FixedLevel{u};
    const auto we = p.contains("input") ? std::nullopt : exact_tail_prob(ctx.model, u);
    if (we && *we < 1.0) {
      scheme.w = *we;
    } else {
      std::size_t e = 0;
      for (double v : norms) e += v > u;
      if (e == 0) throw std::runtime_error("estimate: no exceedances of u");
      scheme.w = static_cast<double>(e) / static_cast<double>(norms.size());
      scheme.w_provenance = WProvenance::estimated;
    }
  } else {
    scheme.threshold = OrderStatistic{detail::get_size(p, "k")};
  }
  try {
    scheme.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("params: ") + e.what());
  }
  ExperimentResult res;
  CsvTable t({"functional", "normalization", "value"});
  json est = json::object();
  for (const auto& h : hs) {
    const double v = empirical_cluster_measure(norms, h, scheme);
    const double vr = empirical_cluster_measure_rescaled(norms, h, scheme, h.gamma);
    t.add({h.name, std::string("nw"), v});
    t.add({h.name, std::string("nw r^gamma"), vr});
    est[h.name] = {{"nu_tilde", v}, {"nu_tilde_rescaled", vr}};
  }
  const double gamma = p.at("gamma").get<double>();
  const double theta = extremal_index_estimator(norms, scheme, gamma);
  t.add({std::string("theta_tilde(") + detail::format_number(gamma) + ")", std::string("min(1,(g+1) nu)"), theta});
  const auto rs = resolve_scheme(norms, scheme);
  res.outputs = {{"source", source}, {"n", scheme.n}, {"m", scheme.m()}, {"u", rs.u}, {"w", rs.w},
                 {"estimates", est}, {"theta_tilde", theta}};
  res.tables.emplace("estimates", std::move(t));
  return res;
}

} // namespace experiments

struct ExperimentDef {
  std::string name;
  std::string subcommand;
  bool uses_model = true;
  std::function<std::vector<Field>()> params;
  std::function<std::vector<Field>()> tolerances;
  std::function<ExperimentResult(const RunContext&)> run;
};

inline const std::vector<ExperimentDef>& experiment_defs() {
  namespace ex = experiments;
  static const std::vector<ExperimentDef> defs{
      {"oracle_table", "oracle", false, ex::oracle_table_params, ex::oracle_table_tol, ex::oracle_table},
      {"moment_rate", "oracle", true, ex::moment_rate_params, ex::moment_rate_tol, ex::moment_rate},
      {"jump_law", "jump-law", true, ex::jump_law_params, ex::jump_law_tol, ex::jump_law},
      {"consistency", "estimate", true, ex::consistency_params, ex::consistency_tol, ex::consistency},
      {"process_clt", "clt", true, ex::process_clt_params, ex::process_clt_tol, ex::process_clt},
      {"theta_hat", "theta", true, ex::theta_hat_params, ex::theta_hat_tol, ex::theta_hat},
      {"anticluster_diag", "diag", true, ex::anticluster_params, ex::anticluster_tol, ex::anticluster_diag},
      {"sweep", "sweep", true, ex::sweep_params, ex::sweep_tol, ex::sweep},
      {"simulate", "simulate", true, ex::simulate_params, ex::simulate_tol, ex::simulate},
      {"estimate", "estimate", true, ex::estimate_params, ex::estimate_tol, ex::estimate},
  };
  return defs;
}

inline const ExperimentDef& find_experiment(const std::string& name) {
  for (const auto& d : experiment_defs())
    if (d.name == name) return d;
  std::string list;
  for (const auto& d : experiment_defs()) list += (list.empty() ? "" : ", ") + d.name;
  throw ConfigError("experiment: unknown kind '" + name + "' (expected one of " + list + ")");
}

// Default experiment per subcommand.
inline std::string default_experiment(const std::string& subcommand) {
  static const std::map<std::string, std::string> m{{"oracle", "oracle_table"}, {"simulate", "simulate"},
                                                    {"estimate", "estimate"},   {"jump-law", "jump_law"},
                                                    {"clt", "process_clt"},     {"theta", "theta_hat"},
                                                    {"diag", "anticluster_diag"}, {"sweep", "sweep"}};
  const auto it = m.find(subcommand);
  if (it == m.end()) throw ConfigError("unknown subcommand '" + subcommand + "'");
  return it->second;
}

inline json published_schema() {
  json s;
  s["top_level"] = schema::describe({schema::str("experiment", nullptr, "experiment kind"),
                                     schema::integer("seed", nullptr, "root seed (flag --seed, then CLUSTERLAB_SEED, then 1)"),
                                     schema::typed("model", FieldType::object, nullptr, "{model: iid|moving_max|ar1, alpha, weights, phi}"),
                                     schema::typed("params", FieldType::object, json::object(), "experiment parameters"),
                                     schema::typed("tolerances", FieldType::object, json::object(), "experiment tolerances"),
                                     schema::typed("output", FieldType::object, nullptr, "{dir, format: csv|json}")});
  for (const auto& d : experiment_defs())
    s["experiments"][d.name] = {{"subcommand", d.subcommand}, {"params", schema::describe(d.params())},
                                {"tolerances", schema::describe(d.tolerances())}};
  return s;
}

// ---------------------------------------------------------------------------
// Config resolution and execution

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<std::string> out_dir;
  std::optional<std::string> format;
  std::optional<std::string> subcommand;
};

struct ResolvedConfig {
  json config;  // full resolved config, embedded in the summary
  const ExperimentDef* def = nullptr;
  RunContext ctx;
  std::string out_dir;
  std::string format;
};

inline std::optional<std::uint64_t> seed_from_env() {
  const char* s = std::getenv("CLUSTERLAB_SEED");
  if (!s || !*s) return std::nullopt;
  std::uint64_t v = 0;
  const std::string_view sv(s);
  const auto [ptr, ec] = std::from_chars(sv.data(), sv.data() + sv.size(), v);
  if (ec != std::errc{} || ptr != sv.data() + sv.size()) throw ConfigError("CLUSTERLAB_SEED: not an unsigned 64-bit integer");
  return v;
}

inline ResolvedConfig resolve_config(json cfg, const Overrides& ov = {}) {
  if (cfg.is_null()) cfg = json::object();
  if (!cfg.is_object()) throw ConfigError("config: expected a JSON object");
  static const std::vector<std::string> top{"experiment", "seed", "model", "params", "tolerances", "output"};
  for (const auto& [key, _] : cfg.items())
    if (std::find(top.begin(), top.end(), key) == top.end())
      throw ConfigError("config: unknown key '" + key + "' (allowed: experiment, seed, model, params, tolerances, output)");
  if (!cfg.contains("experiment")) {
    if (!ov.subcommand) throw ConfigError("config.experiment: required");
    cfg["experiment"] = default_experiment(*ov.subcommand);
  }
  if (!cfg.at("experiment").is_string()) throw ConfigError("config.experiment: expected a string");
  const auto& def = find_experiment(cfg.at("experiment").get<std::string>());
  if (ov.subcommand && def.subcommand != *ov.subcommand)
    throw ConfigError("experiment '" + def.name + "' belongs to subcommand '" + def.subcommand + "', not '" + *ov.subcommand + "'");

  ResolvedConfig rc;
  rc.def = &def;
  json out = json::object();
  out["experiment"] = def.name;

  std::uint64_t seed = 1;
  if (cfg.contains("seed")) {
    const auto& s = cfg.at("seed");
    if (!s.is_number_integer() || (!s.is_number_unsigned() && s.get<std::int64_t>() < 0))
      throw ConfigError("config.seed: expected a non-negative integer, got " + s.dump());
    seed = s.get<std::uint64_t>();
  } else if (const auto env = seed_from_env()) {
    seed = *env;
  }
  if (ov.seed) seed = *ov.seed;
  out["seed"] = seed;

  if (def.uses_model) {
    try {
      rc.ctx.model = cfg.contains("model") ? cfg.at("model").get<GeneratorModel>() : GeneratorModel::iid(1.0);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config.model: ") + e.what());
    }
    out["model"] = rc.ctx.model;
  } else if (cfg.contains("model")) {
    throw ConfigError("config.model: experiment '" + def.name + "' takes no model");
  }

  const json raw_params = cfg.value("params", json::object());
  if (raw_params.is_object() && raw_params.contains("u") && raw_params.contains("w"))
    throw ConfigError("params: give exactly one of 'u' (level) or 'w' (exceedance probability)");
  out["params"] = schema::resolve(raw_params, def.params(), "params");
  out["tolerances"] = schema::resolve(cfg.value("tolerances", json::object()), def.tolerances(), "tolerances");

  const json output = schema::resolve(cfg.value("output", json::object()),
                                      {schema::str("dir", "clusterlab_out", "output directory"),
                                       schema::str("format", "csv", "detail file format", {"csv", "json"})},
                                      "output");
  rc.out_dir = ov.out_dir.value_or(output.at("dir").get<std::string>());
  rc.format = ov.format.value_or(output.at("format").get<std::string>());
  if (rc.format != "csv" && rc.format != "json") throw ConfigError("--format: expected csv or json");
  out["output"] = {{"format", rc.format}};

  rc.ctx.params = out["params"];
  rc.ctx.tolerances = out["tolerances"];
  rc.ctx.seed = seed;
  rc.ctx.workers = std::max<std::size_t>(1, ov.workers.value_or(default_workers()));
  rc.config = out;
  return rc;
}

inline json table_to_json(const CsvTable& t) {
  const auto text = t.str();
  json arr = json::array();
  // re-read through the CSV cells to keep one formatting path
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  const auto header = detail::split_csv_line(line, 1);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    const auto cells = detail::split_csv_line(line, ++lineno);
    json row = json::object();
    for (std::size_t j = 0; j < header.size(); ++j) {
      double v = 0.0;
      if (detail::parse_double(cells[j], v))
        row[header[j]] = v;
      else
        row[header[j]] = cells[j];
    }
    arr.push_back(row);
  }
  return arr;
}

struct RunOutcome {
  int exit_code = 0;
  json summary;
  std::vector<std::string> files; // written, relative to the output dir
  std::vector<Check> failures;
  std::string error;
};

// Executes a resolved config and writes summary.json, run_info.json and the
// detail files. Exit code 0 iff every declared check passes.
inline RunOutcome execute(const ResolvedConfig& rc) {
  RunOutcome out;
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentResult res;
  json summary;
  summary["inputs"] = rc.config;
  try {
    res = rc.def->run(rc.ctx);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    out.exit_code = 1;
    out.error = e.what();
    summary["error"] = e.what();
    summary["pass"] = false;
  }
  const double runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (out.error.empty()) {
    summary["outputs"] = res.outputs;
    summary["targets"] = res.targets;
    summary["checks"] = res.checks;
    summary["warnings"] = res.warnings;
    summary["pass"] = res.pass();
    for (const auto& c : res.checks)
      if (!c.pass) out.failures.push_back(c);
    out.exit_code = res.pass() ? 0 : 1;
  }
  const std::filesystem::path dir(rc.out_dir);
  std::filesystem::create_directories(dir);
  json files = json::array();
  for (const auto& [stem, table] : res.tables) {
    if (rc.format == "csv") {
      table.write(dir / (stem + ".csv"));
      out.files.push_back(stem + ".csv");
    } else {
      CsvTable::write_text(dir / (stem + ".json"), table_to_json(table).dump(1) + "\n");
      out.files.push_back(stem + ".json");
    }
  }
  for (const auto& [name, bytes] : res.raw_files) {
    CsvTable::write_text(dir / name, bytes);
    out.files.push_back(name);
  }
  summary["files"] = out.files;
  CsvTable::write_text(dir / "summary.json", summary.dump(2) + "\n");
  const json info{{"runtime_seconds", runtime}, {"workers", rc.ctx.workers}, {"exit_code", out.exit_code}};
  CsvTable::write_text(dir / "run_info.json", info.dump(2) + "\n");
  out.summary = std::move(summary);
  return out;
}

} // namespace clusterlab
