#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "clusterlab/rng.hpp"
#include "clusterlab/window.hpp"

namespace clusterlab {

// A cluster functional evaluated on blocks already scaled so the threshold
// is 1. Blocks are identified with their zero-padded embedding, so positions
// (for the jump-location functionals) are 1-based in-block indices.
class ClusterFunctional {
public:
  using NormRule = std::function<double(std::span<const double>)>;
  using PatternRule = std::function<double(const ExceedanceRecord&)>;

  std::string name;
  double gamma = 0.0;
  bool shift_invariant = true;
  bool bounded = true;
  bool vanishes_around_zero = true;

  // Exactly one of the rules is primary: pattern functionals set `pattern`
  // and get `on_norms` derived; magnitude-dependent ones set `on_norms` only.
  NormRule on_norms;
  PatternRule pattern;

  bool pattern_only() const { return static_cast<bool>(pattern); }

  double eval_norms(std::span<const double> scaled_norms) const { return on_norms(scaled_norms); }

  double eval_record(const ExceedanceRecord& rec) const {
    if (!pattern) throw std::logic_error("functional '" + name + "' depends on magnitudes, not only on the pattern");
    return pattern(rec);
  }

  double operator()(const Window& scaled_block, const NormSpec& norm = {}) const {
    const auto ns = scaled_block.norms(norm);
    return on_norms(ns);
  }
};

namespace detail {

inline std::string format_number(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline bool any_above_one(std::span<const double> ns) {
  return std::any_of(ns.begin(), ns.end(), [](double v) { return v > 1.0; });
}

inline ClusterFunctional from_pattern(std::string name, double gamma, bool shift_invariant, bool bounded,
                                      ClusterFunctional::PatternRule rule) {
  ClusterFunctional h;
  h.name = std::move(name);
  h.gamma = gamma;
  h.shift_invariant = shift_invariant;
  h.bounded = bounded;
  h.vanishes_around_zero = true;
  h.pattern = rule;
  h.on_norms = [rule](std::span<const double> ns) {
    if (!any_above_one(ns)) return 0.0;
    return rule(exceedance_record_norms(ns, 1.0));
  };
  return h;
}

inline double safe_pow(double base, double gamma) { return gamma == 0.0 ? 1.0 : (gamma == 1.0 ? base : std::pow(base, gamma)); }

} // namespace detail

// EI(x) = 1{x* > 1}
inline ClusterFunctional ei() {
  return detail::from_pattern("ei", 0.0, true, true, [](const ExceedanceRecord& r) { return r.has_exceedance ? 1.0 : 0.0; });
}

// L(x)^gamma
inline ClusterFunctional length_pow(double gamma) {
  if (!(gamma >= 0.0)) throw std::invalid_argument("length_pow: gamma must be >= 0");
  return detail::from_pattern("length_pow(" + detail::format_number(gamma) + ")", gamma, true, gamma == 0.0,
                              [gamma](const ExceedanceRecord& r) {
                                return r.has_exceedance ? detail::safe_pow(static_cast<double>(r.length), gamma) : 0.0;
                              });
}

// 1{L(x) > q}
inline ClusterFunctional length_gt(double q) {
  if (!(q >= 0.0)) throw std::invalid_argument("length_gt: q must be >= 0");
  return detail::from_pattern("length_gt(" + detail::format_number(q) + ")", 0.0, true, true,
                              [q](const ExceedanceRecord& r) { return static_cast<double>(r.length) > q ? 1.0 : 0.0; });
}

// number of exceedances over 1
inline ClusterFunctional count() {
  return detail::from_pattern("count", 1.0, true, false,
                              [](const ExceedanceRecord& r) { return static_cast<double>(r.count); });
}

// 1{count = m}, m >= 1
inline ClusterFunctional count_eq(double m) {
  if (!(m >= 1.0) || m != std::floor(m)) throw std::invalid_argument("count_eq: m must be a positive integer");
  const auto mm = static_cast<std::size_t>(m);
  return detail::from_pattern("count_eq(" + detail::format_number(m) + ")", 0.0, true, true,
                              [mm](const ExceedanceRecord& r) { return r.count == mm ? 1.0 : 0.0; });
}

// 1{ sum_{T_min..T_max} |x_j| > eta }
inline ClusterFunctional sum_ind(double eta) {
  if (!(eta > 0.0)) throw std::invalid_argument("sum_ind: eta must be > 0");
  ClusterFunctional h;
  h.name = "sum_ind(" + detail::format_number(eta) + ")";
  h.gamma = 0.0;
  h.on_norms = [eta](std::span<const double> ns) {
    std::size_t first = ns.size(), last = 0;
    for (std::size_t i = 0; i < ns.size(); ++i) {
      if (ns[i] > 1.0) {
        if (first == ns.size()) first = i;
        last = i;
      }
    }
    if (first == ns.size()) return 0.0;
    double s = 0.0;
    for (std::size_t i = first; i <= last; ++i) s += ns[i];
    return s > eta ? 1.0 : 0.0;
  };
  return h;
}

inline ClusterFunctional product(const ClusterFunctional& a, const ClusterFunctional& b) {
  ClusterFunctional h;
  h.name = a.name + "*" + b.name;
  h.gamma = a.gamma + b.gamma;
  h.shift_invariant = a.shift_invariant && b.shift_invariant;
  h.bounded = a.bounded && b.bounded;
  h.vanishes_around_zero = a.vanishes_around_zero || b.vanishes_around_zero;
  auto fa = a.on_norms, fb = b.on_norms;
  h.on_norms = [fa, fb](std::span<const double> ns) { return fa(ns) * fb(ns); };
  if (a.pattern_only() && b.pattern_only()) {
    auto pa = a.pattern, pb = b.pattern;
    h.pattern = [pa, pb](const ExceedanceRecord& r) { return pa(r) * pb(r); };
  }
  return h;
}

namespace detail {

template <class TimeOf>
ClusterFunctional jump_time_pow(std::string label, double gamma, const ClusterFunctional& g, TimeOf time_of) {
  if (!(gamma >= 0.0)) throw std::invalid_argument(label + ": gamma must be >= 0");
  ClusterFunctional h;
  h.name = label + "(" + format_number(gamma) + ")" + (g.name == "ei" ? std::string{} : "*" + g.name);
  h.gamma = gamma + g.gamma;
  h.shift_invariant = gamma == 0.0 && g.shift_invariant;
  h.bounded = gamma == 0.0 && g.bounded;
  h.vanishes_around_zero = true;
  auto gn = g.on_norms;
  h.on_norms = [gamma, gn, time_of](std::span<const double> ns) {
    if (!any_above_one(ns)) return 0.0;
    const auto rec = exceedance_record_norms(ns, 1.0);
    return safe_pow(static_cast<double>(time_of(rec)), gamma) * gn(ns);
  };
  if (g.pattern_only()) {
    auto gp = g.pattern;
    h.pattern = [gamma, gp, time_of](const ExceedanceRecord& rec) {
      if (!rec.has_exceedance) return 0.0;
      return safe_pow(static_cast<double>(time_of(rec)), gamma) * gp(rec);
    };
  }
  return h;
}

} // namespace detail

// T_max(x)^gamma * G(x), in-block positions; not shift-invariant.
inline ClusterFunctional tmax_pow_times(double gamma, const ClusterFunctional& g) {
  return detail::jump_time_pow("tmax_pow", gamma, g, [](const ExceedanceRecord& r) { return r.last(); });
}

// T_min(x)^gamma * G(x)
inline ClusterFunctional tmin_pow_times(double gamma, const ClusterFunctional& g) {
  return detail::jump_time_pow("tmin_pow", gamma, g, [](const ExceedanceRecord& r) { return r.first(); });
}

inline ClusterFunctional tmin() { return tmin_pow_times(1.0, ei()); }

// Parses config strings such as "ei", "length_pow(1.5)", "tmax_pow(1)*ei",
// "count_eq(2)*sum_ind(3)". A leading tmax_pow/tmin_pow factor multiplies the
// product of the remaining factors (EI when none remain).
class FunctionalCatalogue {
public:
  static const std::vector<std::string>& names() {
    static const std::vector<std::string> kNames{"ei",     "length_pow", "length_gt", "count", "count_eq",
                                                 "sum_ind", "tmax_pow",  "tmin_pow",  "tmin"};
    return kNames;
  }

  static ClusterFunctional builtin(std::string_view spec) {
    std::vector<std::string_view> factors;
    std::size_t depth = 0, start = 0;
    for (std::size_t i = 0; i < spec.size(); ++i) {
      if (spec[i] == '(') ++depth;
      if (spec[i] == ')') {
        if (depth == 0) throw std::invalid_argument("unbalanced parentheses in functional '" + std::string(spec) + "'");
        --depth;
      }
      if (spec[i] == '*' && depth == 0) {
        factors.push_back(trim(spec.substr(start, i - start)));
        start = i + 1;
      }
    }
    if (depth != 0) throw std::invalid_argument("unbalanced parentheses in functional '" + std::string(spec) + "'");
    factors.push_back(trim(spec.substr(start)));
    return build(factors, 0);
  }

private:
  static std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
  }

  struct Atom {
    std::string head;
    std::vector<double> args;
  };

  static Atom parse_atom(std::string_view s) {
    if (s.empty()) throw std::invalid_argument("empty functional factor");
    Atom a;
    const auto open = s.find('(');
    if (open == std::string_view::npos) {
      a.head = std::string(s);
      return a;
    }
    if (s.back() != ')') throw std::invalid_argument("malformed functional '" + std::string(s) + "'");
    a.head = std::string(trim(s.substr(0, open)));
    auto inner = s.substr(open + 1, s.size() - open - 2);
    while (!inner.empty()) {
      const auto comma = inner.find(',');
      const auto tok = trim(inner.substr(0, comma));
      double v = 0.0;
      const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
        throw std::invalid_argument("bad numeric argument '" + std::string(tok) + "' in '" + std::string(s) + "'");
      a.args.push_back(v);
      if (comma == std::string_view::npos) break;
      inner.remove_prefix(comma + 1);
    }
    return a;
  }

  static void expect_args(const Atom& a, std::size_t n) {
    if (a.args.size() != n)
      throw std::invalid_argument("functional '" + a.head + "' expects " + std::to_string(n) + " argument(s)");
  }

  static ClusterFunctional build(const std::vector<std::string_view>& factors, std::size_t from) {
    const Atom a = parse_atom(factors[from]);
    const bool has_rest = from + 1 < factors.size();
    if (a.head == "tmax_pow" || a.head == "tmin_pow") {
      expect_args(a, 1);
      const ClusterFunctional g = has_rest ? build(factors, from + 1) : ei();
      return a.head == "tmax_pow" ? tmax_pow_times(a.args[0], g) : tmin_pow_times(a.args[0], g);
    }
    ClusterFunctional h = simple(a);
    if (has_rest) h = product(h, build(factors, from + 1));
    return h;
  }

  static ClusterFunctional simple(const Atom& a) {
    if (a.head == "ei") return expect_args(a, 0), ei();
    if (a.head == "count") return expect_args(a, 0), count();
    if (a.head == "tmin") return expect_args(a, 0), tmin();
    if (a.head == "length") return expect_args(a, 0), length_pow(1.0);
    if (a.head == "length_pow") return expect_args(a, 1), length_pow(a.args[0]);
    if (a.head == "length_gt") return expect_args(a, 1), length_gt(a.args[0]);
    if (a.head == "count_eq") return expect_args(a, 1), count_eq(a.args[0]);
    if (a.head == "sum_ind") return expect_args(a, 1), sum_ind(a.args[0]);
    throw std::invalid_argument("unknown functional '" + a.head + "'");
  }
};

inline ClusterFunctional builtin(std::string_view spec) { return FunctionalCatalogue::builtin(spec); }

inline double eval_functional(const ClusterFunctional& h, const Window& scaled_block, const NormSpec& norm = {}) {
  return h(scaled_block, norm);
}

// ---------------------------------------------------------------------------
// Randomized audit of class membership: vanishing around zero, dependence on
// the [T_min, T_max] stretch only, shift invariance and the growth bound
// |H| <= C_H L^gamma.

struct MembershipViolation {
  std::string kind; // vanishing | support | shift | growth | sign
  std::vector<double> window;
  std::string detail;
};

struct MembershipReport {
  bool pass = true;
  double c_h = 0.0;
  double c_h_short = 0.0; // max ratio over windows of length <= 32
  double c_h_long = 0.0;  // max ratio over windows of length in (32, 2048]
  std::size_t trials = 0;
  std::vector<MembershipViolation> violations;
};

namespace detail {

inline std::vector<double> random_l0_window(RandomStream& rng, std::size_t len) {
  std::vector<double> w(len);
  const double p_spike = rng.uniform() < 0.15 ? 0.0 : 0.02 + 0.4 * rng.uniform();
  for (auto& v : w) v = rng.uniform() < p_spike ? 1.0 + rng.pareto(1.0) : 0.999 * rng.uniform();
  if (len >= 2 && p_spike > 0.0 && rng.uniform() < 0.5) {
    // stretch the cluster to the window ends now and then
    w.front() = 1.0 + rng.pareto(1.0);
    w.back() = 1.0 + rng.pareto(1.0);
  }
  return w;
}

inline bool same_value(double a, double b) { return std::abs(a - b) <= 1e-12 * std::max({1.0, std::abs(a), std::abs(b)}); }

} // namespace detail

inline MembershipReport check_membership(const ClusterFunctional& h, double gamma, std::size_t trials,
                                         std::uint64_t seed) {
  if (trials == 0) throw std::invalid_argument("check_membership: trials must be >= 1");
  MembershipReport rep;
  rep.trials = trials;
  auto flag = [&rep](std::string kind, const std::vector<double>& w, std::string detail) {
    rep.pass = false;
    if (rep.violations.size() < 16) rep.violations.push_back({std::move(kind), w, std::move(detail)});
  };
  bool shift_flagged = false, support_flagged = false, growth_flagged = false;

  for (std::size_t t = 0; t < trials; ++t) {
    RandomStream rng(seed, t, 0);
    const bool long_window = (t % 2) == 1;
    const std::size_t len = long_window ? 33 + rng.uniform_index(2016) : 1 + rng.uniform_index(32);
    auto w = detail::random_l0_window(rng, len);
    const double value = h.eval_norms(w);
    const auto rec = exceedance_record_norms(w, 1.0);

    if (value < 0.0) flag("sign", w, "negative value " + detail::format_number(value));

    if (!rec.has_exceedance) {
      if (value != 0.0) flag("vanishing", w, "nonzero value " + detail::format_number(value) + " without exceedance");
      continue;
    }

    // resample sub-threshold coordinates outside [T_min, T_max]
    if (!support_flagged) {
      auto w2 = w;
      for (std::size_t i = 0; i + 1 < rec.first(); ++i) w2[i] = 0.999 * rng.uniform();
      for (std::size_t i = rec.last(); i < w2.size(); ++i) w2[i] = 0.999 * rng.uniform();
      if (!detail::same_value(value, h.eval_norms(w2))) {
        flag("support", w, "value depends on coordinates outside the cluster");
        support_flagged = true;
      }
    }

    if (!shift_flagged) {
      const std::size_t left = 1 + rng.uniform_index(8), right = rng.uniform_index(8);
      std::vector<double> padded;
      for (std::size_t i = 0; i < left; ++i) padded.push_back(0.999 * rng.uniform());
      padded.insert(padded.end(), w.begin(), w.end());
      for (std::size_t i = 0; i < right; ++i) padded.push_back(0.999 * rng.uniform());
      const double shifted = h.eval_norms(padded);
      if (!detail::same_value(value, shifted)) {
        flag("shift", w,
             "value " + detail::format_number(value) + " becomes " + detail::format_number(shifted) + " after shifting by " +
                 std::to_string(left));
        shift_flagged = true;
      }
    }

    const double ratio = std::abs(value) / detail::safe_pow(static_cast<double>(rec.length), gamma);
    if (long_window)
      rep.c_h_long = std::max(rep.c_h_long, ratio);
    else
      rep.c_h_short = std::max(rep.c_h_short, ratio);
    if (long_window && !growth_flagged && rep.c_h_short > 0.0 && ratio > 2.0 * rep.c_h_short + 1e-12) {
      flag("growth", w, "|H|/L^gamma = " + detail::format_number(ratio) + " exceeds twice the short-window constant " +
                            detail::format_number(rep.c_h_short));
      growth_flagged = true;
    }
  }
  if (!growth_flagged && rep.c_h_short > 0.0 && rep.c_h_long > 2.0 * rep.c_h_short + 1e-12)
    flag("growth", {}, "long-window constant " + detail::format_number(rep.c_h_long) + " exceeds twice the short-window constant");
  rep.c_h = std::max(rep.c_h_short, rep.c_h_long);
  return rep;
}

} // namespace clusterlab
