#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "clusterlab/functionals.hpp"
#include "clusterlab/stats.hpp"
#include "clusterlab/window.hpp"

// Exact ground truth for iid sequences: an exceedance pattern in a block of
// length r is a vector of r iid Bernoulli(w) indicators.
namespace clusterlab::iid {

using PatternFunctional = std::function<double(const ExceedanceRecord&)>;

inline PatternFunctional as_pattern(const ClusterFunctional& h) {
  if (!h.pattern_only()) throw std::invalid_argument("functional '" + h.name + "' is not a pattern functional");
  return h.pattern;
}

// f(t(1), t(N)) on blocks with an exceedance, 0 otherwise.
inline PatternFunctional joint_jump_pattern(std::function<double(double, double)> f) {
  return [f = std::move(f)](const ExceedanceRecord& r) {
    return r.has_exceedance ? f(static_cast<double>(r.first()), static_cast<double>(r.last())) : 0.0;
  };
}

namespace detail {

inline void check_rw(std::size_t r, double w) {
  if (r == 0) throw std::invalid_argument("iid oracle: r must be >= 1");
  if (!(w > 0.0 && w < 1.0)) throw std::invalid_argument("iid oracle: w must lie in (0,1)");
}

// (1-w)^k
inline double survive(double log1mw, double k) { return std::exp(k * log1mw); }

inline double powg(double x, double gamma) { return gamma == 0.0 ? 1.0 : (gamma == 1.0 ? x : std::pow(x, gamma)); }

} // namespace detail

// P(A) = 1 - (1-w)^r
inline double prob_exceedance(std::size_t r, double w) {
  detail::check_rw(r, w);
  return -std::expm1(static_cast<double>(r) * std::log1p(-w));
}

// P(L = i, A) for i = 1..r (index i-1):
//   i = 1: r w (1-w)^{r-1};  i >= 2: (r-i+1) w^2 (1-w)^{r-i}.
inline std::vector<double> length_joint_pmf(std::size_t r, double w) {
  detail::check_rw(r, w);
  const double l = std::log1p(-w);
  const double rd = static_cast<double>(r);
  std::vector<double> p(r);
  p[0] = rd * w * detail::survive(l, rd - 1.0);
  for (std::size_t i = 2; i <= r; ++i) {
    const double id = static_cast<double>(i);
    p[i - 1] = (rd - id + 1.0) * w * w * detail::survive(l, rd - id);
  }
  return p;
}

// Exact conditional pmf f(i) = P(L = i | A), i = 1..r.
inline std::vector<double> closed_form_length_pmf(std::size_t r, double w) {
  auto p = length_joint_pmf(r, w);
  const double pa = prob_exceedance(r, w);
  for (double& x : p) x /= pa;
  return p;
}

// E[L^gamma 1_A]
inline double length_moment(std::size_t r, double w, double gamma) {
  const auto p = length_joint_pmf(r, w);
  CompensatedSum s;
  for (std::size_t i = 1; i <= r; ++i) s.add(detail::powg(static_cast<double>(i), gamma) * p[i - 1]);
  return s.value();
}

// E[t(1)^gamma 1_A] via the first-jump decomposition P(t(1)=j) = (1-w)^{j-1} w.
inline double first_jump_moment(std::size_t r, double w, double gamma) {
  detail::check_rw(r, w);
  const double l = std::log1p(-w);
  CompensatedSum s;
  for (std::size_t j = 1; j <= r; ++j) {
    const double jd = static_cast<double>(j);
    s.add(detail::powg(jd, gamma) * w * detail::survive(l, jd - 1.0));
  }
  return s.value();
}

// E[t(N)^gamma 1_A] via the last-jump decomposition P(t(N)=j) = w (1-w)^{r-j}.
inline double last_jump_moment(std::size_t r, double w, double gamma) {
  detail::check_rw(r, w);
  const double l = std::log1p(-w);
  const double rd = static_cast<double>(r);
  CompensatedSum s;
  for (std::size_t j = 1; j <= r; ++j) {
    const double jd = static_cast<double>(j);
    s.add(detail::powg(jd, gamma) * w * detail::survive(l, rd - jd));
  }
  return s.value();
}

// E[f(t(1), t(N)) 1_A]: single exceedance at j, or first at j and last at k > j
// with the r - (j-1) - (r-k) - 2 interior positions free. O(r^2).
inline double joint_jump_moment(std::size_t r, double w, const std::function<double(double, double)>& f) {
  detail::check_rw(r, w);
  const double l = std::log1p(-w);
  const double rd = static_cast<double>(r);
  CompensatedSum s;
  const double single = w * detail::survive(l, rd - 1.0);
  for (std::size_t j = 1; j <= r; ++j) {
    const double jd = static_cast<double>(j);
    s.add(f(jd, jd) * single);
    const double pj = w * detail::survive(l, jd - 1.0);
    for (std::size_t k = j + 1; k <= r; ++k) {
      const double kd = static_cast<double>(k);
      s.add(f(jd, kd) * pj * w * detail::survive(l, rd - kd));
    }
  }
  return s.value();
}

struct EnumerationResult {
  double expectation_on_a = 0.0; // E[F 1_A]
  double conditional = 0.0;      // E[F | A]
};

inline constexpr std::size_t kMaxEnumerationLength = 24;

// Brute force over all 2^r patterns.
inline EnumerationResult enumerate_patterns(std::size_t r, double w, const PatternFunctional& f) {
  detail::check_rw(r, w);
  if (r > kMaxEnumerationLength)
    throw std::invalid_argument("enumerate_patterns: r = " + std::to_string(r) + " exceeds the enumeration cap of " +
                                std::to_string(kMaxEnumerationLength));
  std::vector<double> wpow(r + 1), qpow(r + 1);
  for (std::size_t k = 0; k <= r; ++k) {
    wpow[k] = std::pow(w, static_cast<double>(k));
    qpow[k] = std::pow(1.0 - w, static_cast<double>(k));
  }
  CompensatedSum s, pa;
  ExceedanceRecord rec;
  rec.times.reserve(r);
  const std::uint64_t total = std::uint64_t{1} << r;
  for (std::uint64_t mask = 1; mask < total; ++mask) {
    rec.times.clear();
    for (std::size_t i = 0; i < r; ++i)
      if (mask & (std::uint64_t{1} << i)) rec.times.push_back(i + 1);
    rec.count = rec.times.size();
    rec.has_exceedance = true;
    rec.length = rec.times.back() - rec.times.front() + 1;
    const double prob = wpow[rec.count] * qpow[r - rec.count];
    s.add(f(rec) * prob);
    pa.add(prob);
  }
  return {s.value(), s.value() / pa.value()};
}

// Conditional pmf of L given A obtained by enumeration (for cross-checks).
inline std::vector<double> enumerated_length_pmf(std::size_t r, double w) {
  std::vector<double> p(r);
  for (std::size_t i = 1; i <= r; ++i)
    p[i - 1] = enumerate_patterns(r, w, [i](const ExceedanceRecord& rec) { return rec.length == i ? 1.0 : 0.0; }).conditional;
  return p;
}

// w as a function of r: w = scale * r^{-exponent} (exponent 0: fixed w).
struct WRule {
  double scale = 1e-3;
  double exponent = 0.0;
  double operator()(std::size_t r) const { return scale * std::pow(static_cast<double>(r), -exponent); }
};

struct RateRow {
  std::size_t r = 0;
  double w = 0.0;
  double gamma = 0.0;
  std::string statistic;
  double value = 0.0;
  double target = 0.0;
  double rel_err = 0.0;
};

inline const char* kStatLengthSmall = "E[L^g 1A]/(r w)";
inline const char* kStatLengthLarge = "E[L^g 1A]/(r^(g+2) w^2)";
inline const char* kStatFirstJump = "E[t1^g 1A]/(r^(g+1) w)";

// Exact rate table exhibiting the small/large block phase transition of the
// cluster-length moments and the block-size-free jump-time scaling.
inline std::vector<RateRow> moment_rate_table(const std::vector<std::size_t>& r_list, const WRule& w_rule, double gamma) {
  std::vector<RateRow> rows;
  for (std::size_t r : r_list) {
    const double w = w_rule(r);
    detail::check_rw(r, w);
    const double rd = static_cast<double>(r);
    const double el = length_moment(r, w, gamma);
    const double et = first_jump_moment(r, w, gamma);
    auto push = [&](const char* stat, double value, double target) {
      rows.push_back({r, w, gamma, stat, value, target, std::abs(value - target) / std::abs(target)});
    };
    push(kStatLengthSmall, el / (rd * w), 1.0);
    push(kStatLengthLarge, el / (std::pow(rd, gamma + 2.0) * w * w), 1.0 / ((gamma + 1.0) * (gamma + 2.0)));
    push(kStatFirstJump, et / (std::pow(rd, gamma + 1.0) * w), 1.0 / (gamma + 1.0));
  }
  return rows;
}

} // namespace clusterlab::iid
