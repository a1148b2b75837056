#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clusterlab/functionals.hpp"
#include "clusterlab/generators.hpp"
#include "clusterlab/parallel.hpp"
#include "clusterlab/stats.hpp"
#include "clusterlab/window.hpp"

namespace clusterlab {

enum class NormalizationKind { rw, r_pow_w, r_pow_w2, nw, n_rpow_w };

inline NormalizationKind parse_normalization(const std::string& s) {
  if (s == "rw") return NormalizationKind::rw;
  if (s == "r_pow_w") return NormalizationKind::r_pow_w;
  if (s == "r_pow_w2") return NormalizationKind::r_pow_w2;
  if (s == "nw") return NormalizationKind::nw;
  if (s == "n_rpow_w") return NormalizationKind::n_rpow_w;
  throw std::invalid_argument("unknown normalization '" + s + "'");
}

inline const char* to_string(NormalizationKind k) {
  switch (k) {
  case NormalizationKind::rw: return "rw";
  case NormalizationKind::r_pow_w: return "r_pow_w";
  case NormalizationKind::r_pow_w2: return "r_pow_w2";
  case NormalizationKind::nw: return "nw";
  case NormalizationKind::n_rpow_w: return "n_rpow_w";
  }
  return "?";
}

// r w | r^{g+1} w | r^{g+2} w^2 | n w | n r^g w
inline double normalization(NormalizationKind k, double n, double r, double w, double gamma) {
  double v = 0.0;
  switch (k) {
  case NormalizationKind::rw: v = r * w; break;
  case NormalizationKind::r_pow_w: v = std::pow(r, gamma + 1.0) * w; break;
  case NormalizationKind::r_pow_w2: v = std::pow(r, gamma + 2.0) * w * w; break;
  case NormalizationKind::nw: v = n * w; break;
  case NormalizationKind::n_rpow_w: v = n * std::pow(r, gamma) * w; break;
  }
  if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("normalization is zero or not finite");
  return v;
}

inline int w_power(NormalizationKind k) { return k == NormalizationKind::r_pow_w2 ? 2 : 1; }

// H of the block scaled by u. Pattern functionals compare the raw norms with
// u directly; magnitude-dependent ones see the scaled norms.
inline double eval_scaled_block(const ClusterFunctional& h, std::span<const double> norms, double u,
                                std::vector<double>& scratch) {
  if (!std::any_of(norms.begin(), norms.end(), [u](double x) { return x > u; })) return 0.0;
  if (h.pattern_only()) return h.pattern(exceedance_record_norms(norms, u));
  scratch.resize(norms.size());
  for (std::size_t i = 0; i < norms.size(); ++i) scratch[i] = norms[i] / u;
  return h.on_norms(scratch);
}

// ---------------------------------------------------------------------------
// Monte Carlo over independent blocks

namespace detail {

// Sums of (h, N) over blocks, accumulated in a fixed order.
struct PairSums {
  std::uint64_t blocks = 0;
  CompensatedSum h, h2, n, n2, hn;
  void add(double hv, double nv) {
    ++blocks;
    if (hv == 0.0 && nv == 0.0) return;
    h.add(hv);
    h2.add(hv * hv);
    n.add(nv);
    n2.add(nv * nv);
    hn.add(hv * nv);
  }
  void merge(const PairSums& o) {
    blocks += o.blocks;
    h.add(o.h.value());
    h2.add(o.h2.value());
    n.add(o.n.value());
    n2.add(o.n2.value());
    hn.add(o.hn.value());
  }
  double mean_h() const { return h.value() / static_cast<double>(blocks); }
  double mean_n() const { return n.value() / static_cast<double>(blocks); }
  double var(const CompensatedSum& s2, const CompensatedSum& a, const CompensatedSum& b) const {
    const double m = static_cast<double>(blocks);
    return m < 2 ? 0.0 : (s2.value() - a.value() * b.value() / m) / (m - 1.0);
  }
};

inline constexpr std::size_t kBlockChunk = 256;

// Simulates `n_blocks` independent blocks of length r and reduces
// (H(u^{-1} block), N) over them. iid + pattern functional uses the
// Bernoulli fast path.
inline PairSums simulate_block_sums(const GeneratorModel& model, const ClusterFunctional& h, std::size_t r, double u,
                                    std::size_t n_blocks, std::uint64_t seed, std::size_t workers) {
  const auto w_exact = exact_tail_prob(model, u);
  if (model.kind == ModelKind::iid_pareto && h.pattern_only() && w_exact && *w_exact < 1.0) {
    PairSums s;
    for_each_bernoulli_block(*w_exact, r, n_blocks, seed, 0, [&](BlockRecord&& b) {
      s.add(h.pattern(b.record), static_cast<double>(b.record.count));
    });
    s.blocks = n_blocks;
    return s;
  }
  const auto parts = parallel_chunks<PairSums>(n_blocks, kBlockChunk, workers, [&](std::size_t lo, std::size_t hi) {
    PairSums s;
    std::vector<double> buf(r), scratch;
    for (std::size_t j = lo; j < hi; ++j) {
      SeriesStream(model, seed, 0, j).fill(buf);
      std::size_t k = 0;
      for (double x : buf) k += x > u;
      s.add(k ? eval_scaled_block(h, buf, u, scratch) : 0.0, static_cast<double>(k));
    }
    return s;
  });
  PairSums tot;
  for (const auto& p : parts) tot.merge(p);
  return tot;
}

} // namespace detail

struct BlockMeasureResult {
  MCEstimate estimate;
  double w = 0.0;
  WProvenance w_provenance = WProvenance::model_true;
  double normalizer = 0.0;
  NormalizationKind normalization = NormalizationKind::rw;
};

// E[H(u^{-1} X_{1,r})] / normalization over n_rep fresh blocks. When the
// model has no closed-form w it is estimated from the same blocks through
// E N_1 = r w, and the standard error follows the delta method.
inline BlockMeasureResult block_cluster_measure_detail(const GeneratorModel& model, const ClusterFunctional& h,
                                                       std::size_t r, double u, std::size_t n_rep,
                                                       NormalizationKind norm, std::uint64_t seed,
                                                       std::size_t workers = 1, std::optional<double> gamma = {}) {
  model.validate();
  if (r == 0) throw std::invalid_argument("block_cluster_measure: r must be >= 1");
  if (n_rep < 2) throw std::invalid_argument("block_cluster_measure: n_rep must be >= 2");
  if (!(u > 0.0)) throw std::invalid_argument("block_cluster_measure: u must be positive");
  const double g = gamma.value_or(h.gamma);
  const auto s = detail::simulate_block_sums(model, h, r, u, n_rep, seed, workers);
  const double nd = static_cast<double>(n_rep), rd = static_cast<double>(r);

  BlockMeasureResult res;
  res.normalization = norm;
  const auto w_exact = exact_tail_prob(model, u);
  const double var_h = s.var(s.h2, s.h, s.h);
  if (w_exact && *w_exact < 1.0) {
    res.w = *w_exact;
    res.normalizer = normalization(norm, rd, rd, res.w, g);
    res.estimate = {s.mean_h() / res.normalizer, std::sqrt(var_h / nd) / res.normalizer, n_rep, seed};
    return res;
  }
  const double nbar = s.mean_n();
  if (!(nbar > 0.0)) throw std::runtime_error("block_cluster_measure: no exceedances to estimate w; lower u");
  res.w = nbar / rd;
  res.w_provenance = WProvenance::estimated;
  res.normalizer = normalization(norm, rd, rd, res.w, g);
  const double p = w_power(norm);
  const double hbar = s.mean_h();
  const double value = hbar / res.normalizer;
  // value = hbar * c / nbar^p
  const double dh = 1.0 / res.normalizer, dn = -p * value / nbar;
  const double v =
      (dh * dh * var_h + 2.0 * dh * dn * s.var(s.hn, s.h, s.n) + dn * dn * s.var(s.n2, s.n, s.n)) / nd;
  res.estimate = {value, std::sqrt(std::max(v, 0.0)), n_rep, seed};
  return res;
}

inline MCEstimate block_cluster_measure(const GeneratorModel& model, const ClusterFunctional& h, std::size_t r, double u,
                                        std::size_t n_rep, NormalizationKind norm, std::uint64_t seed,
                                        std::size_t workers = 1, std::optional<double> gamma = {}) {
  return block_cluster_measure_detail(model, h, r, u, n_rep, norm, seed, workers, gamma).estimate;
}

// ---------------------------------------------------------------------------
// Jump times

struct JumpTimeLaw {
  std::vector<double> first; // t(1)/r given A
  std::vector<double> last;  // t(N)/r given A
  double ks_first = 0.0;
  double ks_last = 0.0;
  std::uint64_t blocks_simulated = 0;
  bool fast_path = false;

  double moment_first(double gamma) const { return moment(first, gamma); }
  double moment_last(double gamma) const { return moment(last, gamma); }

private:
  static double moment(const std::vector<double>& v, double gamma) {
    CompensatedSum s;
    for (double x : v) s.add(std::pow(x, gamma));
    return s.value() / static_cast<double>(v.size());
  }
};

// Conditional law of the jump locations given A_1, by rejection on A_1
// (Bernoulli fast path for iid), stopped after n_samples exceeding blocks.
inline JumpTimeLaw jump_time_law(const GeneratorModel& model, std::size_t r, double u, std::size_t n_samples,
                                 std::uint64_t seed, std::size_t workers = 1,
                                 std::uint64_t max_blocks = std::uint64_t{1} << 40) {
  model.validate();
  if (r == 0 || n_samples == 0) throw std::invalid_argument("jump_time_law: r and n_samples must be >= 1");
  JumpTimeLaw law;
  law.first.reserve(n_samples);
  law.last.reserve(n_samples);
  const double rd = static_cast<double>(r);
  const auto w_exact = exact_tail_prob(model, u);
  if (model.kind == ModelKind::iid_pareto && w_exact && *w_exact < 1.0) {
    law.fast_path = true;
    const auto m = static_cast<std::size_t>(std::min<std::uint64_t>(max_blocks, std::uint64_t{1} << 62) );
    for_each_bernoulli_block(*w_exact, r, m, seed, 0, [&](BlockRecord&& b) {
      law.first.push_back(static_cast<double>(b.record.first()) / rd);
      law.last.push_back(static_cast<double>(b.record.last()) / rd);
      law.blocks_simulated = b.block + 1;
      return law.first.size() < n_samples;
    });
  } else {
    constexpr std::size_t kRound = 1 << 15;
    std::uint64_t next = 0;
    while (law.first.size() < n_samples && next < max_blocks) {
      const auto round = static_cast<std::size_t>(std::min<std::uint64_t>(kRound, max_blocks - next));
      using Pairs = std::vector<std::pair<double, double>>;
      const auto parts = parallel_chunks<Pairs>(round, detail::kBlockChunk, workers, [&](std::size_t lo, std::size_t hi) {
        Pairs out;
        std::vector<double> buf(r);
        for (std::size_t j = lo; j < hi; ++j) {
          SeriesStream(model, seed, 0, next + j).fill(buf);
          std::size_t t1 = 0, tn = 0;
          for (std::size_t i = 0; i < r; ++i)
            if (buf[i] > u) {
              if (!t1) t1 = i + 1;
              tn = i + 1;
            }
          // blocks without exceedance are marked by t1 = 0 to keep the index
          out.emplace_back(static_cast<double>(t1), static_cast<double>(tn));
        }
        return out;
      });
      for (const auto& p : parts)
        for (const auto& [t1, tn] : p) {
          ++law.blocks_simulated;
          if (t1 == 0.0) continue;
          law.first.push_back(t1 / rd);
          law.last.push_back(tn / rd);
          if (law.first.size() == n_samples) break;
        }
      if (law.first.size() == n_samples) break;
      next += round;
    }
  }
  if (law.first.empty()) throw std::runtime_error("jump_time_law: no exceeding blocks; lower u or raise the block budget");
  law.ks_first = ks_distance_uniform(law.first);
  law.ks_last = ks_distance_uniform(law.last);
  return law;
}

enum class JointForm { product, positive_difference };

struct JointJumpSpec {
  double gamma1 = 1.0;
  double gamma2 = 1.0;
  JointForm form = JointForm::product;

  // product: s^g1 t^g2, homogeneity g1 + g2; positive_difference: (t-s)_+^g1.
  double homogeneity() const { return form == JointForm::product ? gamma1 + gamma2 : gamma1; }
  double operator()(double s, double t) const {
    if (form == JointForm::product) return std::pow(s, gamma1) * std::pow(t, gamma2);
    return t > s ? std::pow(t - s, gamma1) : 0.0;
  }
};

inline ClusterFunctional joint_jump_functional(const JointJumpSpec& f) {
  ClusterFunctional h;
  h.name = f.form == JointForm::product
               ? "tmin_pow(" + detail::format_number(f.gamma1) + ")*tmax_pow(" + detail::format_number(f.gamma2) + ")"
               : "posdiff_pow(" + detail::format_number(f.gamma1) + ")";
  h.gamma = f.homogeneity();
  h.shift_invariant = f.form == JointForm::positive_difference;
  h.bounded = false;
  h.pattern = [f](const ExceedanceRecord& r) {
    return r.has_exceedance ? f(static_cast<double>(r.first()), static_cast<double>(r.last())) : 0.0;
  };
  auto rule = h.pattern;
  h.on_norms = [rule](std::span<const double> ns) { return rule(exceedance_record_norms(ns, 1.0)); };
  return h;
}

// E[f(t(1), t(N)) 1_A] / (r^{g+1} w), g the homogeneity of f.
inline MCEstimate joint_jump_moment(const GeneratorModel& model, const JointJumpSpec& f, std::size_t r, double u,
                                    std::size_t n_rep, std::uint64_t seed, std::size_t workers = 1) {
  return block_cluster_measure(model, joint_jump_functional(f), r, u, n_rep, NormalizationKind::r_pow_w, seed, workers,
                               f.homogeneity());
}

// ---------------------------------------------------------------------------
// Estimators on one series

struct ResolvedScheme {
  double u = 0.0;
  double w = 0.0;
};

inline ResolvedScheme resolve_scheme(std::span<const double> norms, const BlockScheme& scheme) {
  scheme.validate();
  if (norms.size() < scheme.n)
    throw std::invalid_argument("series has " + std::to_string(norms.size()) + " values, scheme needs n = " +
                                std::to_string(scheme.n));
  ResolvedScheme rs;
  const auto head = norms.first(scheme.n);
  rs.u = resolve_threshold_norms(head, scheme.threshold);
  if (const auto* os = std::get_if<OrderStatistic>(&scheme.threshold)) {
    rs.w = static_cast<double>(os->k) / static_cast<double>(scheme.n);
  } else {
    if (!scheme.w) throw std::invalid_argument("fixed-level scheme needs w (model-true or estimated)");
    rs.w = *scheme.w;
  }
  return rs;
}

namespace detail {

inline double block_sum(std::span<const double> norms, const ClusterFunctional& h, const BlockScheme& scheme, double u) {
  CompensatedSum s;
  std::vector<double> scratch;
  const std::size_t m = scheme.m(), r = scheme.r;
  for (std::size_t j = 0; j < m; ++j) s.add(eval_scaled_block(h, norms.subspan(j * r, r), u, scratch));
  return s.value();
}

} // namespace detail

// (1/(n w r^g)) sum_j H(u^{-1} block_j); g = 0 is the plain blocks estimator.
inline double empirical_cluster_measure_scaled(std::span<const double> norms, const ClusterFunctional& h,
                                               const BlockScheme& scheme, double gamma) {
  const auto rs = resolve_scheme(norms, scheme);
  const double denom = static_cast<double>(scheme.n) * rs.w * std::pow(static_cast<double>(scheme.r), gamma);
  return detail::block_sum(norms, h, scheme, rs.u) / denom;
}

inline double empirical_cluster_measure(std::span<const double> norms, const ClusterFunctional& h,
                                        const BlockScheme& scheme) {
  return empirical_cluster_measure_scaled(norms, h, scheme, 0.0);
}

inline double empirical_cluster_measure(const std::vector<double>& norms, const ClusterFunctional& h,
                                        const BlockScheme& scheme) {
  return empirical_cluster_measure(std::span<const double>(norms), h, scheme);
}

inline double empirical_cluster_measure(const Window& series, const ClusterFunctional& h, const BlockScheme& scheme,
                                        const NormSpec& norm = {}) {
  return empirical_cluster_measure(series.norms(norm), h, scheme);
}

// Streams fixed-level schemes block by block; order statistics materialize.
inline double empirical_cluster_measure(const SeriesHandle& series, const ClusterFunctional& h,
                                        const BlockScheme& scheme, double gamma = 0.0) {
  if (series.eager() || std::holds_alternative<OrderStatistic>(scheme.threshold)) {
    const auto v = series.values();
    return empirical_cluster_measure_scaled(v, h, scheme, gamma);
  }
  scheme.validate();
  if (series.size() < scheme.n) throw std::invalid_argument("series shorter than scheme n");
  if (!scheme.w) throw std::invalid_argument("fixed-level scheme needs w (model-true or estimated)");
  const double u = std::get<FixedLevel>(scheme.threshold).u;
  const std::size_t r = scheme.r, m = scheme.m();
  CompensatedSum s;
  std::vector<double> scratch;
  std::size_t done = 0;
  series.for_each_chunk(r * 4096, [&](std::span<const double> part) {
    for (std::size_t lo = 0; lo + r <= part.size() && done < m; lo += r, ++done)
      s.add(eval_scaled_block(h, part.subspan(lo, r), u, scratch));
  });
  return s.value() / (static_cast<double>(scheme.n) * *scheme.w * std::pow(static_cast<double>(r), gamma));
}

// nu~~* for H = T_max^gamma G: denominator n r^gamma w.
inline double empirical_cluster_measure_rescaled(std::span<const double> norms, const ClusterFunctional& h,
                                                 const BlockScheme& scheme, double gamma) {
  if (!(gamma >= 0.0)) throw std::invalid_argument("rescaled measure: gamma must be >= 0");
  return empirical_cluster_measure_scaled(norms, h, scheme, gamma);
}

// theta~_n = min(1, (gamma+1) nu~~*(T_max^gamma EI)).
inline double extremal_index_estimator(std::span<const double> norms, const BlockScheme& scheme, double gamma) {
  if (!(gamma >= 0.0)) throw std::invalid_argument("extremal_index_estimator: gamma must be >= 0");
  const double v = empirical_cluster_measure_rescaled(norms, tmax_pow_times(gamma, ei()), scheme, gamma);
  return std::min(1.0, (gamma + 1.0) * v);
}

inline double extremal_index_estimator(const SeriesHandle& series, const BlockScheme& scheme, double gamma) {
  if (!(gamma >= 0.0)) throw std::invalid_argument("extremal_index_estimator: gamma must be >= 0");
  return std::min(1.0, (gamma + 1.0) * empirical_cluster_measure(series, tmax_pow_times(gamma, ei()), scheme, gamma));
}

// ---------------------------------------------------------------------------
// Anticlustering diagnostic

struct AnticlusterResult {
  MCEstimate value;
  double w = 0.0;
  WProvenance w_provenance = WProvenance::model_true;
  std::optional<double> iid_exact;
};

inline double anticlustering_iid_exact(double w, double gamma, std::size_t ell, std::size_t r) {
  CompensatedSum s;
  for (std::size_t i = ell; i <= r; ++i) s.add(std::pow(static_cast<double>(i), gamma));
  return w * s.value();
}

// (1/w) sum_{i=ell..r} i^gamma P(X_0 > u, X_i > u), ergodic average over
// n_rep time points in independent stationary stretches; standard error by
// batch means over stretches.
inline AnticlusterResult anticlustering_diagnostic(const GeneratorModel& model, double gamma, std::size_t ell,
                                                   std::size_t r, double u, std::size_t n_rep, std::uint64_t seed,
                                                   std::size_t workers = 1) {
  model.validate();
  if (ell < 1 || ell > r) throw std::invalid_argument("anticlustering_diagnostic: need 1 <= ell <= r");
  if (n_rep == 0) throw std::invalid_argument("anticlustering_diagnostic: n_rep must be >= 1");
  constexpr std::size_t kStretch = 1 << 16;
  const std::size_t stretches = (n_rep + kStretch - 1) / kStretch;
  std::vector<double> weight(r + 1);
  for (std::size_t i = ell; i <= r; ++i) weight[i] = std::pow(static_cast<double>(i), gamma);
  struct Part {
    double s = 0.0, e = 0.0, t = 0.0;
  };
  const auto parts = parallel_map<Part>(stretches, workers, [&](std::size_t k) {
    const std::size_t len = std::min(kStretch, n_rep - k * kStretch);
    std::vector<double> x(len + r);
    SeriesStream(model, seed, k, 0).fill(x);
    CompensatedSum s;
    std::size_t e = 0;
    for (std::size_t t = 0; t < len; ++t) {
      if (x[t] <= u) continue;
      ++e;
      for (std::size_t i = ell; i <= r; ++i)
        if (x[t + i] > u) s.add(weight[i]);
    }
    return Part{s.value(), static_cast<double>(e), static_cast<double>(len)};
  });

  AnticlusterResult res;
  CompensatedSum s_tot, e_tot, t_tot;
  for (const auto& p : parts) {
    s_tot.add(p.s);
    e_tot.add(p.e);
    t_tot.add(p.t);
  }
  const auto w_exact = exact_tail_prob(model, u);
  const double T = t_tot.value();
  const double k = static_cast<double>(stretches);
  if (w_exact && *w_exact < 1.0) {
    res.w = *w_exact;
    const double value = s_tot.value() / T / res.w;
    double v = 0.0;
    if (stretches > 1) {
      // batch means weighted by stretch length
      CompensatedSum dev;
      for (const auto& p : parts) {
        const double d = p.s / res.w - value * p.t;
        dev.add(d * d);
      }
      v = dev.value() * k / ((k - 1.0) * T * T);
    }
    res.value = {value, std::sqrt(v), n_rep, seed};
    if (model.kind == ModelKind::iid_pareto) res.iid_exact = anticlustering_iid_exact(res.w, gamma, ell, r);
  } else {
    if (!(e_tot.value() > 0.0)) throw std::runtime_error("anticlustering_diagnostic: no exceedances; lower u");
    res.w = e_tot.value() / T;
    res.w_provenance = WProvenance::estimated;
    const double value = s_tot.value() / e_tot.value();
    double v = 0.0;
    if (stretches > 1) {
      CompensatedSum dev;
      for (const auto& p : parts) {
        const double d = p.s - value * p.e;
        dev.add(d * d);
      }
      v = dev.value() * k / ((k - 1.0) * e_tot.value() * e_tot.value());
    }
    res.value = {value, std::sqrt(v), n_rep, seed};
  }
  return res;
}

// ---------------------------------------------------------------------------
// JSON records

inline void to_json(nlohmann::json& j, const BlockScheme& s) {
  j = nlohmann::json{{"n", s.n}, {"r", s.r}, {"m", s.m()}};
  if (const auto* fl = std::get_if<FixedLevel>(&s.threshold))
    j["threshold"] = {{"fixed", fl->u}};
  else
    j["threshold"] = {{"order_stat", std::get<OrderStatistic>(s.threshold).k}};
  if (s.w) j["w"] = *s.w;
  j["w_provenance"] = s.w_provenance == WProvenance::model_true ? "model_true" : "estimated";
}

inline void to_json(nlohmann::json& j, const MCEstimate& e) {
  j = nlohmann::json{{"value", e.value}, {"se", e.std_error}, {"n_rep", e.n_rep}, {"seed", e.seed}};
}

struct EstimateRecord {
  std::string op;
  nlohmann::json model;
  nlohmann::json scheme;
  std::string functional;
  double value = 0.0;
  double se = 0.0;
  std::uint64_t n_rep = 0;
  std::uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const EstimateRecord& r) {
  j = nlohmann::json{{"op", r.op},       {"model", r.model}, {"scheme", r.scheme}, {"H", r.functional},
                     {"value", r.value}, {"se", r.se},       {"n_rep", r.n_rep},   {"seed", r.seed}};
}

} // namespace clusterlab
