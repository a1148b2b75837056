#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "clusterlab/estimators.hpp"
#include "clusterlab/functionals.hpp"
#include "clusterlab/generators.hpp"
#include "clusterlab/iid_oracle.hpp"
#include "clusterlab/parallel.hpp"
#include "clusterlab/rng.hpp"
#include "clusterlab/stats.hpp"

namespace clusterlab {

enum class ProcessKind { G_tilde, K_tilde, L_tilde };

inline ProcessKind parse_process_kind(const std::string& s) {
  if (s == "G_tilde" || s == "G") return ProcessKind::G_tilde;
  if (s == "K_tilde" || s == "K") return ProcessKind::K_tilde;
  if (s == "L_tilde" || s == "L") return ProcessKind::L_tilde;
  throw std::invalid_argument("unknown process kind '" + s + "' (expected G_tilde, K_tilde or L_tilde)");
}

inline const char* to_string(ProcessKind k) {
  switch (k) {
  case ProcessKind::G_tilde: return "G_tilde";
  case ProcessKind::K_tilde: return "K_tilde";
  case ProcessKind::L_tilde: return "L_tilde";
  }
  return "?";
}

// G~: sqrt(n w);  K~: sqrt(n r^{2g+1}) w;  L~: sqrt(n w) r^g
inline double process_scale(ProcessKind k, double n, double r, double w, double gamma) {
  double s = 0.0;
  switch (k) {
  case ProcessKind::G_tilde: s = std::sqrt(n * w); break;
  case ProcessKind::K_tilde: s = std::sqrt(n * std::pow(r, 2.0 * gamma + 1.0)) * w; break;
  case ProcessKind::L_tilde: s = std::sqrt(n * w) * std::pow(r, gamma); break;
  }
  if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("process scale is zero or not finite");
  return s;
}

// Exact (E H 1_A, E H^2 1_A) of one block of iid exceedance indicators for
// ei, length_pow(g), length_gt(q), tmax_pow(g) and tmin_pow(g).
inline std::optional<std::pair<double, double>> iid_exact_block_moments(const ClusterFunctional& h, std::size_t r,
                                                                        double w) {
  if (h.name == "ei") {
    const double p = iid::prob_exceedance(r, w);
    return std::pair{p, p};
  }
  const auto open = h.name.find('(');
  if (open == std::string::npos || h.name.back() != ')' || h.name.find('*') != std::string::npos) return std::nullopt;
  const std::string head = h.name.substr(0, open);
  if (head == "length_pow") return std::pair{iid::length_moment(r, w, h.gamma), iid::length_moment(r, w, 2.0 * h.gamma)};
  if (head == "length_gt") {
    const double q = std::stod(h.name.substr(open + 1));
    const auto pmf = iid::length_joint_pmf(r, w);
    CompensatedSum s;
    for (std::size_t i = 1; i <= r; ++i)
      if (static_cast<double>(i) > q) s.add(pmf[i - 1]);
    return std::pair{s.value(), s.value()};
  }
  if (head == "tmax_pow")
    return std::pair{iid::last_jump_moment(r, w, h.gamma), iid::last_jump_moment(r, w, 2.0 * h.gamma)};
  if (head == "tmin_pow")
    return std::pair{iid::first_jump_moment(r, w, h.gamma), iid::first_jump_moment(r, w, 2.0 * h.gamma)};
  return std::nullopt;
}

// Exact variance of the process value for iid data: m Var(H(X_1)) / scale^2.
inline std::optional<double> iid_exact_process_variance(ProcessKind kind, const ClusterFunctional& h,
                                                        const BlockScheme& scheme, double w, double gamma) {
  const auto mom = iid_exact_block_moments(h, scheme.r, w);
  if (!mom) return std::nullopt;
  const double s = process_scale(kind, static_cast<double>(scheme.n), static_cast<double>(scheme.r), w, gamma);
  const double var = mom->second - mom->first * mom->first;
  return static_cast<double>(scheme.m()) * var / (s * s);
}

struct ProcessSample {
  ProcessKind kind = ProcessKind::G_tilde;
  GeneratorModel model;
  BlockScheme scheme;
  double u = 0.0;
  double gamma = 0.0;
  double scale = 0.0;
  std::vector<std::string> functionals;
  std::vector<MCEstimate> centering;         // E[H(X_1)] from the independent run
  std::vector<double> centering_offset_sd;   // m * se(centering) / scale
  std::vector<std::vector<double>> values;   // values[h][replicate]
  std::vector<std::string> warnings;
  std::uint64_t centering_blocks = 0;
  std::uint64_t seed = 0;

  std::size_t n_replicates() const { return values.empty() ? 0 : values.front().size(); }
};

namespace detail {

inline bool all_pattern(const std::vector<ClusterFunctional>& hs) {
  return std::all_of(hs.begin(), hs.end(), [](const ClusterFunctional& h) { return h.pattern_only(); });
}

struct MultiSums {
  std::vector<CompensatedSum> h, h2;
  CompensatedSum n;
  explicit MultiSums(std::size_t k = 0) : h(k), h2(k) {}
  void merge(const MultiSums& o) {
    if (h.empty()) {
      *this = o;
      return;
    }
    for (std::size_t i = 0; i < h.size(); ++i) {
      h[i].add(o.h[i].value());
      h2[i].add(o.h2[i].value());
    }
    n.add(o.n.value());
  }
};

} // namespace detail

// Independent centering run over `blocks` fresh blocks. Returns per-H
// estimates of E[H(X_1)] and the mean exceedance count per block.
inline std::pair<std::vector<MCEstimate>, double> centering_run(const GeneratorModel& model,
                                                                const std::vector<ClusterFunctional>& hs,
                                                                std::size_t r, double u, std::uint64_t blocks,
                                                                std::uint64_t seed, std::size_t workers) {
  const std::size_t k = hs.size();
  const auto w_exact = exact_tail_prob(model, u);
  detail::MultiSums tot(k);
  if (model.kind == ModelKind::iid_pareto && detail::all_pattern(hs) && w_exact && *w_exact < 1.0) {
    for_each_bernoulli_block(*w_exact, r, blocks, seed, 0, [&](BlockRecord&& b) {
      for (std::size_t i = 0; i < k; ++i) {
        const double v = hs[i].pattern(b.record);
        tot.h[i].add(v);
        tot.h2[i].add(v * v);
      }
      tot.n.add(static_cast<double>(b.record.count));
    });
  } else {
    const auto parts = parallel_chunks<detail::MultiSums>(
        blocks, detail::kBlockChunk, workers, [&](std::size_t lo, std::size_t hi) {
          detail::MultiSums s(k);
          std::vector<double> buf(r), scratch;
          for (std::size_t j = lo; j < hi; ++j) {
            SeriesStream(model, seed, 0, j).fill(buf);
            std::size_t cnt = 0;
            for (double x : buf) cnt += x > u;
            if (!cnt) continue;
            s.n.add(static_cast<double>(cnt));
            for (std::size_t i = 0; i < k; ++i) {
              const double v = eval_scaled_block(hs[i], buf, u, scratch);
              s.h[i].add(v);
              s.h2[i].add(v * v);
            }
          }
          return s;
        });
    for (const auto& p : parts) tot.merge(p);
  }
  const double bd = static_cast<double>(blocks);
  std::vector<MCEstimate> est(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double mean = tot.h[i].value() / bd;
    const double var = std::max(0.0, (tot.h2[i].value() - bd * mean * mean) / (bd - 1.0));
    est[i] = {mean, std::sqrt(var / bd), blocks, seed};
  }
  return {est, tot.n.value() / bd};
}

// Replicate values of the centred, normalized block-sum process
//   sum_j {H(X_j) - E^[H(X_1)]} / scale
// over fresh series of length n, centred by an independent run of
// `centering_rep` blocks (at least 20 x n_replicates).
inline ProcessSample sample_process(ProcessKind kind, const GeneratorModel& model,
                                    const std::vector<ClusterFunctional>& hs, const BlockScheme& scheme,
                                    std::size_t n_replicates, std::uint64_t centering_rep, std::uint64_t seed,
                                    std::size_t workers = 1, std::optional<double> gamma = {}) {
  model.validate();
  scheme.validate();
  if (hs.empty()) throw std::invalid_argument("sample_process: no functionals");
  if (n_replicates < 2) throw std::invalid_argument("sample_process: n_replicates must be >= 2");
  if (centering_rep < 20 * static_cast<std::uint64_t>(n_replicates))
    throw std::invalid_argument("sample_process: centering_rep must be at least 20 x n_replicates blocks");
  const auto* fl = std::get_if<FixedLevel>(&scheme.threshold);
  if (!fl) throw std::invalid_argument("sample_process: needs a fixed-level threshold");
  for (const auto& h : hs) {
    if (kind != ProcessKind::L_tilde && !h.shift_invariant)
      throw std::invalid_argument("sample_process: " + std::string(to_string(kind)) + " needs shift-invariant functionals, got '" +
                                  h.name + "'");
  }
  ProcessSample ps;
  ps.kind = kind;
  ps.model = model;
  ps.scheme = scheme;
  ps.u = fl->u;
  ps.seed = seed;
  ps.centering_blocks = centering_rep;
  ps.gamma = gamma.value_or(hs.front().gamma);
  for (const auto& h : hs) ps.functionals.push_back(h.name);

  const std::size_t r = scheme.r, m = scheme.m(), k = hs.size();
  const double u = ps.u;
  auto [cent, nbar] = centering_run(model, hs, r, u, centering_rep, derive_seed(seed, 0xCE), workers);
  ps.centering = cent;

  double w = 0.0;
  if (scheme.w) {
    w = *scheme.w;
  } else if (const auto we = exact_tail_prob(model, u); we && *we < 1.0) {
    w = *we;
    ps.scheme.w = w;
    ps.scheme.w_provenance = WProvenance::model_true;
  } else {
    w = nbar / static_cast<double>(r);
    if (!(w > 0.0)) throw std::runtime_error("sample_process: centering run saw no exceedances; lower u");
    ps.scheme.w = w;
    ps.scheme.w_provenance = WProvenance::estimated;
    ps.warnings.push_back("w estimated from the centering run");
  }
  ps.scale = process_scale(kind, static_cast<double>(scheme.n), static_cast<double>(r), w, ps.gamma);
  for (std::size_t i = 0; i < k; ++i) {
    const double off = static_cast<double>(m) * cent[i].std_error / ps.scale;
    ps.centering_offset_sd.push_back(off);
    if (off > 0.1)
      ps.warnings.push_back("centering SE for '" + hs[i].name + "' shifts replicates by " + detail::format_number(off) +
                            " (sd units); raise centering_rep");
  }

  const bool fast = model.kind == ModelKind::iid_pareto && detail::all_pattern(hs) && exact_tail_prob(model, u) &&
                    *exact_tail_prob(model, u) < 1.0;
  const double w_sim = fast ? *exact_tail_prob(model, u) : 0.0;
  const auto sums = parallel_map<std::vector<double>>(n_replicates, workers, [&](std::size_t rep) {
    std::vector<CompensatedSum> acc(k);
    if (fast) {
      for_each_bernoulli_block(w_sim, r, m, seed, rep + 1, [&](BlockRecord&& b) {
        for (std::size_t i = 0; i < k; ++i) acc[i].add(hs[i].pattern(b.record));
      });
    } else {
      SeriesStream s(model, seed, rep + 1, 0);
      std::vector<double> buf(r), scratch;
      for (std::size_t j = 0; j < m; ++j) {
        s.fill(buf);
        for (std::size_t i = 0; i < k; ++i) acc[i].add(eval_scaled_block(hs[i], buf, u, scratch));
      }
    }
    std::vector<double> out(k);
    for (std::size_t i = 0; i < k; ++i) out[i] = acc[i].value();
    return out;
  });
  ps.values.assign(k, std::vector<double>(n_replicates));
  const double md = static_cast<double>(m);
  for (std::size_t rep = 0; rep < n_replicates; ++rep)
    for (std::size_t i = 0; i < k; ++i) ps.values[i][rep] = (sums[rep][i] - md * cent[i].value) / ps.scale;
  return ps;
}

struct VarianceReport {
  std::vector<std::string> functionals;
  std::vector<std::vector<double>> covariance;
  std::vector<std::vector<double>> covariance_se; // jackknife
  std::vector<double> mean;
  std::vector<std::optional<double>> target;      // per-H variance targets
  std::vector<std::optional<double>> rel_err;
  std::size_t n_replicates = 0;
};

// Sample covariance across replicates with delete-one jackknife SEs, compared
// with the supplied variance targets (diagonal).
inline VarianceReport variance_report(const ProcessSample& ps, const std::vector<std::optional<double>>& targets = {}) {
  const std::size_t k = ps.values.size(), n = ps.n_replicates();
  if (n < 100) throw std::invalid_argument("variance_report: needs at least 100 replicates");
  VarianceReport rep;
  rep.functionals = ps.functionals;
  rep.n_replicates = n;
  rep.covariance.assign(k, std::vector<double>(k));
  rep.covariance_se.assign(k, std::vector<double>(k));
  for (std::size_t i = 0; i < k; ++i) {
    rep.mean.push_back(sample_moments(ps.values[i]).mean);
    for (std::size_t j = i; j < k; ++j) {
      const double c = sample_covariance(ps.values[i], ps.values[j]);
      const double se = jackknife_covariance_se(ps.values[i], ps.values[j]);
      rep.covariance[i][j] = rep.covariance[j][i] = c;
      rep.covariance_se[i][j] = rep.covariance_se[j][i] = se;
    }
  }
  rep.target.assign(k, std::nullopt);
  rep.rel_err.assign(k, std::nullopt);
  for (std::size_t i = 0; i < std::min(k, targets.size()); ++i) {
    if (!targets[i]) continue;
    rep.target[i] = targets[i];
    rep.rel_err[i] = std::abs(rep.covariance[i][i] - *targets[i]) / std::abs(*targets[i]);
  }
  return rep;
}

struct GaussianityReport {
  double ks = 0.0;
  double skewness = 0.0;
  double skewness_se = 0.0;
  double excess_kurtosis = 0.0;
  double excess_kurtosis_se = 0.0;
  std::size_t n_replicates = 0;
};

// Standardizes the replicates of functional `index` and compares them with
// N(0,1); bootstrap SEs for skewness and kurtosis.
inline GaussianityReport gaussianity_check(const ProcessSample& ps, std::size_t index = 0, std::size_t n_boot = 200,
                                           std::uint64_t seed = 0) {
  if (index >= ps.values.size()) throw std::invalid_argument("gaussianity_check: functional index out of range");
  const auto& x = ps.values[index];
  const std::size_t n = x.size();
  if (n < 500) throw std::invalid_argument("gaussianity_check: needs at least 500 replicates");
  GaussianityReport g;
  g.n_replicates = n;
  const auto mom = sample_moments(x);
  const double sd = std::sqrt(mom.variance);
  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = sd > 0.0 ? (x[i] - mom.mean) / sd : 0.0;
  g.ks = ks_distance(z, normal_cdf);
  g.skewness = skewness(x);
  g.excess_kurtosis = excess_kurtosis(x);
  RunningMoments sk, ku;
  std::vector<double> b(n);
  for (std::size_t t = 0; t < n_boot; ++t) {
    RandomStream rng(seed, t, 0xB0);
    for (auto& v : b) v = x[rng.uniform_index(n)];
    sk.add(skewness(b));
    ku.add(excess_kurtosis(b));
  }
  g.skewness_se = std::sqrt(sk.variance());
  g.excess_kurtosis_se = std::sqrt(ku.variance());
  return g;
}

} // namespace clusterlab
