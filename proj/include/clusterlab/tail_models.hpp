#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "clusterlab/functionals.hpp"
#include "clusterlab/generators.hpp"
#include "clusterlab/parallel.hpp"
#include "clusterlab/rng.hpp"
#include "clusterlab/stats.hpp"

namespace clusterlab {

// Truncated tail-process path Y_{lo..hi}; coordinates outside are 0.
struct TailPath {
  std::vector<double> values;
  std::size_t center = 0;

  long lo() const { return -static_cast<long>(center); }
  long hi() const { return static_cast<long>(values.size()) - 1 - static_cast<long>(center); }
  double at(long j) const {
    const long i = j + static_cast<long>(center);
    return i < 0 || i >= static_cast<long>(values.size()) ? 0.0 : values[static_cast<std::size_t>(i)];
  }
  double y0() const { return values[center]; }

  // Y*_{-M,-1} <= 1
  bool anchored() const {
    for (std::size_t i = 0; i < center; ++i)
      if (std::abs(values[i]) > 1.0) return false;
    return true;
  }
  // Y*_{1,M} <= 1
  bool forward_below_one() const {
    for (std::size_t i = center + 1; i < values.size(); ++i)
      if (std::abs(values[i]) > 1.0) return false;
    return true;
  }
  // offset (>= 0) of the last coordinate with |Y_j| > 1
  long last_exceedance() const {
    for (std::size_t i = values.size(); i-- > center;)
      if (std::abs(values[i]) > 1.0) return static_cast<long>(i - center);
    return 0;
  }
  std::vector<double> norms() const {
    std::vector<double> ns(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) ns[i] = std::abs(values[i]);
    return ns;
  }
};

// Tail process of a generator model. For a big innovation at lag i:
//   iid          Y_j = 0 for j != 0
//   MM(l)        lag i w.p. a_i^alpha / sum a^alpha, Y_j = Y_0 a_{i+j} / a_i
//   AR(1)        Y_j = phi^j Y_0 forward; backward Y_{-j} = phi^{-j} Y_0 for
//                j <= K, 0 beyond, with P(K = k) = (1 - phi^alpha) phi^{k alpha}
// |Y_0| is Pareto(alpha) and independent of the lag.
class TailProcessModel {
public:
  explicit TailProcessModel(GeneratorModel m, std::size_t horizon = 1024) : model_(std::move(m)), horizon_(horizon) {
    model_.validate();
    if (model_.kind == ModelKind::moving_max) {
      double tot = 0.0;
      for (double a : model_.weights) {
        tot += std::pow(a, model_.alpha);
        lag_cdf_.push_back(tot);
      }
      for (double& c : lag_cdf_) c /= tot;
      lag_cdf_.back() = 1.0;
    }
    if (model_.kind == ModelKind::ar1 && horizon_ == 0) throw std::invalid_argument("AR(1) tail model needs horizon >= 1");
  }

  const GeneratorModel& generator() const { return model_; }
  double alpha() const { return model_.alpha; }

  // Effective truncation: exact support for iid and MM(l).
  std::size_t horizon() const {
    switch (model_.kind) {
    case ModelKind::iid_pareto: return 0;
    case ModelKind::moving_max: return model_.weights.size() - 1;
    case ModelKind::ar1: return model_.phi == 0.0 ? 0 : horizon_;
    }
    return horizon_;
  }

  std::optional<double> theta_exact() const {
    switch (model_.kind) {
    case ModelKind::iid_pareto: return 1.0;
    case ModelKind::moving_max: {
      double mx = 0.0, tot = 0.0;
      for (double a : model_.weights) {
        const double p = std::pow(a, model_.alpha);
        mx = std::max(mx, p);
        tot += p;
      }
      return mx / tot;
    }
    case ModelKind::ar1: return 1.0 - std::pow(model_.phi, model_.alpha);
    }
    return std::nullopt;
  }

  void sample_into(RandomStream& rng, TailPath& path) const {
    const double y0 = rng.pareto(model_.alpha);
    switch (model_.kind) {
    case ModelKind::iid_pareto:
      path.values.assign(1, y0);
      path.center = 0;
      return;
    case ModelKind::moving_max: {
      const double u = rng.uniform();
      const std::size_t i =
          static_cast<std::size_t>(std::upper_bound(lag_cdf_.begin(), lag_cdf_.end(), u) - lag_cdf_.begin());
      const auto& a = model_.weights;
      path.values.resize(a.size());
      for (std::size_t k = 0; k < a.size(); ++k) path.values[k] = y0 * a[k] / a[i];
      path.center = i;
      return;
    }
    case ModelKind::ar1: {
      const double phi = model_.phi;
      if (phi == 0.0) {
        path.values.assign(1, y0);
        path.center = 0;
        return;
      }
      const std::uint64_t k = rng.geometric_failures(1.0 - std::pow(phi, model_.alpha));
      const std::size_t back = static_cast<std::size_t>(std::min<std::uint64_t>(k, horizon_));
      path.values.resize(back + 1 + horizon_);
      path.center = back;
      double y = y0;
      for (std::size_t j = 0; j <= horizon_; ++j, y *= phi) path.values[back + j] = y;
      y = y0;
      for (std::size_t j = 1; j <= back; ++j) {
        y /= phi;
        path.values[back - j] = y;
      }
      return;
    }
    }
  }

  TailPath sample(RandomStream& rng) const {
    TailPath p;
    sample_into(rng, p);
    return p;
  }

private:
  GeneratorModel model_;
  std::size_t horizon_;
  std::vector<double> lag_cdf_;
};

// Path number `index` of the stream family `seed`.
inline TailPath sample_tail_path(const TailProcessModel& model, std::uint64_t seed, std::uint64_t index = 0) {
  RandomStream rng(seed, index, 0);
  return model.sample(rng);
}

namespace detail {

inline constexpr std::size_t kPathChunk = 4096;

// Per-path map with integer or moment reductions in fixed chunk order.
template <class Acc, class Fn>
Acc reduce_paths(const TailProcessModel& model, std::size_t n_paths, std::uint64_t seed, std::size_t workers, Fn&& fn) {
  const auto parts = parallel_chunks<Acc>(n_paths, kPathChunk, workers, [&](std::size_t lo, std::size_t hi) {
    Acc acc;
    TailPath path;
    for (std::size_t i = lo; i < hi; ++i) {
      RandomStream rng(seed, i, 0);
      model.sample_into(rng, path);
      fn(acc, path);
    }
    return acc;
  });
  Acc total;
  for (const auto& p : parts) total.merge(p);
  return total;
}

struct Counter {
  std::uint64_t n = 0, hits = 0;
  void merge(const Counter& o) {
    n += o.n;
    hits += o.hits;
  }
  MCEstimate estimate(std::uint64_t seed) const {
    const double p = static_cast<double>(hits) / static_cast<double>(n);
    const double se = n > 1 ? std::sqrt(p * (1.0 - p) / static_cast<double>(n - 1)) : 0.0;
    return {p, se, n, seed};
  }
};

} // namespace detail

struct CandidateTheta {
  MCEstimate value; // exact (se 0) when the model has a closed form, else == mc
  MCEstimate mc;    // tail-path Monte Carlo of P(Y*_{1,M} <= 1)
  bool exact = false;
};

inline CandidateTheta candidate_theta(const TailProcessModel& model, std::size_t n_paths, std::uint64_t seed,
                                      std::size_t workers = 1) {
  if (n_paths == 0) throw std::invalid_argument("candidate_theta: n_paths must be >= 1");
  const auto c = detail::reduce_paths<detail::Counter>(model, n_paths, seed, workers,
                                                       [](detail::Counter& acc, const TailPath& p) {
                                                         acc.n += 1;
                                                         acc.hits += p.forward_below_one();
                                                       });
  CandidateTheta out;
  out.mc = c.estimate(seed);
  if (const auto t = model.theta_exact()) {
    out.value = {*t, 0.0, n_paths, seed};
    out.exact = true;
  } else {
    out.value = out.mc;
  }
  return out;
}

struct ClusterIndexEstimate {
  std::string functional;
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n_paths = 0;
  std::size_t horizon = 0;
};

namespace detail {

struct MomentAcc {
  RunningMoments m;
  void merge(const MomentAcc& o) { m.merge(o.m); }
};

} // namespace detail

// nu*(H) = E[H(Y) 1{Y*_{-M,-1} <= 1}]. The horizon error is the mass of the
// path beyond M (zero for iid and MM(l), O(phi^M) for AR(1)).
inline ClusterIndexEstimate cluster_index(const TailProcessModel& model, const ClusterFunctional& h, std::size_t n_paths,
                                          std::uint64_t seed, std::size_t workers = 1) {
  if (n_paths == 0) throw std::invalid_argument("cluster_index: n_paths must be >= 1");
  if (!h.vanishes_around_zero) throw std::invalid_argument("cluster_index: H must vanish around zero");
  const auto acc = detail::reduce_paths<detail::MomentAcc>(model, n_paths, seed, workers,
                                                           [&h](detail::MomentAcc& a, const TailPath& p) {
                                                             a.m.add(p.anchored() ? h.eval_norms(p.norms()) : 0.0);
                                                           });
  const auto e = acc.m.estimate(seed);
  return {h.name, e.value, e.std_error, n_paths, model.horizon()};
}

struct ZSample {
  TailPath path;
  std::size_t trials = 0;
};

// Z: Y conditioned on Y*_{-M,-1} <= 1, by rejection. Expected trials 1/theta.
inline ZSample sample_Z(const TailProcessModel& model, std::uint64_t seed, std::uint64_t index = 0,
                        std::size_t max_trials = 1000000) {
  if (const auto t = model.theta_exact(); t && !(*t > 0.0)) throw std::invalid_argument("sample_Z: theta must be > 0");
  RandomStream rng(seed, index, 1);
  ZSample z;
  while (z.trials < max_trials) {
    model.sample_into(rng, z.path);
    ++z.trials;
    if (z.path.anchored()) return z;
  }
  throw std::runtime_error("sample_Z: rejection budget of " + std::to_string(max_trials) +
                           " trials exceeded (acceptance rate 0 of " + std::to_string(z.trials) + ")");
}

struct ZExpectation {
  MCEstimate value; // E[H(Z)]
  double acceptance_rate = 0.0;
  std::uint64_t trials = 0;
};

inline ZExpectation z_expectation(const TailProcessModel& model, const ClusterFunctional& h, std::size_t n_samples,
                                  std::uint64_t seed, std::size_t workers = 1, std::size_t max_trials_per_sample = 1000000) {
  if (n_samples == 0) throw std::invalid_argument("z_expectation: n_samples must be >= 1");
  struct Part {
    RunningMoments m;
    std::uint64_t trials = 0;
  };
  const auto parts = parallel_chunks<Part>(n_samples, detail::kPathChunk, workers, [&](std::size_t lo, std::size_t hi) {
    Part p;
    for (std::size_t i = lo; i < hi; ++i) {
      const auto z = sample_Z(model, seed, i, max_trials_per_sample);
      p.trials += z.trials;
      p.m.add(h.eval_norms(z.path.norms()));
    }
    return p;
  });
  ZExpectation out;
  RunningMoments m;
  for (const auto& p : parts) {
    m.merge(p.m);
    out.trials += p.trials;
  }
  out.value = m.estimate(seed);
  out.acceptance_rate = static_cast<double>(n_samples) / static_cast<double>(out.trials);
  return out;
}

// Limiting conditional pmf of the cluster length,
//   f(q) = P(Y*_{-inf,-1} <= 1, |Y_{q-1}| > 1, Y*_{q,inf} <= 1) / theta.
// The events are disjoint in q, so sum_q f(q) = P(anchor) / theta.
struct ClusterLengthPmf {
  std::vector<MCEstimate> f; // q = 1..q_max
  MCEstimate total;          // sum over all q, including q > q_max
  MCEstimate theta;
  std::size_t n_paths = 0;
};

inline ClusterLengthPmf limiting_cluster_length_pmf(const TailProcessModel& model, std::size_t q_max, std::size_t n_paths,
                                                    std::uint64_t seed, std::size_t workers = 1) {
  if (n_paths < 2) throw std::invalid_argument("limiting_cluster_length_pmf: n_paths must be >= 2");
  struct Acc {
    std::vector<std::uint64_t> counts;
    std::uint64_t anchored = 0;
    void merge(const Acc& o) {
      if (counts.size() < o.counts.size()) counts.resize(o.counts.size(), 0);
      for (std::size_t i = 0; i < o.counts.size(); ++i) counts[i] += o.counts[i];
      anchored += o.anchored;
    }
  };
  const auto acc = detail::reduce_paths<Acc>(model, n_paths, seed, workers, [q_max](Acc& a, const TailPath& p) {
    if (!p.anchored()) return;
    ++a.anchored;
    const auto q = static_cast<std::size_t>(p.last_exceedance()) + 1;
    if (q <= q_max) {
      if (a.counts.size() < q_max) a.counts.resize(q_max, 0);
      ++a.counts[q - 1];
    }
  });

  ClusterLengthPmf out;
  out.n_paths = n_paths;
  if (const auto t = model.theta_exact()) {
    out.theta = {*t, 0.0, n_paths, seed};
  } else {
    out.theta = candidate_theta(model, n_paths, derive_seed(seed, 1), workers).mc;
  }
  const double th = out.theta.value, th_se = out.theta.std_error;
  const double nd = static_cast<double>(n_paths);
  auto scaled = [&](std::uint64_t count) {
    const double p = static_cast<double>(count) / nd;
    const double se_p = std::sqrt(p * (1.0 - p) / (nd - 1.0));
    const double v = p / th;
    const double se = std::sqrt(se_p * se_p / (th * th) + v * v * th_se * th_se / (th * th));
    return MCEstimate{v, se, n_paths, seed};
  };
  out.f.resize(q_max);
  for (std::size_t q = 0; q < q_max; ++q) out.f[q] = scaled(q < acc.counts.size() ? acc.counts[q] : 0);
  out.total = scaled(acc.anchored);
  return out;
}

// ---------------------------------------------------------------------------
// Conditional-law oracle straight from the generator.

struct EmpiricalTailLaw {
  std::size_t halfwidth = 0;
  double u = 0.0;
  std::vector<double> windows; // rows of u^{-1} X_{t-h..t+h} with X_t > u
  std::uint64_t simulated = 0;

  std::size_t count() const { return windows.size() / (2 * halfwidth + 1); }
  double at(std::size_t row, long j) const {
    return windows[row * (2 * halfwidth + 1) + static_cast<std::size_t>(j + static_cast<long>(halfwidth))];
  }
  // P(|Y_j| > 1) estimate
  MCEstimate exceed_prob(long j) const {
    std::vector<double> ind(count());
    for (std::size_t i = 0; i < ind.size(); ++i) ind[i] = std::abs(at(i, j)) > 1.0 ? 1.0 : 0.0;
    return mc_estimate(ind);
  }
  std::vector<double> marginal(long j) const {
    std::vector<double> v(count());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = at(i, j);
    return v;
  }
};

// Simulates `n_sims` time points in independent stationary stretches and
// keeps every window u^{-1} X_{t-h..t+h} centred at an exceedance X_t > u.
inline EmpiricalTailLaw empirical_tail_path_oracle(const GeneratorModel& model, double u, std::size_t halfwidth,
                                                   std::size_t n_sims, std::uint64_t seed, std::size_t workers = 1) {
  if (n_sims == 0) throw std::invalid_argument("empirical_tail_path_oracle: n_sims must be >= 1");
  if (!(u > 0.0)) throw std::invalid_argument("empirical_tail_path_oracle: u must be positive");
  model.validate();
  constexpr std::size_t kStretch = 1 << 16;
  const std::size_t width = 2 * halfwidth + 1;
  const std::size_t stretches = (n_sims + kStretch - 1) / kStretch;
  const auto parts = parallel_map<std::vector<double>>(stretches, workers, [&](std::size_t s) {
    const std::size_t len = std::min(kStretch, n_sims - s * kStretch) + 2 * halfwidth;
    std::vector<double> x(len);
    SeriesStream(model, seed, s, 0).fill(x);
    std::vector<double> out;
    for (std::size_t t = halfwidth; t + halfwidth < len; ++t) {
      if (std::abs(x[t]) <= u) continue;
      for (std::size_t k = t - halfwidth; k <= t + halfwidth; ++k) out.push_back(x[k] / u);
    }
    return out;
  });
  EmpiricalTailLaw law;
  law.halfwidth = halfwidth;
  law.u = u;
  law.simulated = n_sims;
  for (const auto& p : parts) law.windows.insert(law.windows.end(), p.begin(), p.end());
  if (law.windows.size() < width)
    throw std::runtime_error("empirical_tail_path_oracle: no exceedances of u = " + std::to_string(u) +
                             "; lower u or increase n_sims");
  return law;
}

} // namespace clusterlab
