#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "clusterlab/parallel.hpp"
#include "clusterlab/rng.hpp"
#include "clusterlab/stats.hpp"
#include "clusterlab/window.hpp"

namespace clusterlab {

enum class ModelKind { iid_pareto, moving_max, ar1 };

inline const char* to_string(ModelKind k) {
  switch (k) {
  case ModelKind::iid_pareto: return "iid_pareto";
  case ModelKind::moving_max: return "moving_max";
  case ModelKind::ar1: return "ar1";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "iid_pareto" || s == "iid") return ModelKind::iid_pareto;
  if (s == "moving_max" || s == "mm") return ModelKind::moving_max;
  if (s == "ar1") return ModelKind::ar1;
  throw std::invalid_argument("unknown model '" + s + "' (expected iid_pareto, moving_max or ar1)");
}

// Stationary nonnegative series with Pareto(alpha) innovations Z_t:
//   iid_pareto  X_t = Z_t
//   moving_max  X_t = max_{i=0..l} a_i Z_{t-i}
//   ar1         X_t = phi X_{t-1} + Z_t
struct GeneratorModel {
  ModelKind kind = ModelKind::iid_pareto;
  double alpha = 1.0;
  std::vector<double> weights;
  double phi = 0.0;
  std::uint64_t seed_root = 0;

  static GeneratorModel iid(double alpha = 1.0) { return {ModelKind::iid_pareto, alpha, {}, 0.0, 0}; }
  static GeneratorModel moving_max(std::vector<double> a, double alpha = 1.0) {
    return {ModelKind::moving_max, alpha, std::move(a), 0.0, 0};
  }
  static GeneratorModel ar1(double phi, double alpha = 1.0) { return {ModelKind::ar1, alpha, {}, phi, 0}; }

  void validate() const {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("alpha must be a positive finite number");
    if (kind == ModelKind::moving_max) {
      if (weights.empty()) throw std::invalid_argument("moving_max needs at least one weight");
      bool any = false;
      for (double a : weights) {
        if (!(a >= 0.0) || !std::isfinite(a)) throw std::invalid_argument("moving_max weights must be >= 0");
        any |= a > 0.0;
      }
      if (!any) throw std::invalid_argument("moving_max weights must not all be zero");
    }
    if (kind == ModelKind::ar1 && !(phi >= 0.0 && phi < 1.0)) throw std::invalid_argument("ar1 coefficient phi must lie in [0,1)");
  }

  // l for MM(l), 0 for iid; AR(1) is not finitely dependent.
  std::optional<std::size_t> dependence_range() const {
    switch (kind) {
    case ModelKind::iid_pareto: return 0;
    case ModelKind::moving_max: return weights.size() - 1;
    case ModelKind::ar1: return phi == 0.0 ? std::optional<std::size_t>{0} : std::nullopt;
    }
    return std::nullopt;
  }

  std::size_t burn_in() const {
    return kind == ModelKind::ar1 ? 10 * static_cast<std::size_t>(std::ceil(1.0 / (1.0 - phi) - 1e-9)) : 0;
  }

  std::string label() const {
    std::string s = to_string(kind);
    s += "(alpha=" + std::to_string(alpha);
    if (kind == ModelKind::moving_max) {
      s += ",a=";
      for (std::size_t i = 0; i < weights.size(); ++i) s += (i ? ":" : "") + std::to_string(weights[i]);
    }
    if (kind == ModelKind::ar1) s += ",phi=" + std::to_string(phi);
    return s + ")";
  }

  friend bool operator==(const GeneratorModel&, const GeneratorModel&) = default;
};

inline void to_json(nlohmann::json& j, const GeneratorModel& m) {
  j = nlohmann::json{{"model", to_string(m.kind)}, {"alpha", m.alpha}};
  if (m.kind == ModelKind::moving_max) j["weights"] = m.weights;
  if (m.kind == ModelKind::ar1) j["phi"] = m.phi;
  if (m.seed_root != 0) j["seed_root"] = m.seed_root;
}

inline void from_json(const nlohmann::json& j, GeneratorModel& m) {
  if (!j.is_object()) throw std::invalid_argument("model spec must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (key != "model" && key != "alpha" && key != "weights" && key != "phi" && key != "seed_root")
      throw std::invalid_argument("unknown key '" + key + "' in model spec");
  if (!j.contains("model")) throw std::invalid_argument("model spec needs a 'model' field");
  m = GeneratorModel{};
  m.kind = parse_model_kind(j.at("model").get<std::string>());
  if (j.contains("alpha")) m.alpha = j.at("alpha").get<double>();
  if (j.contains("weights")) {
    if (m.kind != ModelKind::moving_max) throw std::invalid_argument("'weights' only applies to moving_max");
    m.weights = j.at("weights").get<std::vector<double>>();
  }
  if (j.contains("phi")) {
    if (m.kind != ModelKind::ar1) throw std::invalid_argument("'phi' only applies to ar1");
    m.phi = j.at("phi").get<double>();
  }
  if (j.contains("seed_root")) m.seed_root = j.at("seed_root").get<std::uint64_t>();
  m.validate();
}

// ---------------------------------------------------------------------------
// Marginal tail

// P(X_0 > u) when known in closed form (iid, MM, AR(1) with phi = 0).
inline std::optional<double> exact_tail_prob(const GeneratorModel& m, double u) {
  if (!(u > 0.0)) throw std::invalid_argument("tail level must be positive");
  auto pareto_sf = [&](double x) { return x <= 1.0 ? 1.0 : std::pow(x, -m.alpha); };
  switch (m.kind) {
  case ModelKind::iid_pareto: return pareto_sf(u);
  case ModelKind::moving_max: {
    // P(X <= u) = prod_i P(Z <= u / a_i)
    double log_cdf = 0.0;
    for (double a : m.weights) {
      if (a == 0.0) continue;
      const double p = pareto_sf(u / a);
      if (p >= 1.0) return 1.0;
      log_cdf += std::log1p(-p);
    }
    return -std::expm1(log_cdf);
  }
  case ModelKind::ar1:
    if (m.phi == 0.0) return pareto_sf(u);
    return std::nullopt;
  }
  return std::nullopt;
}

// First-order tail c u^{-alpha}; exact for iid.
inline double asymptotic_tail_prob(const GeneratorModel& m, double u) {
  const double base = std::pow(u, -m.alpha);
  switch (m.kind) {
  case ModelKind::iid_pareto: return base;
  case ModelKind::moving_max: {
    double c = 0.0;
    for (double a : m.weights) c += std::pow(a, m.alpha);
    return c * base;
  }
  case ModelKind::ar1: return base / (1.0 - std::pow(m.phi, m.alpha));
  }
  return base;
}

// Level u with P(X_0 > u) = w: exact inversion where the tail is known,
// first-order inversion for AR(1).
inline double level_for_w(const GeneratorModel& m, double w) {
  if (!(w > 0.0 && w < 1.0)) throw std::invalid_argument("level_for_w: w must lie in (0,1)");
  m.validate();
  if (m.kind == ModelKind::iid_pareto || (m.kind == ModelKind::ar1 && m.phi == 0.0)) return std::pow(w, -1.0 / m.alpha);
  if (m.kind == ModelKind::ar1) return std::pow(w * (1.0 - std::pow(m.phi, m.alpha)), -1.0 / m.alpha);
  // MM: the survival function is continuous and decreasing above max a_i
  double lo = *std::max_element(m.weights.begin(), m.weights.end());
  if (*exact_tail_prob(m, lo) <= w) throw std::invalid_argument("level_for_w: w too large for this moving_max model");
  double hi = lo * 2.0;
  while (*exact_tail_prob(m, hi) > w) hi *= 2.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (*exact_tail_prob(m, mid) > w ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Sequential simulation

// One stationary stretch of the model driven by the Philox stream
// (seed, replication, block).
class SeriesStream {
public:
  SeriesStream(const GeneratorModel& m, std::uint64_t seed, std::uint64_t replication = 0, std::uint64_t block = 0)
      : model_(&m), rng_(seed, replication, block) {
    m.validate();
    if (m.kind == ModelKind::moving_max) {
      ring_.resize(m.weights.size());
      for (std::size_t i = 0; i + 1 < ring_.size(); ++i) push_innovation();
    }
    if (m.kind == ModelKind::ar1) {
      for (std::size_t i = 0, b = m.burn_in(); i < b; ++i) ar_ = m.phi * ar_ + rng_.pareto(m.alpha);
    }
  }

  double next() {
    switch (model_->kind) {
    case ModelKind::iid_pareto: return rng_.pareto(model_->alpha);
    case ModelKind::moving_max: {
      push_innovation();
      // ring_[head_] holds Z_t, ring_[head_ - i] holds Z_{t-i}
      const auto& a = model_->weights;
      const std::size_t len = ring_.size();
      double x = 0.0;
      for (std::size_t i = 0; i < len; ++i) x = std::max(x, a[i] * ring_[(head_ + len - i) % len]);
      return x;
    }
    case ModelKind::ar1: return ar_ = model_->phi * ar_ + rng_.pareto(model_->alpha);
    }
    return 0.0;
  }

  void fill(std::span<double> out) {
    for (double& x : out) x = next();
  }

private:
  void push_innovation() {
    head_ = (head_ + 1) % ring_.size();
    ring_[head_] = rng_.pareto(model_->alpha);
  }

  const GeneratorModel* model_;
  RandomStream rng_;
  std::vector<double> ring_;
  std::size_t head_ = 0;
  double ar_ = 0.0;
};

enum class Materialization { eager, streamed };

// A generated series. Eager handles hold the values; streamed handles
// regenerate them chunk by chunk from (model, seed, replication).
class SeriesHandle {
public:
  SeriesHandle(GeneratorModel model, std::size_t n, std::uint64_t seed, std::uint64_t replication, Materialization mat)
      : model_(std::move(model)), n_(n), seed_(seed), replication_(replication) {
    if (mat == Materialization::eager) {
      std::vector<double> v(n_);
      SeriesStream(model_, seed_, replication_).fill(v);
      data_ = std::move(v);
    }
  }

  const GeneratorModel& model() const { return model_; }
  std::size_t size() const { return n_; }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t replication() const { return replication_; }
  bool eager() const { return data_.has_value(); }

  std::vector<double> values() const {
    if (data_) return *data_;
    std::vector<double> v(n_);
    SeriesStream(model_, seed_, replication_).fill(v);
    return v;
  }
  Window window() const { return Window(values()); }

  // Calls fn(std::span<const double>) on consecutive chunks in order.
  template <class Fn>
  void for_each_chunk(std::size_t chunk, Fn&& fn) const {
    chunk = std::max<std::size_t>(1, chunk);
    if (data_) {
      for (std::size_t lo = 0; lo < n_; lo += chunk)
        fn(std::span<const double>(data_->data() + lo, std::min(chunk, n_ - lo)));
      return;
    }
    SeriesStream s(model_, seed_, replication_);
    std::vector<double> buf(std::min(chunk, n_));
    for (std::size_t lo = 0; lo < n_; lo += chunk) {
      std::span<double> part(buf.data(), std::min(chunk, n_ - lo));
      s.fill(part);
      fn(std::span<const double>(part));
    }
  }

private:
  GeneratorModel model_;
  std::size_t n_;
  std::uint64_t seed_;
  std::uint64_t replication_;
  std::optional<std::vector<double>> data_;
};

inline SeriesHandle generate(const GeneratorModel& model, std::size_t n, std::uint64_t seed,
                             Materialization mat = Materialization::eager, std::uint64_t replication = 0) {
  if (n == 0) throw std::invalid_argument("generate: n must be >= 1");
  model.validate();
  return SeriesHandle(model, n, seed, replication, mat);
}

// Exceedance fraction of a generated series at level u with a batch-means
// standard error (100 batches), valid for dependent series.
inline MCEstimate estimate_tail_prob(const GeneratorModel& model, double u, std::size_t n, std::uint64_t seed) {
  const std::size_t batches = std::min<std::size_t>(100, n);
  const std::size_t len = n / batches;
  SeriesStream s(model, seed);
  std::vector<double> rates;
  rates.reserve(batches);
  for (std::size_t b = 0; b < batches; ++b) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < len; ++i) hits += s.next() > u;
    rates.push_back(static_cast<double>(hits) / static_cast<double>(len));
  }
  return mc_estimate(rates, seed);
}

// ---------------------------------------------------------------------------
// Bernoulli exceedance patterns (iid fast path)

struct BlockRecord {
  std::size_t block = 0; // 0-based block index
  ExceedanceRecord record;
};

// Walks a Bernoulli(w) indicator sequence of length m*r by geometric skips and
// reports the blocks that contain at least one success, in order. Exact in law
// for iid exceedance indicators; cost ~ m*r*w draws.
// fn may return bool; false stops the walk.
template <class Fn>
void for_each_bernoulli_block(double w, std::size_t r, std::size_t m, std::uint64_t seed, std::uint64_t replication,
                              Fn&& fn) {
  if (!(w > 0.0 && w < 1.0)) throw std::invalid_argument("bernoulli patterns: w must lie in (0,1)");
  if (r == 0) throw std::invalid_argument("bernoulli patterns: r must be >= 1");
  RandomStream rng(seed, replication, 0);
  const std::uint64_t total = static_cast<std::uint64_t>(r) * m;
  std::uint64_t pos = 0;
  std::size_t cur_block = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> times;
  auto flush = [&]() -> bool {
    if (times.empty()) return true;
    BlockRecord rec{cur_block, record_from_times(std::move(times))};
    times.clear();
    if constexpr (std::is_same_v<std::invoke_result_t<Fn&, BlockRecord&&>, bool>) {
      return fn(std::move(rec));
    } else {
      fn(std::move(rec));
      return true;
    }
  };
  for (;;) {
    const std::uint64_t skip = rng.geometric_failures(w);
    if (skip >= total - pos) break;
    pos += skip;
    const auto b = static_cast<std::size_t>(pos / r);
    if (b != cur_block) {
      if (!flush()) return;
      cur_block = b;
    }
    times.push_back(static_cast<std::size_t>(pos % r) + 1);
    if (++pos >= total) break;
  }
  flush();
}

inline std::vector<BlockRecord> bernoulli_exceeding_blocks(double w, std::size_t r, std::size_t m, std::uint64_t seed,
                                                           std::uint64_t replication = 0) {
  std::vector<BlockRecord> out;
  for_each_bernoulli_block(w, r, m, seed, replication, [&](BlockRecord&& b) { out.push_back(std::move(b)); });
  return out;
}

// All m blocks, including those without exceedances.
inline std::vector<ExceedanceRecord> bernoulli_pattern_blocks(double w, std::size_t r, std::size_t m, std::uint64_t seed) {
  std::vector<ExceedanceRecord> out(m);
  for_each_bernoulli_block(w, r, m, seed, 0, [&](BlockRecord&& b) { out[b.block] = std::move(b.record); });
  return out;
}

// ---------------------------------------------------------------------------
// Block-maxima route to the extremal index

enum class WSource { model_true, estimated };

struct ThetaOracleResult {
  MCEstimate estimate;
  double w = 0.0;
  double rw = 0.0;
  WSource w_source = WSource::estimated;
  std::size_t blocks = 0;
  std::size_t exceeding_blocks = 0;
};

namespace detail {

struct BlockCounts {
  std::uint64_t blocks = 0, a = 0, n = 0, n2 = 0, an = 0;
  void merge(const BlockCounts& o) {
    blocks += o.blocks;
    a += o.a;
    n += o.n;
    n2 += o.n2;
    an += o.an;
  }
};

} // namespace detail

// P(X*_{1,r} > u) / (r w) over m = floor(n/r) independent stationary blocks.
// With WSource::estimated (the default) w is replaced by the block exceedance
// count, giving the ratio sum A_j / sum N_j (E N_j = r w exactly) with a
// delta-method standard error. All sums are integers, so the result does not
// depend on the worker count.
inline ThetaOracleResult block_maxima_theta_oracle(const GeneratorModel& model, std::size_t n, std::size_t r, double u,
                                                   std::uint64_t seed, std::size_t workers = 1,
                                                   WSource source = WSource::estimated) {
  model.validate();
  if (r == 0 || r > n) throw std::invalid_argument("block_maxima_theta_oracle: need 1 <= r <= n");
  if (!(u > 0.0)) throw std::invalid_argument("block_maxima_theta_oracle: u must be positive");
  const std::size_t m = n / r;
  std::optional<double> w_true = exact_tail_prob(model, u);
  if (source == WSource::model_true && !w_true)
    throw std::invalid_argument("block_maxima_theta_oracle: no closed-form w for " + model.label());

  detail::BlockCounts tot;
  const bool fast = model.kind == ModelKind::iid_pareto && w_true && *w_true < 1.0;
  if (fast) {
    tot.blocks = m;
    for_each_bernoulli_block(*w_true, r, m, seed, 0, [&](BlockRecord&& b) {
      const std::uint64_t c = b.record.count;
      tot.a += 1;
      tot.n += c;
      tot.n2 += c * c;
      tot.an += c;
    });
  } else {
    constexpr std::size_t kChunk = 256;
    const auto parts = parallel_chunks<detail::BlockCounts>(m, kChunk, workers, [&](std::size_t lo, std::size_t hi) {
      detail::BlockCounts c;
      std::vector<double> buf(r);
      for (std::size_t j = lo; j < hi; ++j) {
        SeriesStream s(model, seed, 0, j);
        s.fill(buf);
        std::uint64_t k = 0;
        for (double x : buf) k += x > u;
        c.blocks += 1;
        c.a += k > 0;
        c.n += k;
        c.n2 += k * k;
        c.an += k > 0 ? k : 0;
      }
      return c;
    });
    for (const auto& p : parts) tot.merge(p);
  }
  if (tot.a == 0) throw std::runtime_error("block_maxima_theta_oracle: no block exceeded u; lower u or increase n");

  ThetaOracleResult res;
  res.blocks = m;
  res.exceeding_blocks = tot.a;
  const double md = static_cast<double>(m);
  const double abar = static_cast<double>(tot.a) / md;
  const double var_a = abar * (1.0 - abar) * md / (md - 1.0);
  if (source == WSource::model_true) {
    res.w = *w_true;
    res.w_source = WSource::model_true;
    const double d = static_cast<double>(r) * res.w;
    res.estimate = {abar / d, std::sqrt(var_a / md) / d, m, seed};
  } else {
    const double nbar = static_cast<double>(tot.n) / md;
    res.w = nbar / static_cast<double>(r);
    res.w_source = WSource::estimated;
    const double var_n = (static_cast<double>(tot.n2) - md * nbar * nbar) / (md - 1.0);
    const double cov = (static_cast<double>(tot.an) - md * abar * nbar) / (md - 1.0);
    const double theta = abar / nbar;
    const double v = (var_a - 2.0 * theta * cov + theta * theta * var_n) / (nbar * nbar * md);
    res.estimate = {theta, std::sqrt(std::max(v, 0.0)), m, seed};
  }
  res.rw = static_cast<double>(r) * res.w;
  return res;
}

// ---------------------------------------------------------------------------
// Binary dump: "CLSTRLAB" | u32 version | u64 json length | model JSON |
// u64 n | u64 seed | n float64, all little-endian.

struct SeriesDump {
  GeneratorModel model;
  std::uint64_t seed = 0;
  std::vector<double> values;
};

namespace detail {

inline constexpr char kDumpMagic[8] = {'C', 'L', 'S', 'T', 'R', 'L', 'A', 'B'};

template <class T>
void put_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(std::istream& is) {
  unsigned char b[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) throw std::runtime_error("series dump: truncated file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

} // namespace detail

inline void write_series_binary(const std::string& path, const SeriesHandle& series) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  const std::string js = nlohmann::json(series.model()).dump();
  os.write(detail::kDumpMagic, 8);
  detail::put_le<std::uint32_t>(os, 1);
  detail::put_le<std::uint64_t>(os, js.size());
  os.write(js.data(), static_cast<std::streamsize>(js.size()));
  detail::put_le<std::uint64_t>(os, series.size());
  detail::put_le<std::uint64_t>(os, series.seed());
  series.for_each_chunk(1 << 16, [&](std::span<const double> part) {
    for (double x : part) detail::put_le<double>(os, x);
  });
  if (!os) throw std::runtime_error("write to '" + path + "' failed");
}

inline SeriesDump read_series_binary(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, detail::kDumpMagic, 8) != 0)
    throw std::runtime_error("'" + path + "' is not a series dump");
  if (detail::get_le<std::uint32_t>(is) != 1) throw std::runtime_error("unsupported series dump version");
  const auto len = detail::get_le<std::uint64_t>(is);
  std::string js(len, '\0');
  if (!is.read(js.data(), static_cast<std::streamsize>(len))) throw std::runtime_error("series dump: truncated header");
  SeriesDump d;
  d.model = nlohmann::json::parse(js).get<GeneratorModel>();
  const auto n = detail::get_le<std::uint64_t>(is);
  d.seed = detail::get_le<std::uint64_t>(is);
  d.values.resize(n);
  for (auto& x : d.values) x = detail::get_le<double>(is);
  return d;
}

} // namespace clusterlab
