#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace clusterlab {

enum class NormKind { euclidean, sup, l1 };

struct NormSpec {
  NormKind kind = NormKind::euclidean;

  double operator()(std::span<const double> x) const {
    if (x.size() == 1) return std::abs(x[0]);
    double acc = 0.0;
    switch (kind) {
    case NormKind::euclidean:
      for (double v : x) acc += v * v;
      return std::sqrt(acc);
    case NormKind::sup:
      for (double v : x) acc = std::max(acc, std::abs(v));
      return acc;
    case NormKind::l1:
      for (double v : x) acc += std::abs(v);
      return acc;
    }
    return acc;
  }
};

inline NormKind parse_norm_kind(const std::string& s) {
  if (s == "euclidean" || s == "l2") return NormKind::euclidean;
  if (s == "sup" || s == "max" || s == "linf") return NormKind::sup;
  if (s == "l1") return NormKind::l1;
  throw std::invalid_argument("unknown norm '" + s + "'");
}

inline const char* to_string(NormKind k) {
  switch (k) {
  case NormKind::euclidean: return "euclidean";
  case NormKind::sup: return "sup";
  case NormKind::l1: return "l1";
  }
  return "?";
}

// A finite stretch of d-dimensional observations, stored row-major.
class Window {
public:
  Window() = default;
  explicit Window(std::size_t dim) : dim_(dim) {
    if (dim_ == 0) throw std::invalid_argument("Window: dimension must be >= 1");
  }
  // Scalar observations (d = 1).
  Window(std::vector<double> scalars) : values_(std::move(scalars)) {} // NOLINT(google-explicit-constructor)
  Window(std::vector<double> flat, std::size_t dim) : values_(std::move(flat)), dim_(dim) {
    if (dim_ == 0) throw std::invalid_argument("Window: dimension must be >= 1");
    if (values_.size() % dim_ != 0) throw std::invalid_argument("Window: ragged data");
  }

  static Window from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) return Window{};
    Window w(rows.front().size());
    for (const auto& row : rows) w.push_back(row);
    return w;
  }

  std::size_t size() const { return values_.size() / dim_; }
  std::size_t dim() const { return dim_; }
  bool empty() const { return values_.empty(); }

  std::span<const double> operator[](std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
  std::span<const double> flat() const { return values_; }
  std::vector<double>& flat_mut() { return values_; }

  void push_back(std::span<const double> row) {
    if (row.size() != dim_) throw std::invalid_argument("Window: row dimension mismatch");
    values_.insert(values_.end(), row.begin(), row.end());
  }
  void push_back(double v) { push_back(std::span<const double>(&v, 1)); }

  Window slice(std::size_t first, std::size_t count) const {
    Window w(dim_);
    w.values_.assign(values_.begin() + static_cast<std::ptrdiff_t>(first * dim_),
                     values_.begin() + static_cast<std::ptrdiff_t>((first + count) * dim_));
    return w;
  }

  std::vector<double> norms(const NormSpec& norm = {}) const {
    std::vector<double> out(size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = norm((*this)[i]);
    return out;
  }

  friend bool operator==(const Window&, const Window&) = default;

private:
  std::vector<double> values_;
  std::size_t dim_ = 1;
};

struct FixedLevel {
  double u = 1.0;
};
struct OrderStatistic {
  std::size_t k = 1;
};
using ThresholdSpec = std::variant<FixedLevel, OrderStatistic>;

enum class WProvenance { model_true, estimated };

// (n, r, threshold, w) with m = floor(n / r) derived.
struct BlockScheme {
  std::size_t n = 0;
  std::size_t r = 1;
  ThresholdSpec threshold = FixedLevel{};
  std::optional<double> w;
  WProvenance w_provenance = WProvenance::model_true;

  std::size_t m() const { return r == 0 ? 0 : n / r; }

  void validate() const {
    if (r == 0) throw std::invalid_argument("block size r must be >= 1");
    if (r > n) throw std::invalid_argument("block larger than sample");
    if (const auto* os = std::get_if<OrderStatistic>(&threshold)) {
      if (os->k == 0 || os->k >= n) throw std::invalid_argument("order statistic k must satisfy 1 <= k < n");
    }
    if (const auto* fl = std::get_if<FixedLevel>(&threshold)) {
      if (!(fl->u > 0.0)) throw std::invalid_argument("threshold level must be positive");
    }
    if (w && !(*w > 0.0 && *w < 1.0)) throw std::invalid_argument("exceedance probability w must lie in (0,1)");
  }
};

// Exceedance structure of one block: times are 1-based in-block positions.
struct ExceedanceRecord {
  std::size_t count = 0;
  std::vector<std::size_t> times;
  std::size_t length = 0;
  bool has_exceedance = false;

  std::size_t first() const { return times.empty() ? 0 : times.front(); }
  std::size_t last() const { return times.empty() ? 0 : times.back(); }

  friend bool operator==(const ExceedanceRecord&, const ExceedanceRecord&) = default;
};

inline ExceedanceRecord record_from_times(std::vector<std::size_t> times) {
  ExceedanceRecord rec;
  rec.count = times.size();
  rec.has_exceedance = rec.count > 0;
  rec.length = rec.has_exceedance ? times.back() - times.front() + 1 : 0;
  rec.times = std::move(times);
  return rec;
}

// Strict exceedances of the norms over u.
inline ExceedanceRecord exceedance_record_norms(std::span<const double> norms, double u) {
  std::vector<std::size_t> times;
  for (std::size_t i = 0; i < norms.size(); ++i)
    if (norms[i] > u) times.push_back(i + 1);
  return record_from_times(std::move(times));
}

inline ExceedanceRecord exceedance_record(const Window& block, double u, const NormSpec& norm = {}) {
  if (!(u > 0.0)) throw std::invalid_argument("exceedance_record: threshold must be positive");
  return exceedance_record_norms(block.norms(norm), u);
}

inline std::vector<Window> partition_blocks(const Window& series, const BlockScheme& scheme) {
  if (scheme.r == 0) throw std::invalid_argument("block size r must be >= 1");
  if (scheme.r > series.size()) throw std::invalid_argument("block larger than sample");
  const std::size_t m = series.size() / scheme.r;
  std::vector<Window> blocks;
  blocks.reserve(m);
  for (std::size_t j = 0; j < m; ++j) blocks.push_back(series.slice(j * scheme.r, scheme.r));
  return blocks;
}

// k-th largest of the norms (k is 1-based), ties kept.
inline double kth_largest(std::vector<double> norms, std::size_t k) {
  if (k == 0 || k > norms.size()) throw std::invalid_argument("order statistic index out of range");
  auto it = norms.begin() + static_cast<std::ptrdiff_t>(k - 1);
  std::nth_element(norms.begin(), it, norms.end(), std::greater<>());
  return *it;
}

inline double resolve_threshold_norms(std::span<const double> norms, const ThresholdSpec& threshold) {
  if (const auto* fl = std::get_if<FixedLevel>(&threshold)) {
    if (!(fl->u > 0.0)) throw std::invalid_argument("threshold level must be positive");
    return fl->u;
  }
  const auto k = std::get<OrderStatistic>(threshold).k;
  if (k == 0 || k >= norms.size()) throw std::invalid_argument("order statistic k must satisfy 1 <= k < n");
  return kth_largest(std::vector<double>(norms.begin(), norms.end()), k);
}

inline double resolve_threshold(const Window& series, const BlockScheme& scheme, const NormSpec& norm = {}) {
  return resolve_threshold_norms(series.norms(norm), scheme.threshold);
}

inline Window scale_window(const Window& block, double u) {
  if (!(u > 0.0)) throw std::invalid_argument("scale_window: threshold must be positive");
  std::vector<double> v(block.flat().begin(), block.flat().end());
  for (double& x : v) x /= u;
  return Window(std::move(v), block.dim());
}

} // namespace clusterlab
