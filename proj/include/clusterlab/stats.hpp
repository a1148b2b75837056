#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

namespace clusterlab {

// Neumaier-compensated accumulator. Order of add() calls fixes the result,
// so reductions over replicate vectors are reproducible.
class CompensatedSum {
public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double compensated_sum(std::span<const double> xs) {
  CompensatedSum s;
  for (double x : xs) s.add(x);
  return s.value();
}

// Universal Monte Carlo result carrier.
struct MCEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::uint64_t n_rep = 0;
  std::uint64_t seed = 0;
};

// Two-pass mean / unbiased variance with compensated accumulation.
struct SampleMoments {
  double mean = 0.0;
  double variance = 0.0; // unbiased
  std::size_t n = 0;
};

inline SampleMoments sample_moments(std::span<const double> xs) {
  SampleMoments m;
  m.n = xs.size();
  if (m.n == 0) return m;
  m.mean = compensated_sum(xs) / static_cast<double>(m.n);
  if (m.n < 2) return m;
  CompensatedSum ss;
  for (double x : xs) ss.add((x - m.mean) * (x - m.mean));
  m.variance = ss.value() / static_cast<double>(m.n - 1);
  return m;
}

inline MCEstimate mc_estimate(std::span<const double> xs, std::uint64_t seed = 0) {
  const auto m = sample_moments(xs);
  MCEstimate e;
  e.value = m.mean;
  e.std_error = m.n > 1 ? std::sqrt(m.variance / static_cast<double>(m.n)) : 0.0;
  e.n_rep = m.n;
  e.seed = seed;
  return e;
}

// Streaming mean/variance for replication loops that do not keep samples.
// Accumulates sums of x and x^2 around a fixed shift with compensation.
class RunningMoments {
public:
  void add(double x) {
    if (n_ == 0) shift_ = x;
    const double d = x - shift_;
    s1_.add(d);
    s2_.add(d * d);
    ++n_;
  }
  void merge(const RunningMoments& o) {
    // Only used to combine partial results in a fixed order.
    if (o.n_ == 0) return;
    if (n_ == 0) {
      *this = o;
      return;
    }
    const double delta = o.shift_ - shift_;
    const double on = static_cast<double>(o.n_);
    s2_.add(o.s2_.value() + 2.0 * delta * o.s1_.value() + on * delta * delta);
    s1_.add(o.s1_.value() + on * delta);
    n_ += o.n_;
  }
  std::uint64_t count() const { return n_; }
  double mean() const {
    return n_ == 0 ? 0.0 : shift_ + s1_.value() / static_cast<double>(n_);
  }
  double variance() const {
    if (n_ < 2) return 0.0;
    const double n = static_cast<double>(n_);
    const double m1 = s1_.value() / n;
    const double v = (s2_.value() - n * m1 * m1) / (n - 1.0);
    return v > 0.0 ? v : 0.0;
  }
  MCEstimate estimate(std::uint64_t seed = 0) const {
    return {mean(), n_ > 1 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0, n_, seed};
  }

private:
  double shift_ = 0.0;
  CompensatedSum s1_, s2_;
  std::uint64_t n_ = 0;
};

// Joint first and second moments of pairs (x, y), same shifted scheme.
class RunningCovariance {
public:
  void add(double x, double y) {
    if (n_ == 0) {
      sx_ = x;
      sy_ = y;
    }
    const double dx = x - sx_, dy = y - sy_;
    s1x_.add(dx);
    s1y_.add(dy);
    sxx_.add(dx * dx);
    syy_.add(dy * dy);
    sxy_.add(dx * dy);
    ++n_;
  }
  void merge(const RunningCovariance& o) {
    if (o.n_ == 0) return;
    if (n_ == 0) {
      *this = o;
      return;
    }
    const double ex = o.sx_ - sx_, ey = o.sy_ - sy_, on = static_cast<double>(o.n_);
    const double ax = o.s1x_.value(), ay = o.s1y_.value();
    sxx_.add(o.sxx_.value() + 2.0 * ex * ax + on * ex * ex);
    syy_.add(o.syy_.value() + 2.0 * ey * ay + on * ey * ey);
    sxy_.add(o.sxy_.value() + ex * ay + ey * ax + on * ex * ey);
    s1x_.add(ax + on * ex);
    s1y_.add(ay + on * ey);
    n_ += o.n_;
  }
  std::uint64_t count() const { return n_; }
  double mean_x() const { return n_ == 0 ? 0.0 : sx_ + s1x_.value() / static_cast<double>(n_); }
  double mean_y() const { return n_ == 0 ? 0.0 : sy_ + s1y_.value() / static_cast<double>(n_); }
  double var_x() const { return std::max(0.0, comoment(sxx_, s1x_, s1x_)); }
  double var_y() const { return std::max(0.0, comoment(syy_, s1y_, s1y_)); }
  double cov() const { return comoment(sxy_, s1x_, s1y_); }

private:
  double comoment(const CompensatedSum& s2, const CompensatedSum& a, const CompensatedSum& b) const {
    if (n_ < 2) return 0.0;
    const double n = static_cast<double>(n_);
    return (s2.value() - a.value() * b.value() / n) / (n - 1.0);
  }

  double sx_ = 0.0, sy_ = 0.0;
  CompensatedSum s1x_, s1y_, sxx_, syy_, sxy_;
  std::uint64_t n_ = 0;
};

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// Kolmogorov-Smirnov distance between the empirical cdf of `xs` and `cdf`.
inline double ks_distance(std::vector<double> xs, const std::function<double(double)>& cdf) {
  if (xs.empty()) throw std::invalid_argument("ks_distance: empty sample");
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max(d, std::max(static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n));
  }
  return d;
}

inline double ks_distance_uniform(std::vector<double> xs) {
  return ks_distance(std::move(xs), [](double x) { return std::clamp(x, 0.0, 1.0); });
}

// Two-sample KS statistic sup |F_a - F_b|.
inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks_two_sample: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

// Asymptotic two-sample KS critical value at level `alpha_level`.
inline double ks_two_sample_critical(std::size_t na, std::size_t nb, double alpha_level = 0.001) {
  const double c = std::sqrt(-0.5 * std::log(alpha_level / 2.0));
  const double a = static_cast<double>(na), b = static_cast<double>(nb);
  return c * std::sqrt((a + b) / (a * b));
}

inline double skewness(std::span<const double> xs) {
  const auto m = sample_moments(xs);
  if (m.n < 3 || m.variance <= 0.0) return 0.0;
  CompensatedSum s3;
  for (double x : xs) {
    const double d = x - m.mean;
    s3.add(d * d * d);
  }
  const double n = static_cast<double>(m.n);
  const double m2 = m.variance * (n - 1.0) / n;
  return (s3.value() / n) / std::pow(m2, 1.5);
}

inline double excess_kurtosis(std::span<const double> xs) {
  const auto m = sample_moments(xs);
  if (m.n < 4 || m.variance <= 0.0) return 0.0;
  CompensatedSum s4;
  for (double x : xs) {
    const double d = x - m.mean;
    s4.add(d * d * d * d);
  }
  const double n = static_cast<double>(m.n);
  const double m2 = m.variance * (n - 1.0) / n;
  return (s4.value() / n) / (m2 * m2) - 3.0;
}

// Unbiased sample covariance of paired samples.
inline double sample_covariance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("sample_covariance: size mismatch");
  if (a.size() < 2) return 0.0;
  const double ma = compensated_sum(a) / static_cast<double>(a.size());
  const double mb = compensated_sum(b) / static_cast<double>(b.size());
  CompensatedSum s;
  for (std::size_t i = 0; i < a.size(); ++i) s.add((a[i] - ma) * (b[i] - mb));
  return s.value() / static_cast<double>(a.size() - 1);
}

// Delete-one jackknife standard error of the sample covariance, computed in
// O(n) from the leave-one-out update formulas.
inline double jackknife_covariance_se(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  if (n != b.size()) throw std::invalid_argument("jackknife_covariance_se: size mismatch");
  if (n < 3) return 0.0;
  const double dn = static_cast<double>(n);
  const double ma = compensated_sum(a) / dn, mb = compensated_sum(b) / dn;
  // co-moment around full-sample means
  CompensatedSum c_acc;
  for (std::size_t i = 0; i < n; ++i) c_acc.add((a[i] - ma) * (b[i] - mb));
  const double c = c_acc.value();
  std::vector<double> loo(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    // removing point i from the co-moment: C - n/(n-1) * da * db
    const double ci = c - dn / (dn - 1.0) * da * db;
    loo[i] = ci / (dn - 2.0);
  }
  const auto m = sample_moments(loo);
  return std::sqrt((dn - 1.0) / dn * m.variance * (dn - 1.0));
}

inline double binomial_se(double p, double n) { return std::sqrt(std::max(p * (1.0 - p), 0.0) / n); }

} // namespace clusterlab
