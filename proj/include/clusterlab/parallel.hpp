#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace clusterlab {

inline std::size_t default_workers() {
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : hc;
}

// Evaluates fn(i) for i in [0, n) on `workers` threads. Results are stored by
// index, so any order-dependent reduction done afterwards is independent of
// the worker count.
template <class T, class Fn>
std::vector<T> parallel_map(std::size_t n, std::size_t workers, Fn&& fn) {
  std::vector<T> out(n);
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= n) return;
      try {
        out[i] = fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(n, std::memory_order_relaxed);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  return out;
}

// Splits [0, n) into fixed-size chunks (independent of the worker count) and
// maps each chunk to a partial result.
template <class T, class Fn>
std::vector<T> parallel_chunks(std::size_t n, std::size_t chunk, std::size_t workers, Fn&& fn) {
  chunk = std::max<std::size_t>(1, chunk);
  const std::size_t n_chunks = (n + chunk - 1) / chunk;
  return parallel_map<T>(n_chunks, workers, [&](std::size_t c) {
    const std::size_t lo = c * chunk;
    return fn(lo, std::min(n, lo + chunk));
  });
}

} // namespace clusterlab
