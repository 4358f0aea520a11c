#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace vaedist {

/// Number of worker threads to use when the caller passes 0.
inline unsigned default_threads() {
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Tasks are claimed
/// dynamically; callers must write results into per-index slots so the
/// outcome is independent of scheduling. The first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn &&fn) {
  if (threads == 0)
    threads = default_threads();
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i)
      fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error)
          error = std::current_exception();
        next = n;
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back(worker);
  for (auto &t : pool)
    t.join();
  if (error)
    std::rethrow_exception(error);
}

/// Streaming mean / population variance with an exact merge, so chunked
/// reductions combined in a fixed order give scheduling-independent results.
struct RunningStats {
  std::size_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++count;
    double d = x - mean;
    mean += d / static_cast<double>(count);
    m2 += d * (x - mean);
  }

  void merge(const RunningStats &o) {
    if (o.count == 0)
      return;
    if (count == 0) {
      *this = o;
      return;
    }
    double n = static_cast<double>(count + o.count);
    double d = o.mean - mean;
    mean += d * static_cast<double>(o.count) / n;
    m2 += o.m2 + d * d * static_cast<double>(count) * static_cast<double>(o.count) / n;
    count += o.count;
  }

  double variance() const { return count ? std::max(0.0, m2 / count) : 0.0; }
  double stddev() const { return std::sqrt(variance()); }
  double std_error() const {
    return count > 1 ? std::sqrt(m2 / (count - 1) / count) : 0.0;
  }
};

} // namespace vaedist
