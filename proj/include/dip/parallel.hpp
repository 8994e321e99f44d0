#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace dip {

/// Worker cap: DIP_THREADS if set and positive, else hardware concurrency.
inline unsigned max_threads() {
  if (const char* env = std::getenv("DIP_THREADS")) {
    try {
      const long n = std::stol(env);
      if (n > 0) return static_cast<unsigned>(n);
    } catch (const std::exception&) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs body(begin, end) over contiguous chunks of [0, n). Chunk boundaries
/// depend only on n and the worker count; bodies write disjoint outputs, so
/// results do not depend on scheduling.
inline void parallel_for(long n, const std::function<void(long, long)>& body, long min_chunk = 64) {
  const long workers = std::min<long>(max_threads(), std::max<long>(1, n / std::max<long>(1, min_chunk)));
  if (workers <= 1) {
    body(0, n);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mutex;
  const long chunk = (n + workers - 1) / workers;
  for (long w = 0; w < workers; ++w) {
    const long begin = w * chunk, end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, begin, end] {
      try {
        body(begin, end);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace dip
