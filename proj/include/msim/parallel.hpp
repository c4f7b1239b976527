#pragma once

#include <cstdint>
#include <thread>
#include <vector>

namespace msim {

/// Worker threads used by parallel_for. All algorithms built on it are
/// gather-style, so results are bitwise independent of this setting.
inline int& worker_threads() {
  static int n = 1;
  return n;
}

template <class F>
void parallel_for(std::int64_t n, F&& body) {
  int workers = worker_threads();
  if (workers <= 1 || n < 256) {
    for (std::int64_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::int64_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    std::int64_t lo = w * chunk, hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &body] {
      for (std::int64_t i = lo; i < hi; ++i) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace msim
