#pragma once
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace onedm {

// ONEDM_THREADS caps worker count; 0 (or 1) means sequential reference mode.
// Unset falls back to hardware_concurrency.
inline int num_threads() {
  static int cached = [] {
    const char* e = std::getenv("ONEDM_THREADS");
    if (e) {
      int v = std::atoi(e);
      return v <= 1 ? 1 : v;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : int(hc);
  }();
  return cached;
}

// Each index is processed by exactly one worker and workers never share
// accumulators, so results are identical for any thread count.
inline void parallel_for(size_t n, const std::function<void(size_t)>& fn) {
  int nt = num_threads();
  if (nt <= 1 || n <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  size_t workers = std::min(size_t(nt), n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (size_t i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace onedm
