#pragma once

#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

namespace dann {

// Worker cap for batch-parallel loops. Default 1; the CLI raises it from the
// GRL_DANN_THREADS environment variable. Results are independent of the
// thread count: workers write disjoint per-sample slots and reductions run
// sequentially in sample order afterwards.
int max_threads();
void set_max_threads(int n);

// Runs fn(i) for i in [0, n). Splits the range into contiguous chunks, one
// per worker. fn must only touch state owned by index i.
template <typename Fn>
void parallel_for(int n, Fn&& fn) {
  const int workers = std::min(max_threads(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  const int chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const int lo = w * chunk;
    const int hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (int i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace dann
