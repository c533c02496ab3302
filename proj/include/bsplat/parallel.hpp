#pragma once

#include <algorithm>
#include <thread>
#include <vector>

namespace bsplat {

/// Runs fn(worker, item) for item in [0, n). Items are assigned round-robin
/// (item % workers), so the item-to-worker mapping is fixed for a worker count.
template <typename Fn>
void parallel_for(int n, int workers, Fn&& fn) {
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(0, i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(std::size_t(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (int i = w; i < n; i += workers) fn(w, i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace bsplat
