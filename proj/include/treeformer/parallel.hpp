#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace treeformer {

// Number of workers used inside data-parallel primitive loops. Each output
// element is produced by exactly one worker with a fixed reduction order, so
// results do not depend on this setting.
inline std::atomic<unsigned> g_worker_count{1};

inline void set_worker_count(unsigned workers) noexcept {
  g_worker_count.store(std::max(1u, workers), std::memory_order_relaxed);
}
inline unsigned worker_count() noexcept { return g_worker_count.load(std::memory_order_relaxed); }

template <class Body>
void parallel_for(std::size_t count, Body&& body) {
  const std::size_t workers = std::min<std::size_t>(worker_count(), count);
  if (workers <= 1) {
    if (count > 0) {
      body(std::size_t{0}, count);
    }
    return;
  }
  const std::size_t chunk = (count + workers - 1) / workers;
  std::vector<std::jthread> threads;
  threads.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(count, begin + chunk);
    if (begin < end) {
      threads.emplace_back([&body, begin, end] { body(begin, end); });
    }
  }
  body(std::size_t{0}, std::min(count, chunk));
}

}  // namespace treeformer
