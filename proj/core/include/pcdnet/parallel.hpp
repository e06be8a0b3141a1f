#pragma once

#include <cstddef>
#include <functional>

namespace pcdnet {

// Number of worker threads used by parallel_for. 0 selects the hardware
// concurrency. Changing the count drains the pool and restarts it.
std::size_t thread_count();
void set_thread_count(std::size_t n);

// Runs body(begin, end) over a partition of [0, n). Falls back to an inline
// call when the pool is disabled, n is small, or the caller is itself a pool
// worker (no nesting). Bodies must write disjoint data per index so results
// do not depend on the partition.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body,
                  std::size_t min_grain = 1024);

}  // namespace pcdnet
