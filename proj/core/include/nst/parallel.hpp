#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace nst {

/// Process-wide worker count for op-internal parallelism. Defaults to 1.
void set_num_threads(unsigned n);
unsigned num_threads();

/// Runs body(i) for i in [begin, end). Work is split into contiguous chunks,
/// one per worker. Callers only parallelize over independent outputs (batch or
/// channel), so every per-element reduction keeps its sequential order and
/// results are bit-identical at any thread count.
template <class F>
void parallel_for(std::size_t begin, std::size_t end, F&& body) {
  const std::size_t count = end > begin ? end - begin : 0;
  const std::size_t workers = std::min<std::size_t>(num_threads(), count);
  if (workers <= 1) {
    for (std::size_t i = begin; i < end; ++i) body(i);
    return;
  }
  const std::size_t chunk = (count + workers - 1) / workers;
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (std::size_t wk = 1; wk < workers; ++wk) {
    const std::size_t lo = begin + wk * chunk;
    const std::size_t hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &body] {
      for (std::size_t i = lo; i < hi; ++i) body(i);
    });
  }
  for (std::size_t i = begin; i < std::min(end, begin + chunk); ++i) body(i);
}

}  // namespace nst
