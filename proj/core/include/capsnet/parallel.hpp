#pragma once

#include <cstddef>
#include <functional>

namespace capsnet {

/// Process-wide worker cap used by the batch-parallel kernels. 1 means
/// everything runs on the calling thread, which is bitwise reproducible.
void set_num_threads(std::size_t n);
std::size_t num_threads();

/// Splits [0, n) into contiguous chunks, one per worker, and runs
/// fn(begin, end, worker) on each. Chunking depends only on n and the worker
/// count, so per-worker partial results can be merged in worker order.
void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

/// Number of workers parallel_for will use for a range of length n.
std::size_t worker_count(std::size_t n);

}  // namespace capsnet
