#pragma once

#include <cstddef>
#include <functional>

namespace nefes {

// Worker count: min(NEFES_THREADS, hardware_concurrency), at least 1.
std::size_t worker_count();

// Static block partition of [0, n): block b covers a contiguous index range
// and is processed by one worker. Deterministic regardless of scheduling;
// callers that reduce per-block results must do so in block order.
void parallel_for_blocks(std::size_t n,
                         const std::function<void(std::size_t block, std::size_t begin,
                                                  std::size_t end)>& fn);

}  // namespace nefes
