#pragma once

#include <cstdint>
#include <functional>

namespace rslab {

/// Number of workers used by parallel_for: min(hardware_concurrency,
/// RSLAB_THREADS). Always at least 1.
int worker_count();

/// Runs fn over disjoint contiguous chunks of [0, n). Each index is handled
/// by exactly one worker, so outputs are identical for any worker count.
/// Falls back to a direct call when n is small or only one worker is active.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn);

}  // namespace rslab
