#pragma once

#include <cstddef>
#include <functional>

namespace cdon {

/// Hardware concurrency capped by the CDON_THREADS environment variable.
int worker_count();

/// Runs fn(0..n-1) on up to `workers` threads (worker_count() when <= 0).
/// The first exception thrown by any task is rethrown after all threads join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, int workers = 0);

}  // namespace cdon
