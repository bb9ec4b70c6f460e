#pragma once

#include <cstddef>
#include <functional>

namespace deepspace {

/// Worker count: DEEPSPACE_THREADS when set to a positive integer, else the hardware concurrency.
std::size_t worker_count();

/// Runs fn(begin, end) over contiguous chunks of [0, n) on up to worker_count() threads. Chunk
/// boundaries depend only on n and the worker count. The first exception thrown is rethrown.
void parallel_for(std::size_t n, std::size_t min_chunk, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace deepspace
