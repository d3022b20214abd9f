#pragma once

#include <cstddef>
#include <functional>

namespace opsplit {

/// Worker count: OPSPLIT_THREADS if set to a positive integer, otherwise the
/// hardware concurrency.
std::size_t thread_count();

/// Runs body(chunk) for chunk in [0, n_chunks) across thread_count() workers.
/// Chunks are the unit of work and of randomness, so callers that fix the chunk
/// layout get results independent of the thread count. The first exception
/// thrown by any chunk is rethrown after all workers join.
void parallel_for_chunks(std::size_t n_chunks, const std::function<void(std::size_t)>& body);

}  // namespace opsplit
