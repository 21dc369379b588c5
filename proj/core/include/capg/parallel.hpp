#pragma once

#include <cstddef>
#include <functional>

namespace capg {

/// Worker cap: the CAPG_THREADS environment variable if set and positive,
/// otherwise std::thread::hardware_concurrency() (at least 1).
std::size_t worker_count();

/// Runs body(i) for i in [0, n), statically chunked over worker_count()
/// threads. Callers write results into per-index slots and reduce in index
/// order afterwards, which keeps results independent of the thread count.
/// The first exception thrown by any worker is rethrown on the caller.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace capg
