#pragma once

#include <cstdint>
#include <functional>

namespace clp {

// Worker cap for internally parallel jobs: CLP_THREADS when set to a
// positive integer, else the hardware concurrency (at least 1).
int thread_cap();

// Runs fn(i) for every i in [0, n). Indices are distributed statically
// across at most max_threads workers (0 means thread_cap()); each index is
// handled exactly once, so work that writes only to its own output slot is
// deterministic regardless of the worker count. The first exception thrown
// by any worker is rethrown after all workers join.
void parallel_for_index(int64_t n, const std::function<void(int64_t)>& fn, int max_threads = 0);

}  // namespace clp
