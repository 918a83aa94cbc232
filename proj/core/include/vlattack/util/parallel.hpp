#pragma once

#include <cstddef>
#include <functional>

namespace vlattack {

// Worker count: VLATTACK_THREADS if set, else hardware concurrency.
std::size_t worker_count();

// Runs fn(i) for i in [0, n) with indices claimed dynamically by workers.
// Callers write results to per-index slots so the outcome does not depend on
// the thread count. The first worker exception is rethrown on the caller.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace vlattack
