#pragma once

#include <cstddef>
#include <functional>

namespace reasonlens {

// Number of logical processors (at least 1).
std::size_t default_workers();

// Calls fn(i) for every i in [0, n) on up to `workers` threads. Work items
// are claimed dynamically, so fn must write only to per-index state. The
// exception from the lowest failing index is rethrown after all threads join.
void parallel_for(std::size_t n, std::size_t workers,
                  const std::function<void(std::size_t)>& fn);

}  // namespace reasonlens
