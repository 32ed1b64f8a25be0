#pragma once

#include <functional>

namespace tsim {

// Global worker count used by compute kernels and rollout loops. Results are
// required to be identical for any value: work is partitioned by ownership
// (each output element written by exactly one thread), never by reduction
// order.
void set_global_workers(int n);
int global_workers();

// Run fn(begin, end) over contiguous sub-ranges of [0, n) on `workers`
// threads (inline when workers <= 1 or n is small).
void parallel_ranges(int n, int workers, const std::function<void(int, int)>& fn);

}  // namespace tsim
