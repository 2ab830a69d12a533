#pragma once

#include <cstdint>
#include <functional>

namespace nuta {

// Worker count for parallel_for. Resolution order: set_num_threads() if
// called, else the NUTA_THREADS environment variable, else
// hardware_concurrency. Results are bit-identical for any worker count; the
// contract is that chunk bodies write disjoint output ranges and perform any
// reductions entirely inside one chunk in a fixed order.
int num_threads();
void set_num_threads(int n);

// Splits [begin, end) into contiguous chunks and runs body(lo, hi) on each,
// possibly concurrently. body must only write state owned by its range.
// Exceptions thrown by a chunk are rethrown on the calling thread.
void parallel_for(int64_t begin, int64_t end,
                  const std::function<void(int64_t, int64_t)>& body);

}  // namespace nuta
