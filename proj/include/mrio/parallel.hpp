#pragma once

#include <cstddef>
#include <functional>

namespace mrio {

// Global worker count for data-parallel loops (set from the CLI --threads
// flag). Loops partition disjoint output ranges only, so results are
// bit-identical for every thread count.
void set_thread_count(int n);
int thread_count();

// Runs fn(i) for i in [begin, end). fn must write only to locations owned by
// index i; no reductions happen here.
void parallel_for(size_t begin, size_t end, const std::function<void(size_t)>& fn);

// Chunked variant: fn(chunk_begin, chunk_end). Cheaper when per-index work is small.
void parallel_for_chunks(size_t begin, size_t end,
                         const std::function<void(size_t, size_t)>& fn);

}  // namespace mrio
