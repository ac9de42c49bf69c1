#pragma once

#include <cstddef>
#include <functional>

namespace direal {

// Thread cap from the DIREAL_THREADS environment variable, read once.
// 0 or 1 means single-threaded (the deterministic reference order).
unsigned thread_cap();

// Runs fn(i) for i in [0, n). With thread_cap() > 1 the range is split into
// contiguous chunks, one thread each; callers must ensure distinct i write
// to distinct locations. Reductions stay deterministic as long as partial
// results are indexed by i and combined in index order afterward.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace direal
