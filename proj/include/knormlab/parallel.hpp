#pragma once

#include <cstdint>
#include <functional>

namespace knormlab {

// Worker-thread cap: KNORMLAB_THREADS if set, else hardware concurrency.
int default_thread_count();

// Runs fn(i) for i in [0, n) on up to `threads` workers. Tasks must write
// only to their own output slots; callers reduce the slots in index order,
// which keeps results identical for any thread count.
void parallel_for(std::int64_t n, int threads,
                  const std::function<void(std::int64_t)>& fn);

}  // namespace knormlab
