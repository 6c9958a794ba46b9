#pragma once

#include <cstddef>
#include <functional>

namespace airsum {

// Number of worker threads: explicit request, else AIRSUM_THREADS, else
// hardware concurrency.
std::size_t resolve_threads(int requested);

// Runs fn(i) for i in [0, count) across up to `threads` workers. Each index
// must write only its own outputs; results are then independent of the
// schedule. Exceptions are rethrown on the calling thread.
void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t)>& fn);

}  // namespace airsum
