#pragma once

#include <functional>

namespace malbench {

/// Runs fn(i) for every i in [0, n). Work items must write only to their own
/// output slots; with that discipline results are independent of scheduling.
/// n_threads == 0 picks the hardware concurrency. Exceptions from workers are
/// rethrown on the calling thread (first one wins).
void parallel_for(int n, const std::function<void(int)>& fn, int n_threads = 0);

}  // namespace malbench
