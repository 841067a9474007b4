#ifndef ATTNGAN_PARALLEL_HPP_
#define ATTNGAN_PARALLEL_HPP_

namespace attngan {

int num_threads();
void set_num_threads(int threads);

/// Reads ATTNGAN_THREADS (default 1) and applies it. Returns the thread count.
int configure_threads_from_env();

// Below this many independent work items kernels stay on one thread.
inline constexpr long kParallelGrain = 4096;

}  // namespace attngan

#endif  // ATTNGAN_PARALLEL_HPP_
