#pragma once

#include <cstddef>
#include <functional>

#include "chnet/real.hpp"

CHNET_NS_BEGIN

/// Number of worker threads used by kernels. Defaults to the hardware
/// concurrency, capped by the CHNET_THREADS environment variable.
int kernel_threads();

/// Overrides the kernel thread count (1 disables parallelism).
void set_kernel_threads(int threads);

/// Runs fn(i) for i in [0, tasks). Each task must write disjoint memory so
/// that results do not depend on scheduling. Nested calls run serially.
void parallel_for(std::size_t tasks, const std::function<void(std::size_t)>& fn);

CHNET_NS_END
