#pragma once

#include <cstdint>
#include <functional>

namespace sunet {

// Global worker-thread cap, settable once from the CLI (--threads). Defaults
// to 1. Work is split into one contiguous block per thread, so for a fixed
// thread count the floating-point result of every parallel region is
// bit-reproducible.
void set_thread_count(int n);
int thread_count();

// Invokes fn(begin, end) on disjoint blocks covering [0, n).
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace sunet
