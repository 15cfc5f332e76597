#include "sunet/tensor.hpp"

#if defined(__GLIBC__)
#include <malloc.h>

namespace {
// Feature maps churn at megabyte scale on every layer call. glibc hands
// blocks that size back to the kernel on free, so the next allocation pays
// page-zeroing faults for the whole buffer — a double-digit-percent tax on
// forward passes. Keep large blocks in the process heap for reuse instead.
[[maybe_unused]] const bool g_malloc_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
  return true;
}();
}  // namespace
#endif

namespace sunet::workset {
namespace {
std::atomic<int64_t> g_current{0};
std::atomic<int64_t> g_peak{0};
}  // namespace

void add(int64_t bytes) {
  if (bytes == 0) return;
  int64_t now = g_current.fetch_add(bytes, std::memory_order_relaxed) + bytes;
  int64_t peak = g_peak.load(std::memory_order_relaxed);
  while (now > peak && !g_peak.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
  }
}

void sub(int64_t bytes) {
  if (bytes == 0) return;
  g_current.fetch_sub(bytes, std::memory_order_relaxed);
}

void reset_peak() { g_peak.store(g_current.load(std::memory_order_relaxed), std::memory_order_relaxed); }

int64_t peak_bytes() { return g_peak.load(std::memory_order_relaxed); }

int64_t current_bytes() { return g_current.load(std::memory_order_relaxed); }

}  // namespace sunet::workset
