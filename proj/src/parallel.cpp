#include "nanofusion/parallel.hpp"

#include <omp.h>

#include <algorithm>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace nf {

namespace {
int g_threads = 0;

// Large tensor buffers churn every pass; keeping them on the heap instead of
// per-allocation mmap avoids repeated page faults on freshly mapped memory.
struct MallocTuning {
    MallocTuning() {
#if defined(__GLIBC__)
        mallopt(M_MMAP_MAX, 0);
        mallopt(M_TRIM_THRESHOLD, -1);
#endif
    }
} g_malloc_tuning;
}

void set_thread_count(int n) { g_threads = n < 0 ? 0 : n; }

int thread_count() {
    if (g_threads > 0) return g_threads;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
    if (n <= 0) return;
    int nt = std::min<int64_t>(thread_count(), n);
    if (nt <= 1) {
        for (int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
#pragma omp parallel for schedule(dynamic, 1) num_threads(nt)
    for (int64_t i = 0; i < n; ++i) fn(i);
}

}  // namespace nf
