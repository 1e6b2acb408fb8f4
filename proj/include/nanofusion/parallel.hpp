#pragma once

#include <cstdint>
#include <functional>

namespace nf {

// Global worker count for data-parallel loops. 0 means hardware concurrency.
// Every parallel loop in the project writes disjoint outputs and keeps its
// internal reductions in a fixed order, so results do not depend on the
// thread count or the schedule.
void set_thread_count(int n);
int thread_count();

void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

}  // namespace nf
