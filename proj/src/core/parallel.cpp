#include "core/parallel.h"

#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace nvs::par {

namespace {
std::atomic<int> g_max_workers{0};  // 0 = not set yet, use OpenMP default
}

int max_workers() {
  int n = g_max_workers.load(std::memory_order_relaxed);
  if (n > 0) return n;
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_max_workers(int n) {
  if (n < 1) n = 1;
  g_max_workers.store(n, std::memory_order_relaxed);
#ifdef _OPENMP
  omp_set_num_threads(n);
  omp_set_max_active_levels(1);
#endif
}

bool want_parallel() {
#ifdef _OPENMP
  return max_workers() > 1 && !omp_in_parallel();
#else
  return false;
#endif
}

}  // namespace nvs::par
