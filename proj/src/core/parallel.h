#pragma once

#include <cstdint>
#include <utility>

namespace nvs::par {

// Process-wide worker cap for all OpenMP regions. 1 means fully serial.
int max_workers();
void set_max_workers(int n);

// True when a parallel region would actually fan out here (worker cap > 1
// and we are not already inside one; nesting is never used).
bool want_parallel();

// Runs f(begin, end) over disjoint chunks of [0, n). Chunks are fixed-size
// regardless of the worker count, so any per-chunk state derived from the
// chunk index is reproducible. f must write only to disjoint outputs.
template <class F>
void parallel_chunks(int64_t n, int64_t chunk, F&& f) {
  if (n <= 0) return;
  if (chunk < 1) chunk = 1;
  const int64_t nchunks = (n + chunk - 1) / chunk;
  if (!want_parallel() || nchunks == 1) {
    for (int64_t c = 0; c < nchunks; ++c) {
      const int64_t b = c * chunk;
      const int64_t e = b + chunk < n ? b + chunk : n;
      f(b, e);
    }
    return;
  }
#pragma omp parallel for schedule(static)
  for (int64_t c = 0; c < nchunks; ++c) {
    const int64_t b = c * chunk;
    const int64_t e = b + chunk < n ? b + chunk : n;
    f(b, e);
  }
}

}  // namespace nvs::par
