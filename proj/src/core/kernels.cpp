#include "core/kernels.h"

#include <algorithm>
#include <cstring>
#include <vector>

#include "core/parallel.h"

namespace nvs::kern {

namespace {
constexpr int64_t kTnBlockRows = 2048;  // fixed, so TN reductions are stable
}

template <class S>
static inline void gemm_nn_rows(int64_t r0, int64_t r1, int64_t n, int64_t k,
                                const S* a, const S* b, S* c, bool acc) {
  for (int64_t i = r0; i < r1; ++i) {
    S* ci = c + i * n;
    if (!acc) std::memset(ci, 0, sizeof(S) * n);
    const S* ai = a + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const S ap = ai[p];
      const S* bp = b + p * n;
#pragma omp simd
      for (int64_t j = 0; j < n; ++j) ci[j] += ap * bp[j];
    }
  }
}

template <class S>
void gemm_nn_serial(int64_t m, int64_t n, int64_t k, const S* a, const S* b,
                    S* c, bool acc) {
  gemm_nn_rows(0, m, n, k, a, b, c, acc);
}

template <class S>
void gemm_nn_omp(int64_t m, int64_t n, int64_t k, const S* a, const S* b,
                 S* c, bool acc) {
  par::parallel_chunks(m, 64, [&](int64_t r0, int64_t r1) {
    gemm_nn_rows(r0, r1, n, k, a, b, c, acc);
  });
}

template <class S>
void gemm_nn(int64_t m, int64_t n, int64_t k, const S* a, const S* b, S* c,
             bool acc) {
  if (par::want_parallel() && m >= 128) {
    gemm_nn_omp(m, n, k, a, b, c, acc);
  } else {
    gemm_nn_serial(m, n, k, a, b, c, acc);
  }
}

template <class S>
static inline void gemm_nt_rows(int64_t r0, int64_t r1, int64_t n, int64_t k,
                                const S* a, const S* b, S* c, bool acc) {
  for (int64_t i = r0; i < r1; ++i) {
    const S* ai = a + i * k;
    S* ci = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const S* bj = b + j * k;
      S sum = 0;
#pragma omp simd reduction(+ : sum)
      for (int64_t p = 0; p < k; ++p) sum += ai[p] * bj[p];
      ci[j] = acc ? ci[j] + sum : sum;
    }
  }
}

template <class S>
void gemm_nt_serial(int64_t m, int64_t n, int64_t k, const S* a, const S* b,
                    S* c, bool acc) {
  gemm_nt_rows(0, m, n, k, a, b, c, acc);
}

template <class S>
void gemm_nt_omp(int64_t m, int64_t n, int64_t k, const S* a, const S* b,
                 S* c, bool acc) {
  par::parallel_chunks(m, 64, [&](int64_t r0, int64_t r1) {
    gemm_nt_rows(r0, r1, n, k, a, b, c, acc);
  });
}

template <class S>
void gemm_nt(int64_t m, int64_t n, int64_t k, const S* a, const S* b, S* c,
             bool acc) {
  if (par::want_parallel() && m >= 128) {
    gemm_nt_omp(m, n, k, a, b, c, acc);
  } else {
    gemm_nt_serial(m, n, k, a, b, c, acc);
  }
}

template <class S>
static inline void gemm_tn_block(int64_t m0, int64_t m1, int64_t n, int64_t k,
                                 const S* a, const S* b, S* out) {
  std::memset(out, 0, sizeof(S) * k * n);
  for (int64_t i = m0; i < m1; ++i) {
    const S* ai = a + i * k;
    const S* bi = b + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const S ap = ai[p];
      S* op = out + p * n;
#pragma omp simd
      for (int64_t j = 0; j < n; ++j) op[j] += ap * bi[j];
    }
  }
}

// Both variants reduce the same fixed row blocks in block order, so they
// agree bitwise with each other and across worker counts.
template <class S>
void gemm_tn_serial(int64_t m, int64_t n, int64_t k, const S* a, const S* b,
                    S* c, bool acc) {
  if (!acc) std::memset(c, 0, sizeof(S) * k * n);
  const int64_t nblocks = (m + kTnBlockRows - 1) / kTnBlockRows;
  std::vector<S> scratch(static_cast<size_t>(k) * n);
  for (int64_t blk = 0; blk < nblocks; ++blk) {
    const int64_t m0 = blk * kTnBlockRows;
    const int64_t m1 = std::min(m, m0 + kTnBlockRows);
    gemm_tn_block(m0, m1, n, k, a, b, scratch.data());
    for (int64_t i = 0; i < k * n; ++i) c[i] += scratch[i];
  }
}

template <class S>
void gemm_tn_omp(int64_t m, int64_t n, int64_t k, const S* a, const S* b,
                 S* c, bool acc) {
  const int64_t nblocks = (m + kTnBlockRows - 1) / kTnBlockRows;
  if (nblocks <= 1) {
    gemm_tn_serial(m, n, k, a, b, c, acc);
    return;
  }
  std::vector<S> scratch(static_cast<size_t>(nblocks) * k * n);
  par::parallel_chunks(nblocks, 1, [&](int64_t b0, int64_t b1) {
    for (int64_t blk = b0; blk < b1; ++blk) {
      const int64_t m0 = blk * kTnBlockRows;
      const int64_t m1 = std::min(m, m0 + kTnBlockRows);
      gemm_tn_block(m0, m1, n, k, a, b, scratch.data() + blk * k * n);
    }
  });
  if (!acc) std::memset(c, 0, sizeof(S) * k * n);
  for (int64_t blk = 0; blk < nblocks; ++blk) {
    const S* s = scratch.data() + blk * k * n;
    for (int64_t i = 0; i < k * n; ++i) c[i] += s[i];
  }
}

template <class S>
void gemm_tn(int64_t m, int64_t n, int64_t k, const S* a, const S* b, S* c,
             bool acc) {
  if (par::want_parallel() && m >= 2 * kTnBlockRows) {
    gemm_tn_omp(m, n, k, a, b, c, acc);
  } else {
    gemm_tn_serial(m, n, k, a, b, c, acc);
  }
}

#define NVS_INSTANTIATE_GEMM(S)                                               \
  template void gemm_nn_serial<S>(int64_t, int64_t, int64_t, const S*,       \
                                  const S*, S*, bool);                        \
  template void gemm_nn_omp<S>(int64_t, int64_t, int64_t, const S*,          \
                               const S*, S*, bool);                          \
  template void gemm_nn<S>(int64_t, int64_t, int64_t, const S*, const S*,    \
                           S*, bool);                                         \
  template void gemm_nt_serial<S>(int64_t, int64_t, int64_t, const S*,       \
                                  const S*, S*, bool);                        \
  template void gemm_nt_omp<S>(int64_t, int64_t, int64_t, const S*,          \
                               const S*, S*, bool);                          \
  template void gemm_nt<S>(int64_t, int64_t, int64_t, const S*, const S*,    \
                           S*, bool);                                         \
  template void gemm_tn_serial<S>(int64_t, int64_t, int64_t, const S*,       \
                                  const S*, S*, bool);                        \
  template void gemm_tn_omp<S>(int64_t, int64_t, int64_t, const S*,          \
                               const S*, S*, bool);                          \
  template void gemm_tn<S>(int64_t, int64_t, int64_t, const S*, const S*,    \
                           S*, bool);

NVS_INSTANTIATE_GEMM(float)
NVS_INSTANTIATE_GEMM(double)

#undef NVS_INSTANTIATE_GEMM

}  // namespace nvs::kern
