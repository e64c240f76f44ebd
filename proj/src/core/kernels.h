#pragma once

#include <cstdint>

namespace nvs::kern {

// Dense matrix kernels, row-major. Every variant exists in a serial
// reference form and an OpenMP form; the unsuffixed entry points dispatch
// on the worker cap. OpenMP forms assign each output row (or fixed block)
// to exactly one thread, so results are bitwise identical to the serial
// forms for any thread count.

// C[m,n] = (acc ? C : 0) + A[m,k] * B[k,n]
template <class S>
void gemm_nn_serial(int64_t m, int64_t n, int64_t k, const S* a, const S* b,
                    S* c, bool acc);
template <class S>
void gemm_nn_omp(int64_t m, int64_t n, int64_t k, const S* a, const S* b,
                 S* c, bool acc);
template <class S>
void gemm_nn(int64_t m, int64_t n, int64_t k, const S* a, const S* b, S* c,
             bool acc);

// C[m,n] = (acc ? C : 0) + A[m,k] * B[n,k]^T
template <class S>
void gemm_nt_serial(int64_t m, int64_t n, int64_t k, const S* a, const S* b,
                    S* c, bool acc);
template <class S>
void gemm_nt_omp(int64_t m, int64_t n, int64_t k, const S* a, const S* b,
                 S* c, bool acc);
template <class S>
void gemm_nt(int64_t m, int64_t n, int64_t k, const S* a, const S* b, S* c,
             bool acc);

// C[k,n] = (acc ? C : 0) + A[m,k]^T * B[m,n]
// Row blocks of fixed size are reduced in block order, independent of the
// worker count.
template <class S>
void gemm_tn_serial(int64_t m, int64_t n, int64_t k, const S* a, const S* b,
                    S* c, bool acc);
template <class S>
void gemm_tn_omp(int64_t m, int64_t n, int64_t k, const S* a, const S* b,
                 S* c, bool acc);
template <class S>
void gemm_tn(int64_t m, int64_t n, int64_t k, const S* a, const S* b, S* c,
             bool acc);

}  // namespace nvs::kern
