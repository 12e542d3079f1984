#pragma once

#include <cstdint>

namespace surge {

// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C. Thin dispatch over
// cblas_{s,d}gemm so the rest of the code stays scalar-type agnostic.
template <typename T>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, T alpha, const T* a,
          int64_t lda, const T* b, int64_t ldb, T beta, T* c, int64_t ldc);

}  // namespace surge
