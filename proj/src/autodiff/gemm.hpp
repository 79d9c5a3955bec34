#pragma once

namespace regopt::ad::detail {

/// C[m,n] += A[m,k] * B[k,n], all row-major with leading dimensions.
/// Each C element accumulates its k terms strictly in increasing k order,
/// independent of the blocking path taken.
void gemm_acc(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
              int ldc);

/// C[m,n] = A[m,k] * B[k,n]; same per-element order as gemm_acc from zero.
void gemm_set(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c, int ldc);

/// C[m,n] += A[m,k] * B[n,k]^T. Dot products in four interleaved lanes.
void gemm_abt_acc(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c, int ldc);

/// dst[cols,rows] = src[rows,cols]^T
void transpose(int rows, int cols, const double* src, double* dst);

}  // namespace regopt::ad::detail
