#include "gemm.hpp"

#include <algorithm>
#include <cstring>

namespace regopt::ad::detail {
namespace {

typedef double v4d __attribute__((vector_size(32), aligned(8)));

inline v4d load4(const double* p) { return *reinterpret_cast<const v4d*>(p); }
inline void store4(double* p, v4d v) { *reinterpret_cast<v4d*>(p) = v; }

constexpr int kBlockN = 256;

// 4x8 register tile over the full k range; starts from zero when Set.
template <bool Set>
inline void tile_4x8(int k, const double* a, int lda, const double* b, int ldb, double* c, int ldc) {
  v4d c00{}, c01{}, c10{}, c11{}, c20{}, c21{}, c30{}, c31{};
  if constexpr (!Set) {
    c00 = load4(c), c01 = load4(c + 4);
    c10 = load4(c + ldc), c11 = load4(c + ldc + 4);
    c20 = load4(c + 2 * ldc), c21 = load4(c + 2 * ldc + 4);
    c30 = load4(c + 3 * ldc), c31 = load4(c + 3 * ldc + 4);
  }
  const double* a0 = a;
  const double* a1 = a + lda;
  const double* a2 = a + 2 * lda;
  const double* a3 = a + 3 * lda;
  for (int p = 0; p < k; ++p) {
    const v4d b0 = load4(b + static_cast<long>(p) * ldb);
    const v4d b1 = load4(b + static_cast<long>(p) * ldb + 4);
    const double s0 = a0[p], s1 = a1[p], s2 = a2[p], s3 = a3[p];
    c00 += s0 * b0;
    c01 += s0 * b1;
    c10 += s1 * b0;
    c11 += s1 * b1;
    c20 += s2 * b0;
    c21 += s2 * b1;
    c30 += s3 * b0;
    c31 += s3 * b1;
  }
  store4(c, c00);
  store4(c + 4, c01);
  store4(c + ldc, c10);
  store4(c + ldc + 4, c11);
  store4(c + 2 * ldc, c20);
  store4(c + 2 * ldc + 4, c21);
  store4(c + 3 * ldc, c30);
  store4(c + 3 * ldc + 4, c31);
}

// Generic row update, same per-element accumulation order as the tile.
inline void row_update(int j0, int j1, int k, const double* a_row, const double* b, int ldb,
                       double* c_row) {
  for (int p = 0; p < k; ++p) {
    const double s = a_row[p];
    const double* brow = b + static_cast<long>(p) * ldb;
    for (int j = j0; j < j1; ++j) c_row[j] += s * brow[j];
  }
}

template <bool Set>
void gemm_impl(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c, int ldc) {
  if (m <= 0 || n <= 0) return;
  if (k <= 0) {
    if (Set)
      for (int i = 0; i < m; ++i) std::fill_n(c + static_cast<long>(i) * ldc, n, 0.0);
    return;
  }
  auto rows = [&](int j0, int j1, const double* a_row, double* c_row) {
    if (Set) std::fill(c_row + j0, c_row + j1, 0.0);
    row_update(j0, j1, k, a_row, b, ldb, c_row);
  };
  for (int jb = 0; jb < n; jb += kBlockN) {
    const int je = std::min(n, jb + kBlockN);
    const int j_tiled = jb + ((je - jb) / 8) * 8;
    int i = 0;
    for (; i + 4 <= m; i += 4) {
      const double* ai = a + static_cast<long>(i) * lda;
      double* ci = c + static_cast<long>(i) * ldc;
      for (int j = jb; j < j_tiled; j += 8) tile_4x8<Set>(k, ai, lda, b + j, ldb, ci + j, ldc);
      if (j_tiled < je) {
        for (int r = 0; r < 4; ++r)
          rows(j_tiled, je, ai + static_cast<long>(r) * lda, ci + static_cast<long>(r) * ldc);
      }
    }
    for (; i < m; ++i) rows(jb, je, a + static_cast<long>(i) * lda, c + static_cast<long>(i) * ldc);
  }
}

}  // namespace

void gemm_acc(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c, int ldc) {
  gemm_impl<false>(m, n, k, a, lda, b, ldb, c, ldc);
}

void gemm_set(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c, int ldc) {
  gemm_impl<true>(m, n, k, a, lda, b, ldb, c, ldc);
}

void gemm_abt_acc(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c, int ldc) {
  const int k4 = k / 4 * 4;
  auto hsum = [](v4d v) { return (v[0] + v[1]) + (v[2] + v[3]); };
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<long>(i) * lda;
    double* ci = c + static_cast<long>(i) * ldc;
    int j = 0;
    for (; j + 4 <= n; j += 4) {
      const double* b0 = b + static_cast<long>(j) * ldb;
      const double* b1 = b0 + ldb;
      const double* b2 = b1 + ldb;
      const double* b3 = b2 + ldb;
      v4d s0{}, s1{}, s2{}, s3{};
      for (int p = 0; p < k4; p += 4) {
        const v4d x = load4(ai + p);
        s0 += x * load4(b0 + p);
        s1 += x * load4(b1 + p);
        s2 += x * load4(b2 + p);
        s3 += x * load4(b3 + p);
      }
      double t0 = hsum(s0), t1 = hsum(s1), t2 = hsum(s2), t3 = hsum(s3);
      for (int p = k4; p < k; ++p) {
        t0 += ai[p] * b0[p];
        t1 += ai[p] * b1[p];
        t2 += ai[p] * b2[p];
        t3 += ai[p] * b3[p];
      }
      ci[j] += t0;
      ci[j + 1] += t1;
      ci[j + 2] += t2;
      ci[j + 3] += t3;
    }
    for (; j < n; ++j) {
      const double* bj = b + static_cast<long>(j) * ldb;
      v4d s{};
      for (int p = 0; p < k4; p += 4) s += load4(ai + p) * load4(bj + p);
      double t = hsum(s);
      for (int p = k4; p < k; ++p) t += ai[p] * bj[p];
      ci[j] += t;
    }
  }
}

void transpose(int rows, int cols, const double* src, double* dst) {
  constexpr int kB = 32;
  for (int i0 = 0; i0 < rows; i0 += kB) {
    const int i1 = std::min(rows, i0 + kB);
    for (int j0 = 0; j0 < cols; j0 += kB) {
      const int j1 = std::min(cols, j0 + kB);
      for (int i = i0; i < i1; ++i)
        for (int j = j0; j < j1; ++j) dst[static_cast<long>(j) * rows + i] = src[static_cast<long>(i) * cols + j];
    }
  }
}

}  // namespace regopt::ad::detail
