// SPDX-License-Identifier: Apache-2.0

#include "tinyllm/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tinyllm::kernels {
namespace {

constexpr int kRowBlock = 6;
constexpr int kColBlock = 16;
constexpr int kDepthBlock = 256;

template <typename Real>
struct VecOf;
template <>
struct VecOf<float> {
  typedef float type __attribute__((vector_size(32)));
};
template <>
struct VecOf<double> {
  typedef double type __attribute__((vector_size(32)));
};
template <typename Real>
using Vec = typename VecOf<Real>::type;

template <typename Real>
constexpr int kLanes = 32 / sizeof(Real);

template <typename Real>
inline Vec<Real> load(const Real* p) {
  Vec<Real> v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

template <typename Real>
inline void store(Real* p, Vec<Real> v) {
  std::memcpy(p, &v, sizeof(v));
}

std::atomic<int> g_thread_limit{0};

int active_threads() {
#ifdef _OPENMP
  const int limit = g_thread_limit.load(std::memory_order_relaxed);
  return limit > 0 ? limit : omp_get_max_threads();
#else
  return 1;
#endif
}

// C[m0..m0+rows) x [n0..n0+cols) += sum_k a(m,k) * Bp(k, n)
// a(m,k) = A[m * a_row + k * a_col]; Bp is a K x ldb panel starting at column n0.
template <typename Real>
void block_kernel(int rows, int cols, int K, const Real* A, std::ptrdiff_t a_row, std::ptrdiff_t a_col,
                  const Real* Bp, std::ptrdiff_t ldb, Real* C, std::ptrdiff_t ldc) {
  constexpr int L = kLanes<Real>;
  if (rows == kRowBlock && cols % L == 0) {
    // full-height tile, columns processed L at a time with kRowBlock register rows
    int j0 = 0;
    for (; j0 + 2 * L <= cols; j0 += 2 * L) {
      Vec<Real> acc0[kRowBlock], acc1[kRowBlock];
      for (int r = 0; r < kRowBlock; ++r) {
        acc0[r] = load(C + r * ldc + j0);
        acc1[r] = load(C + r * ldc + j0 + L);
      }
      for (int k = 0; k < K; ++k) {
        const Vec<Real> b0 = load(Bp + k * ldb + j0);
        const Vec<Real> b1 = load(Bp + k * ldb + j0 + L);
        for (int r = 0; r < kRowBlock; ++r) {
          const Real a = A[r * a_row + k * a_col];
          acc0[r] += a * b0;
          acc1[r] += a * b1;
        }
      }
      for (int r = 0; r < kRowBlock; ++r) {
        store(C + r * ldc + j0, acc0[r]);
        store(C + r * ldc + j0 + L, acc1[r]);
      }
    }
    for (; j0 < cols; j0 += L) {
      Vec<Real> acc[kRowBlock];
      for (int r = 0; r < kRowBlock; ++r) acc[r] = load(C + r * ldc + j0);
      for (int k = 0; k < K; ++k) {
        const Vec<Real> b = load(Bp + k * ldb + j0);
        for (int r = 0; r < kRowBlock; ++r) acc[r] += A[r * a_row + k * a_col] * b;
      }
      for (int r = 0; r < kRowBlock; ++r) store(C + r * ldc + j0, acc[r]);
    }
    return;
  }
  for (int r = 0; r < rows; ++r) {
    Real acc[kColBlock];
    for (int j = 0; j < cols; ++j) acc[j] = C[r * ldc + j];
    for (int k = 0; k < K; ++k) {
      const Real a = A[r * a_row + k * a_col];
      const Real* b = Bp + k * ldb;
      for (int j = 0; j < cols; ++j) acc[j] += a * b[j];
    }
    for (int j = 0; j < cols; ++j) C[r * ldc + j] = acc[j];
  }
}

template <typename Real>
void gemm_strided_a(int M, int N, int K, const Real* A, std::ptrdiff_t a_row, std::ptrdiff_t a_col,
                    const Real* B, Real* C) {
  const int col_blocks = (N + kColBlock - 1) / kColBlock;
  const int row_blocks = (M + kRowBlock - 1) / kRowBlock;
  const long tasks = static_cast<long>(col_blocks) * row_blocks;
  // k is split into sequential chunks so the B panel stays cache resident;
  // each element still accumulates k in increasing order.
#pragma omp parallel num_threads(active_threads()) if (tasks > 16)
  {
    // strided A (transposed operand) is packed per row block into [k][row]
    std::vector<Real> packed(a_col != 1 ? static_cast<std::size_t>(kDepthBlock) * kRowBlock : 0);
    for (int k0 = 0; k0 < K; k0 += kDepthBlock) {
      const int depth = std::min(kDepthBlock, K - k0);
      int packed_block = -1;
#pragma omp for schedule(static)
      for (long t = 0; t < tasks; ++t) {
        const int mb = static_cast<int>(t / col_blocks);
        const int jb = static_cast<int>(t % col_blocks);
        const int n0 = jb * kColBlock;
        const int m0 = mb * kRowBlock;
        const int rows = std::min(kRowBlock, M - m0);
        const Real* a = A + m0 * a_row + k0 * a_col;
        std::ptrdiff_t pr = a_row, pc = a_col;
        if (!packed.empty()) {
          if (packed_block != mb) {
            for (int k = 0; k < depth; ++k) {
              for (int r = 0; r < rows; ++r) packed[k * kRowBlock + r] = a[r * a_row + k * a_col];
            }
            packed_block = mb;
          }
          a = packed.data();
          pr = 1;
          pc = kRowBlock;
        }
        block_kernel(rows, std::min(kColBlock, N - n0), depth, a, pr, pc,
                     B + static_cast<std::ptrdiff_t>(k0) * N + n0, static_cast<std::ptrdiff_t>(N),
                     C + static_cast<std::ptrdiff_t>(m0) * N + n0, static_cast<std::ptrdiff_t>(N));
      }
    }
  }
}

}  // namespace

void set_thread_limit(int threads) { g_thread_limit.store(threads, std::memory_order_relaxed); }

int thread_limit() { return active_threads(); }

template <typename Real>
void gemm_nn(int M, int N, int K, const Real* A, const Real* B, Real* C) {
  gemm_strided_a(M, N, K, A, K, 1, B, C);
}

template <typename Real>
void gemm_tn(int M, int N, int K, const Real* A, const Real* B, Real* C) {
  gemm_strided_a(M, N, K, A, 1, M, B, C);
}

template <typename Real>
void gemm_nt(int M, int N, int K, const Real* A, const Real* B, Real* C) {
  const int col_blocks = (N + kColBlock - 1) / kColBlock;
#pragma omp parallel num_threads(active_threads()) if (col_blocks > 1 && M * static_cast<long>(N) > 4096)
  {
    std::vector<Real> panel(static_cast<std::size_t>(K) * kColBlock);
#pragma omp for schedule(static)
    for (int jb = 0; jb < col_blocks; ++jb) {
      const int n0 = jb * kColBlock;
      const int cols = std::min(kColBlock, N - n0);
      for (int j = 0; j < cols; ++j) {
        const Real* src = B + static_cast<std::ptrdiff_t>(n0 + j) * K;
        for (int k = 0; k < K; ++k) panel[static_cast<std::size_t>(k) * kColBlock + j] = src[k];
      }
      for (int m0 = 0; m0 < M; m0 += kRowBlock) {
        block_kernel(std::min(kRowBlock, M - m0), cols, K, A + static_cast<std::ptrdiff_t>(m0) * K,
                     static_cast<std::ptrdiff_t>(K), std::ptrdiff_t{1}, panel.data(), std::ptrdiff_t{kColBlock},
                     C + static_cast<std::ptrdiff_t>(m0) * N + n0, static_cast<std::ptrdiff_t>(N));
      }
    }
  }
}

template void gemm_nn<float>(int, int, int, const float*, const float*, float*);
template void gemm_nn<double>(int, int, int, const double*, const double*, double*);
template void gemm_nt<float>(int, int, int, const float*, const float*, float*);
template void gemm_nt<double>(int, int, int, const double*, const double*, double*);
template void gemm_tn<float>(int, int, int, const float*, const float*, float*);
template void gemm_tn<double>(int, int, int, const double*, const double*, double*);

}  // namespace tinyllm::kernels
