// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major matrix kernels shared by training, LoRA and inference.
// Every output element is reduced by exactly one thread in a fixed order,
// so results do not depend on the thread count.

#pragma once

#include <cstddef>

namespace tinyllm::kernels {

// C(MxN) += A(MxK) * B(KxN)
template <typename Real>
void gemm_nn(int M, int N, int K, const Real* A, const Real* B, Real* C);

// C(MxN) += A(MxK) * B(NxK)^T
template <typename Real>
void gemm_nt(int M, int N, int K, const Real* A, const Real* B, Real* C);

// C(MxN) += A(KxM)^T * B(KxN)
template <typename Real>
void gemm_tn(int M, int N, int K, const Real* A, const Real* B, Real* C);

// Upper bound on OpenMP threads used by the kernels; <= 0 restores the default.
void set_thread_limit(int threads);
int thread_limit();

}  // namespace tinyllm::kernels
