// SPDX-License-Identifier: Apache-2.0
//
// Row-wise building blocks of the decoder. Shapes are in rows: `n` positions
// of `c` channels, row-major.

#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "tinyllm/kernels.hpp"

namespace tinyllm::ops {

inline constexpr double kLayerNormEps = 1e-5;

template <typename Real>
void layernorm_forward(Real* out, Real* mean, Real* rstd, const Real* in, const Real* gain, const Real* bias, int n,
                       int c) {
  for (int i = 0; i < n; ++i) {
    const Real* x = in + static_cast<std::ptrdiff_t>(i) * c;
    Real m = 0;
    for (int j = 0; j < c; ++j) m += x[j];
    m /= c;
    Real v = 0;
    for (int j = 0; j < c; ++j) v += (x[j] - m) * (x[j] - m);
    v /= c;
    const Real s = Real(1) / std::sqrt(v + static_cast<Real>(kLayerNormEps));
    Real* y = out + static_cast<std::ptrdiff_t>(i) * c;
    for (int j = 0; j < c; ++j) y[j] = (x[j] - m) * s * gain[j] + bias[j];
    if (mean) mean[i] = m;
    if (rstd) rstd[i] = s;
  }
}

// dinp += ..., dgain/dbias accumulate when non-null
template <typename Real>
void layernorm_backward(Real* dinp, Real* dgain, Real* dbias, const Real* dout, const Real* inp, const Real* gain,
                        const Real* mean, const Real* rstd, int n, int c) {
  for (int i = 0; i < n; ++i) {
    const Real* dy = dout + static_cast<std::ptrdiff_t>(i) * c;
    const Real* x = inp + static_cast<std::ptrdiff_t>(i) * c;
    Real* dx = dinp + static_cast<std::ptrdiff_t>(i) * c;
    const Real m = mean[i];
    const Real s = rstd[i];
    Real dnorm_mean = 0, dnorm_norm_mean = 0;
    for (int j = 0; j < c; ++j) {
      const Real norm = (x[j] - m) * s;
      const Real dnorm = gain[j] * dy[j];
      dnorm_mean += dnorm;
      dnorm_norm_mean += dnorm * norm;
    }
    dnorm_mean /= c;
    dnorm_norm_mean /= c;
    for (int j = 0; j < c; ++j) {
      const Real norm = (x[j] - m) * s;
      const Real dnorm = gain[j] * dy[j];
      if (dbias) dbias[j] += dy[j];
      if (dgain) dgain[j] += norm * dy[j];
      dx[j] += (dnorm - dnorm_mean - norm * dnorm_norm_mean) * s;
    }
  }
}

template <typename Real>
constexpr Real gelu_scale() {
  return static_cast<Real>(0.7978845608028654);  // sqrt(2 / pi)
}

template <typename Real>
void gelu_forward(Real* out, const Real* in, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const Real x = in[i];
    const Real cube = Real(0.044715) * x * x * x;
    out[i] = Real(0.5) * x * (Real(1) + std::tanh(gelu_scale<Real>() * (x + cube)));
  }
}

template <typename Real>
void gelu_backward(Real* din, const Real* in, const Real* dout, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const Real x = in[i];
    const Real cube = Real(0.044715) * x * x * x;
    const Real arg = gelu_scale<Real>() * (x + cube);
    const Real th = std::tanh(arg);
    const Real sech2 = Real(1) - th * th;
    const Real local = Real(0.5) * (Real(1) + th) +
                       x * Real(0.5) * sech2 * gelu_scale<Real>() * (Real(1) + Real(3) * Real(0.044715) * x * x);
    din[i] += local * dout[i];
  }
}

// out(n x oc) = in(n x ic) * weight(ic x oc) + bias
template <typename Real>
void linear_forward(Real* out, const Real* in, const Real* weight, const Real* bias, int n, int ic, int oc) {
  for (int i = 0; i < n; ++i) {
    Real* y = out + static_cast<std::ptrdiff_t>(i) * oc;
    if (bias) {
      std::copy(bias, bias + oc, y);
    } else {
      std::fill(y, y + oc, Real(0));
    }
  }
  kernels::gemm_nn(n, oc, ic, in, weight, out);
}

// dinp += dout W^T; dweight += in^T dout; dbias += colsum(dout). Null outputs are skipped.
template <typename Real>
void linear_backward(Real* dinp, Real* dweight, Real* dbias, const Real* dout, const Real* in, const Real* weight,
                     int n, int ic, int oc) {
  if (dinp) kernels::gemm_nt(n, ic, oc, dout, weight, dinp);
  if (dweight) kernels::gemm_tn(ic, oc, n, in, dout, dweight);
  if (dbias) {
    for (int i = 0; i < n; ++i) {
      const Real* dy = dout + static_cast<std::ptrdiff_t>(i) * oc;
      for (int o = 0; o < oc; ++o) dbias[o] += dy[o];
    }
  }
}

// Causal multi-head attention over one sequence block of `seq` rows.
// qkv: seq x 3c ([q | k | v]); att: heads x seq x seq probabilities
// (zero above the diagonal); out: seq x c.
template <typename Real>
void attention_forward(Real* out, Real* att, const Real* qkv, int seq, int c, int heads) {
  const int hs = c / heads;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(hs));
  const int c3 = 3 * c;
  for (int h = 0; h < heads; ++h) {
    for (int t = 0; t < seq; ++t) {
      const Real* q = qkv + static_cast<std::ptrdiff_t>(t) * c3 + h * hs;
      Real* row = att + (static_cast<std::ptrdiff_t>(h) * seq + t) * seq;
      Real maxv = -INFINITY;
      for (int t2 = 0; t2 <= t; ++t2) {
        const Real* k = qkv + static_cast<std::ptrdiff_t>(t2) * c3 + c + h * hs;
        Real dot = 0;
        for (int i = 0; i < hs; ++i) dot += q[i] * k[i];
        dot *= scale;
        row[t2] = dot;
        maxv = std::max(maxv, dot);
      }
      Real sum = 0;
      for (int t2 = 0; t2 <= t; ++t2) {
        row[t2] = std::exp(row[t2] - maxv);
        sum += row[t2];
      }
      const Real inv = Real(1) / sum;
      for (int t2 = 0; t2 <= t; ++t2) row[t2] *= inv;
      for (int t2 = t + 1; t2 < seq; ++t2) row[t2] = 0;
      Real* o = out + static_cast<std::ptrdiff_t>(t) * c + h * hs;
      std::fill(o, o + hs, Real(0));
      for (int t2 = 0; t2 <= t; ++t2) {
        const Real* v = qkv + static_cast<std::ptrdiff_t>(t2) * c3 + 2 * c + h * hs;
        const Real a = row[t2];
        for (int i = 0; i < hs; ++i) o[i] += a * v[i];
      }
    }
  }
}

// dqkv += d/dqkv given dout; `scratch` holds at least seq values.
template <typename Real>
void attention_backward(Real* dqkv, const Real* dout, const Real* qkv, const Real* att, int seq, int c, int heads,
                        Real* scratch) {
  const int hs = c / heads;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(hs));
  const int c3 = 3 * c;
  for (int h = 0; h < heads; ++h) {
    for (int t = 0; t < seq; ++t) {
      const Real* row = att + (static_cast<std::ptrdiff_t>(h) * seq + t) * seq;
      const Real* dy = dout + static_cast<std::ptrdiff_t>(t) * c + h * hs;
      Real* datt = scratch;
      Real weighted = 0;
      for (int t2 = 0; t2 <= t; ++t2) {
        const Real* v = qkv + static_cast<std::ptrdiff_t>(t2) * c3 + 2 * c + h * hs;
        Real* dv = dqkv + static_cast<std::ptrdiff_t>(t2) * c3 + 2 * c + h * hs;
        Real d = 0;
        for (int i = 0; i < hs; ++i) {
          d += dy[i] * v[i];
          dv[i] += row[t2] * dy[i];
        }
        datt[t2] = d;
        weighted += row[t2] * d;
      }
      const Real* q = qkv + static_cast<std::ptrdiff_t>(t) * c3 + h * hs;
      Real* dq = dqkv + static_cast<std::ptrdiff_t>(t) * c3 + h * hs;
      for (int t2 = 0; t2 <= t; ++t2) {
        const Real dpre = row[t2] * (datt[t2] - weighted) * scale;
        const Real* k = qkv + static_cast<std::ptrdiff_t>(t2) * c3 + c + h * hs;
        Real* dk = dqkv + static_cast<std::ptrdiff_t>(t2) * c3 + c + h * hs;
        for (int i = 0; i < hs; ++i) {
          dq[i] += dpre * k[i];
          dk[i] += dpre * q[i];
        }
      }
    }
  }
}

// In-place softmax of one row; returns log-sum-exp.
template <typename Real>
Real softmax_inplace(Real* row, int n) {
  Real maxv = row[0];
  for (int i = 1; i < n; ++i) maxv = std::max(maxv, row[i]);
  double sum = 0;
  for (int i = 0; i < n; ++i) {
    row[i] = std::exp(row[i] - maxv);
    sum += row[i];
  }
  const Real inv = static_cast<Real>(1.0 / sum);
  for (int i = 0; i < n; ++i) row[i] *= inv;
  return static_cast<Real>(maxv + std::log(sum));
}

}  // namespace tinyllm::ops
