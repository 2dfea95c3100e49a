// SPDX-License-Identifier: Apache-2.0
// NEON variants for aarch64, where 128-bit SIMD is baseline.

#include <arm_neon.h>

#include <cstddef>

#include "stomsfem/kernels.hpp"

namespace stomsfem::kernels {
namespace {

double dot_neon(const double* x, const double* y, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(x + i), vld1q_f64(y + i));
    acc1 = vfmaq_f64(acc1, vld1q_f64(x + i + 2), vld1q_f64(y + i + 2));
  }
  double s = vaddvq_f64(acc0) + vaddvq_f64(acc1);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

double weighted_dot_neon(const double* w, const double* x, const double* y, std::size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    float64x2_t wx = vmulq_f64(vld1q_f64(w + i), vld1q_f64(x + i));
    acc = vfmaq_f64(acc, wx, vld1q_f64(y + i));
  }
  double s = vaddvq_f64(acc);
  for (; i < n; ++i) s += w[i] * x[i] * y[i];
  return s;
}

void axpy_neon(double a, const double* x, double* y, std::size_t n) {
  float64x2_t va = vdupq_n_f64(a);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2)
    vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

void xpby_neon(const double* x, double b, double* y, std::size_t n) {
  float64x2_t vb = vdupq_n_f64(b);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2)
    vst1q_f64(y + i, vfmaq_f64(vld1q_f64(x + i), vb, vld1q_f64(y + i)));
  for (; i < n; ++i) y[i] = x[i] + b * y[i];
}

void scal_neon(double a, double* x, std::size_t n) {
  float64x2_t va = vdupq_n_f64(a);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(x + i, vmulq_f64(va, vld1q_f64(x + i)));
  for (; i < n; ++i) x[i] *= a;
}

}  // namespace

namespace detail {
const Ops neon_ops = {dot_neon, weighted_dot_neon, axpy_neon, xpby_neon, scal_neon};
}

}  // namespace stomsfem::kernels
