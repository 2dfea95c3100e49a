// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

// Dense/sparse vector kernels used by the solvers and the field synthesis
// loops.  Every kernel has a plain scalar implementation; on x86 an AVX2+FMA
// variant is compiled into a separate translation unit and selected at load
// time when the CPU supports it (NEON on aarch64).  The variants agree with
// the scalar versions up to reassociation of the floating-point sums, so
// callers must not rely on bit-identical results across backends.  Within one
// backend results are deterministic.

namespace stomsfem::kernels {

enum class Backend { scalar, avx2, neon };

// Backend chosen at static-init time; override is for tests.
Backend active_backend();
const char* backend_name();
void force_backend(Backend b);   // throws std::invalid_argument if unavailable
void reset_backend();            // back to auto-detected

// sum_i x[i] * y[i]
double dot(const double* x, const double* y, std::size_t n);
// sum_i w[i] * x[i] * y[i]
double weighted_dot(const double* w, const double* x, const double* y, std::size_t n);
// y += a * x
void axpy(double a, const double* x, double* y, std::size_t n);
// y = x + b * y
void xpby(const double* x, double b, double* y, std::size_t n);
// x *= a
void scal(double a, double* x, std::size_t n);
// y = A x for CSR A (n rows); rowptr has n+1 entries
void csr_spmv(int n, const int* rowptr, const int* col, const double* val,
              const double* x, double* y);

namespace detail {
struct Ops {
  double (*dot)(const double*, const double*, std::size_t);
  double (*weighted_dot)(const double*, const double*, const double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
  void (*xpby)(const double*, double, double*, std::size_t);
  void (*scal)(double, double*, std::size_t);
};
extern const Ops scalar_ops;
#if defined(STOMSFEM_HAVE_AVX2_TU)
extern const Ops avx2_ops;
#endif
#if defined(STOMSFEM_HAVE_NEON_TU)
extern const Ops neon_ops;
#endif
}  // namespace detail

}  // namespace stomsfem::kernels
