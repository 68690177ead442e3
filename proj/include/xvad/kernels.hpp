// kernels.hpp - Dense arithmetic inner loops.
//
// Every hot loop in the toolkit (convolutions, heads, contrastive loss,
// kNN distances) funnels through this API. Two implementations exist:
// a scalar reference and an AVX2 variant; the dispatcher picks one at
// startup from CPUID, overridable with XVAD_KERNELS=scalar|avx2|auto.
// The AVX2 reductions accumulate in lane order, so they may differ from
// the scalar reference by rounding only; elementwise ops are bit-exact.
// Equivalence between the two backends is covered by tests/test_kernels.
#pragma once

#include <cstddef>

#include "xvad/real.hpp"

namespace xvad::kern {

enum class Backend { scalar, avx2 };

// Active backend (resolved once, before main, from CPUID + XVAD_KERNELS).
Backend active_backend();
const char* backend_name();

// Test hook; returns false if the requested backend is unavailable.
bool set_backend(Backend b);
bool avx2_available();

// ---------------------------------------------------------------------------
// Dispatched entry points. Semantics (shared by both backends):
//   dot:           sum_i a[i]*b[i]
//   axpy:          y[i] += alpha * x[i]
//   add:           y[i] = a[i] + b[i]
//   scale:         x[i] *= alpha
//   sum:           sum_i x[i]
//   max_value:     largest element; *argmax = first index attaining it
//   relu:          y[i] = x[i] > 0 ? x[i] : 0
//   relu_backward: dx[i] += dy[i] * (x[i] > 0)   (accumulating)
//   sqdist:        sum_i (a[i]-b[i])^2
// Inputs are assumed finite.
// ---------------------------------------------------------------------------
real dot(const real* a, const real* b, size_t n);
void axpy(real alpha, const real* x, real* y, size_t n);
void add(const real* a, const real* b, real* y, size_t n);
void scale(real alpha, real* x, size_t n);
real sum(const real* x, size_t n);
real max_value(const real* x, size_t n, size_t* argmax = nullptr);
void relu(const real* x, real* y, size_t n);
void relu_backward(const real* x, const real* dy, real* dx, size_t n);
real sqdist(const real* a, const real* b, size_t n);

// Reference implementations, always available (used for equivalence tests).
namespace scalar {
real dot(const real* a, const real* b, size_t n);
void axpy(real alpha, const real* x, real* y, size_t n);
void add(const real* a, const real* b, real* y, size_t n);
void scale(real alpha, real* x, size_t n);
real sum(const real* x, size_t n);
real max_value(const real* x, size_t n, size_t* argmax);
void relu(const real* x, real* y, size_t n);
void relu_backward(const real* x, const real* dy, real* dx, size_t n);
real sqdist(const real* a, const real* b, size_t n);
}  // namespace scalar

#ifdef XVAD_HAVE_AVX2
namespace avx2 {
real dot(const real* a, const real* b, size_t n);
void axpy(real alpha, const real* x, real* y, size_t n);
void add(const real* a, const real* b, real* y, size_t n);
void scale(real alpha, real* x, size_t n);
real sum(const real* x, size_t n);
real max_value(const real* x, size_t n, size_t* argmax);
void relu(const real* x, real* y, size_t n);
void relu_backward(const real* x, const real* dy, real* dx, size_t n);
real sqdist(const real* a, const real* b, size_t n);
}  // namespace avx2
#endif

}  // namespace xvad::kern
