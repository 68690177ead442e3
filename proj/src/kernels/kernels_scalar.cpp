// Scalar reference kernels. Plain left-to-right loops; the AVX2 backend is
// tested against these.

#include "xvad/kernels.hpp"

namespace xvad::kern::scalar {

real dot(const real* a, const real* b, size_t n) {
    real acc = 0;
    for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void axpy(real alpha, const real* x, real* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void add(const real* a, const real* b, real* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void scale(real alpha, real* x, size_t n) {
    for (size_t i = 0; i < n; ++i) x[i] *= alpha;
}

real sum(const real* x, size_t n) {
    real acc = 0;
    for (size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

real max_value(const real* x, size_t n, size_t* argmax) {
    real m = x[0];
    size_t mi = 0;
    for (size_t i = 1; i < n; ++i) {
        if (x[i] > m) {
            m = x[i];
            mi = i;
        }
    }
    if (argmax) *argmax = mi;
    return m;
}

void relu(const real* x, real* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = x[i] > 0 ? x[i] : real(0);
}

void relu_backward(const real* x, const real* dy, real* dx, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        if (x[i] > 0) dx[i] += dy[i];
    }
}

real sqdist(const real* a, const real* b, size_t n) {
    real acc = 0;
    for (size_t i = 0; i < n; ++i) {
        const real d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

}  // namespace xvad::kern::scalar
