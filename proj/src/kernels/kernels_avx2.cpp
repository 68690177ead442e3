// AVX2 kernels. Compiled with -mavx2 in its own translation unit and only
// entered after a runtime CPUID check. FMA is deliberately not used so the
// elementwise ops stay bit-identical to the scalar reference; reductions
// differ from it by summation order only.

#include "xvad/kernels.hpp"

#ifdef XVAD_HAVE_AVX2

#include <immintrin.h>

namespace xvad::kern::avx2 {

#ifndef XVAD_REAL_FLOAT

// -------------------------------- float64 ---------------------------------

namespace {
inline double hsum(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}
}  // namespace

real dot(const real* a, const real* b, size_t n) {
    __m256d acc = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d va = _mm256_loadu_pd(a + i);
        const __m256d vb = _mm256_loadu_pd(b + i);
        acc = _mm256_add_pd(acc, _mm256_mul_pd(va, vb));
    }
    real r = hsum(acc);
    for (; i < n; ++i) r += a[i] * b[i];
    return r;
}

void axpy(real alpha, const real* x, real* y, size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d vx = _mm256_loadu_pd(x + i);
        const __m256d vy = _mm256_loadu_pd(y + i);
        _mm256_storeu_pd(y + i, _mm256_add_pd(vy, _mm256_mul_pd(va, vx)));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void add(const real* a, const real* b, real* y, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) y[i] = a[i] + b[i];
}

void scale(real alpha, real* x, size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(x + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), va));
    }
    for (; i < n; ++i) x[i] *= alpha;
}

real sum(const real* x, size_t n) {
    __m256d acc = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    real r = hsum(acc);
    for (; i < n; ++i) r += x[i];
    return r;
}

real max_value(const real* x, size_t n, size_t* argmax) {
    real m = x[0];
    size_t i = 1;
    if (n >= 8) {
        __m256d vm = _mm256_loadu_pd(x);
        for (i = 4; i + 4 <= n; i += 4) vm = _mm256_max_pd(vm, _mm256_loadu_pd(x + i));
        alignas(32) double lanes[4];
        _mm256_store_pd(lanes, vm);
        m = lanes[0];
        for (int l = 1; l < 4; ++l) {
            if (lanes[l] > m) m = lanes[l];
        }
    }
    for (; i < n; ++i) {
        if (x[i] > m) m = x[i];
    }
    if (argmax) {
        // First index attaining the maximum, matching the scalar tie rule.
        // Bounded scan: with NaN inputs no element compares equal to m.
        size_t mi = 0;
        while (mi + 1 < n && x[mi] != m) ++mi;
        *argmax = mi;
    }
    return m;
}

void relu(const real* x, real* y, size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        // max(x, 0) = (x > 0) ? x : 0, matching the scalar branch exactly.
        _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
    }
    for (; i < n; ++i) y[i] = x[i] > 0 ? x[i] : real(0);
}

void relu_backward(const real* x, const real* dy, real* dx, size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
        const __m256d gated = _mm256_and_pd(mask, _mm256_loadu_pd(dy + i));
        _mm256_storeu_pd(dx + i, _mm256_add_pd(_mm256_loadu_pd(dx + i), gated));
    }
    for (; i < n; ++i) {
        if (x[i] > 0) dx[i] += dy[i];
    }
}

real sqdist(const real* a, const real* b, size_t n) {
    __m256d acc = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        acc = _mm256_add_pd(acc, _mm256_mul_pd(d, d));
    }
    real r = hsum(acc);
    for (; i < n; ++i) {
        const real d = a[i] - b[i];
        r += d * d;
    }
    return r;
}

#else  // XVAD_REAL_FLOAT

// -------------------------------- float32 ---------------------------------

namespace {
inline float hsum(__m256 v) {
    const __m128 lo = _mm256_castps256_ps128(v);
    const __m128 hi = _mm256_extractf128_ps(v, 1);
    __m128 s = _mm_add_ps(lo, hi);
    s = _mm_add_ps(s, _mm_movehl_ps(s, s));
    s = _mm_add_ss(s, _mm_shuffle_ps(s, s, 1));
    return _mm_cvtss_f32(s);
}
}  // namespace

real dot(const real* a, const real* b, size_t n) {
    __m256 acc = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc = _mm256_add_ps(acc, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    }
    real r = hsum(acc);
    for (; i < n; ++i) r += a[i] * b[i];
    return r;
}

void axpy(real alpha, const real* x, real* y, size_t n) {
    const __m256 va = _mm256_set1_ps(alpha);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 vy = _mm256_loadu_ps(y + i);
        _mm256_storeu_ps(y + i, _mm256_add_ps(vy, _mm256_mul_ps(va, _mm256_loadu_ps(x + i))));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void add(const real* a, const real* b, real* y, size_t n) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    }
    for (; i < n; ++i) y[i] = a[i] + b[i];
}

void scale(real alpha, real* x, size_t n) {
    const __m256 va = _mm256_set1_ps(alpha);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(x + i, _mm256_mul_ps(_mm256_loadu_ps(x + i), va));
    }
    for (; i < n; ++i) x[i] *= alpha;
}

real sum(const real* x, size_t n) {
    __m256 acc = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
    real r = hsum(acc);
    for (; i < n; ++i) r += x[i];
    return r;
}

real max_value(const real* x, size_t n, size_t* argmax) {
    real m = x[0];
    size_t i = 1;
    if (n >= 16) {
        __m256 vm = _mm256_loadu_ps(x);
        for (i = 8; i + 8 <= n; i += 8) vm = _mm256_max_ps(vm, _mm256_loadu_ps(x + i));
        alignas(32) float lanes[8];
        _mm256_store_ps(lanes, vm);
        m = lanes[0];
        for (int l = 1; l < 8; ++l) {
            if (lanes[l] > m) m = lanes[l];
        }
    }
    for (; i < n; ++i) {
        if (x[i] > m) m = x[i];
    }
    if (argmax) {
        size_t mi = 0;
        while (mi + 1 < n && x[mi] != m) ++mi;
        *argmax = mi;
    }
    return m;
}

void relu(const real* x, real* y, size_t n) {
    const __m256 zero = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(y + i, _mm256_max_ps(_mm256_loadu_ps(x + i), zero));
    }
    for (; i < n; ++i) y[i] = x[i] > 0 ? x[i] : real(0);
}

void relu_backward(const real* x, const real* dy, real* dx, size_t n) {
    const __m256 zero = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_GT_OQ);
        const __m256 gated = _mm256_and_ps(mask, _mm256_loadu_ps(dy + i));
        _mm256_storeu_ps(dx + i, _mm256_add_ps(_mm256_loadu_ps(dx + i), gated));
    }
    for (; i < n; ++i) {
        if (x[i] > 0) dx[i] += dy[i];
    }
}

real sqdist(const real* a, const real* b, size_t n) {
    __m256 acc = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 d = _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i));
        acc = _mm256_add_ps(acc, _mm256_mul_ps(d, d));
    }
    real r = hsum(acc);
    for (; i < n; ++i) {
        const real d = a[i] - b[i];
        r += d * d;
    }
    return r;
}

#endif  // XVAD_REAL_FLOAT

}  // namespace xvad::kern::avx2

#endif  // XVAD_HAVE_AVX2
