// Runtime kernel selection. Resolved once at static-init time from CPUID,
// overridable with XVAD_KERNELS=scalar|avx2|auto.

#include "xvad/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace xvad::kern {

namespace {

struct Ops {
    real (*dot)(const real*, const real*, size_t);
    void (*axpy)(real, const real*, real*, size_t);
    void (*add)(const real*, const real*, real*, size_t);
    void (*scale)(real, real*, size_t);
    real (*sum)(const real*, size_t);
    real (*max_value)(const real*, size_t, size_t*);
    void (*relu)(const real*, real*, size_t);
    void (*relu_backward)(const real*, const real*, real*, size_t);
    real (*sqdist)(const real*, const real*, size_t);
};

constexpr Ops kScalarOps = {
    scalar::dot,  scalar::axpy,      scalar::add,
    scalar::scale, scalar::sum,      scalar::max_value,
    scalar::relu, scalar::relu_backward, scalar::sqdist,
};

#ifdef XVAD_HAVE_AVX2
constexpr Ops kAvx2Ops = {
    avx2::dot,  avx2::axpy,      avx2::add,
    avx2::scale, avx2::sum,      avx2::max_value,
    avx2::relu, avx2::relu_backward, avx2::sqdist,
};
#endif

bool detect_avx2() {
#if defined(XVAD_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
    return __builtin_cpu_supports("avx2");
#else
    return false;
#endif
}

struct State {
    Backend backend;
    const Ops* ops;
};

State resolve_initial() {
    Backend b = detect_avx2() ? Backend::avx2 : Backend::scalar;
    if (const char* env = std::getenv("XVAD_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) b = Backend::scalar;
        else if (std::strcmp(env, "avx2") == 0 && detect_avx2()) b = Backend::avx2;
        // "auto" or anything else keeps the detected backend.
    }
#ifdef XVAD_HAVE_AVX2
    if (b == Backend::avx2) return {Backend::avx2, &kAvx2Ops};
#endif
    return {Backend::scalar, &kScalarOps};
}

State& state() {
    static State s = resolve_initial();
    return s;
}

}  // namespace

Backend active_backend() { return state().backend; }

const char* backend_name() {
    return state().backend == Backend::avx2 ? "avx2" : "scalar";
}

bool avx2_available() { return detect_avx2(); }

bool set_backend(Backend b) {
    if (b == Backend::avx2) {
#ifdef XVAD_HAVE_AVX2
        if (!detect_avx2()) return false;
        state() = {Backend::avx2, &kAvx2Ops};
        return true;
#else
        return false;
#endif
    }
    state() = {Backend::scalar, &kScalarOps};
    return true;
}

real dot(const real* a, const real* b, size_t n) { return state().ops->dot(a, b, n); }
void axpy(real alpha, const real* x, real* y, size_t n) { state().ops->axpy(alpha, x, y, n); }
void add(const real* a, const real* b, real* y, size_t n) { state().ops->add(a, b, y, n); }
void scale(real alpha, real* x, size_t n) { state().ops->scale(alpha, x, n); }
real sum(const real* x, size_t n) { return state().ops->sum(x, n); }
real max_value(const real* x, size_t n, size_t* argmax) { return state().ops->max_value(x, n, argmax); }
void relu(const real* x, real* y, size_t n) { state().ops->relu(x, y, n); }
void relu_backward(const real* x, const real* dy, real* dx, size_t n) {
    state().ops->relu_backward(x, dy, dx, n);
}
real sqdist(const real* a, const real* b, size_t n) { return state().ops->sqdist(a, b, n); }

}  // namespace xvad::kern
