// Kernel backend equivalence: the AVX2 variants must match the scalar
// reference bit-exactly for elementwise ops and to rounding for reductions.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "xvad/kernels.hpp"
#include "xvad/rng.hpp"

using namespace xvad;

static_assert(sizeof(real) == 8, "the numeric test suite requires the float64 build");

namespace {

std::vector<real> random_vec(Rng& rng, size_t n, real lo = -2, real hi = 2) {
    std::vector<real> v(n);
    for (real& x : v) x = static_cast<real>(rng.uniform(lo, hi));
    return v;
}

bool close_rel(real a, real b, real tol) {
    const real scale = std::max<real>({real(1), std::abs(a), std::abs(b)});
    return std::abs(a - b) <= tol * scale;
}

}  // namespace

TEST_CASE("scalar kernels match hand-computed values") {
    const real a[4] = {1, 2, 3, 4};
    const real b[4] = {5, 6, 7, 8};
    CHECK(kern::scalar::dot(a, b, 4) == doctest::Approx(70.0));
    CHECK(kern::scalar::sum(a, 4) == doctest::Approx(10.0));
    CHECK(kern::scalar::sqdist(a, b, 4) == doctest::Approx(64.0));

    size_t arg = 99;
    const real m[5] = {1, 7, 7, 3, 2};
    CHECK(kern::scalar::max_value(m, 5, &arg) == 7);
    CHECK(arg == 1);  // first index wins ties

    real y[4] = {1, 1, 1, 1};
    kern::scalar::axpy(2, a, y, 4);
    CHECK(y[0] == 3);
    CHECK(y[3] == 9);

    const real x[4] = {-1, 0, 2, -3};
    real r[4];
    kern::scalar::relu(x, r, 4);
    CHECK(r[0] == 0);
    CHECK(r[1] == 0);
    CHECK(r[2] == 2);

    real dx[4] = {0, 0, 0, 0};
    const real dy[4] = {5, 5, 5, 5};
    kern::scalar::relu_backward(x, dy, dx, 4);
    CHECK(dx[0] == 0);
    CHECK(dx[1] == 0);  // gradient gated off at exactly zero
    CHECK(dx[2] == 5);
}

#ifdef XVAD_HAVE_AVX2
TEST_CASE("avx2 kernels are equivalent to the scalar reference") {
    if (!kern::avx2_available()) {
        MESSAGE("avx2 not available on this host; skipping");
        return;
    }
    Rng rng(42);
    // Sizes straddle the vector width, including remainders and tiny inputs.
    for (size_t n : {1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 64, 100, 1023}) {
        const auto a = random_vec(rng, n);
        const auto b = random_vec(rng, n);

        CHECK(close_rel(kern::avx2::dot(a.data(), b.data(), n),
                        kern::scalar::dot(a.data(), b.data(), n), 1e-13));
        CHECK(close_rel(kern::avx2::sum(a.data(), n), kern::scalar::sum(a.data(), n), 1e-13));
        CHECK(close_rel(kern::avx2::sqdist(a.data(), b.data(), n),
                        kern::scalar::sqdist(a.data(), b.data(), n), 1e-13));

        size_t arg_s = 0, arg_v = 0;
        CHECK(kern::avx2::max_value(a.data(), n, &arg_v) ==
              kern::scalar::max_value(a.data(), n, &arg_s));
        CHECK(arg_v == arg_s);

        // Elementwise ops: bit-exact.
        std::vector<real> ys = a, yv = a;
        kern::scalar::axpy(real(0.37), b.data(), ys.data(), n);
        kern::avx2::axpy(real(0.37), b.data(), yv.data(), n);
        CHECK(ys == yv);

        std::vector<real> rs(n), rv(n);
        kern::scalar::relu(a.data(), rs.data(), n);
        kern::avx2::relu(a.data(), rv.data(), n);
        CHECK(rs == rv);

        std::vector<real> ds(n, real(0.5)), dv(n, real(0.5));
        kern::scalar::relu_backward(a.data(), b.data(), ds.data(), n);
        kern::avx2::relu_backward(a.data(), b.data(), dv.data(), n);
        CHECK(ds == dv);

        std::vector<real> adds(n), addv(n);
        kern::scalar::add(a.data(), b.data(), adds.data(), n);
        kern::avx2::add(a.data(), b.data(), addv.data(), n);
        CHECK(adds == addv);

        std::vector<real> ss = a, sv = a;
        kern::scalar::scale(real(-1.25), ss.data(), n);
        kern::avx2::scale(real(-1.25), sv.data(), n);
        CHECK(ss == sv);
    }
}

TEST_CASE("avx2 max ties resolve to the first index, matching scalar") {
    if (!kern::avx2_available()) return;
    std::vector<real> v(40, 1);
    v[7] = 5;
    v[23] = 5;
    size_t arg = 0;
    CHECK(kern::avx2::max_value(v.data(), v.size(), &arg) == 5);
    CHECK(arg == 7);
}
#endif

TEST_CASE("dispatcher reports a backend and can be forced to scalar") {
    CHECK((kern::active_backend() == kern::Backend::scalar ||
           kern::active_backend() == kern::Backend::avx2));
    const kern::Backend before = kern::active_backend();
    REQUIRE(kern::set_backend(kern::Backend::scalar));
    const real a[3] = {1, 2, 3};
    CHECK(kern::sum(a, 3) == 6);
    CHECK(std::string(kern::backend_name()) == "scalar");
    kern::set_backend(before);
}
