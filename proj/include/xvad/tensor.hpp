// tensor.hpp - Minimal dense row-major tensors for model math and frames.
#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "xvad/real.hpp"

namespace xvad {

template <typename T>
struct BasicTensor {
    std::vector<int64_t> shape;
    std::vector<T> v;

    BasicTensor() = default;
    explicit BasicTensor(std::vector<int64_t> s) : shape(std::move(s)) {
        v.assign(static_cast<size_t>(numel_of(shape)), T(0));
    }

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) n *= d;
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(v.size()); }
    T* data() { return v.data(); }
    const T* data() const { return v.data(); }
    T& operator[](size_t i) { return v[i]; }
    const T& operator[](size_t i) const { return v[i]; }

    void fill(T value) { std::fill(v.begin(), v.end(), value); }

    bool same_shape(const BasicTensor& o) const { return shape == o.shape; }
};

using Tensor = BasicTensor<real>;    // model math
using TensorU8 = BasicTensor<uint8_t>;  // raw video frames [T,H,W,C]

// Row-major flat offsets.
inline int64_t idx2(int64_t i, int64_t j, int64_t d1) { return i * d1 + j; }
inline int64_t idx3(int64_t i, int64_t j, int64_t k, int64_t d1, int64_t d2) {
    return (i * d1 + j) * d2 + k;
}
inline int64_t idx4(int64_t i, int64_t j, int64_t k, int64_t l, int64_t d1, int64_t d2,
                    int64_t d3) {
    return ((i * d1 + j) * d2 + k) * d3 + l;
}

}  // namespace xvad
