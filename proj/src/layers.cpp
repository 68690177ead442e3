#include "xvad/layers.hpp"

#include <cmath>

#include "xvad/errors.hpp"
#include "xvad/kernels.hpp"

namespace xvad {

namespace {

void check(bool cond, const char* msg) {
    if (!cond) throw data_error(msg);
}

int64_t conv_out_extent(int64_t in, int stride) {
    // kernel 3, padding 1: out = floor((in - 1) / stride) + 1
    return (in - 1) / stride + 1;
}

}  // namespace

Tensor conv2d_spatial_fwd(const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
    check(x.shape.size() == 4 && w.shape.size() == 4, "conv2d: bad rank");
    const int64_t L = x.shape[0], H = x.shape[1], W = x.shape[2], Ci = x.shape[3];
    check(w.shape[0] == 3 && w.shape[1] == 3 && w.shape[2] == Ci, "conv2d: shape mismatch");
    const int64_t Co = w.shape[3];
    const int64_t Ho = conv_out_extent(H, stride), Wo = conv_out_extent(W, stride);
    Tensor y({L, Ho, Wo, Co});
    for (int64_t l = 0; l < L; ++l) {
        for (int64_t yo = 0; yo < Ho; ++yo) {
            for (int64_t xo = 0; xo < Wo; ++xo) {
                real* out = &y[idx4(l, yo, xo, 0, Ho, Wo, Co)];
                for (int64_t c = 0; c < Co; ++c) out[c] = b[c];
                for (int ky = 0; ky < 3; ++ky) {
                    const int64_t yi = yo * stride - 1 + ky;
                    if (yi < 0 || yi >= H) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int64_t xi = xo * stride - 1 + kx;
                        if (xi < 0 || xi >= W) continue;
                        const real* in = &x[idx4(l, yi, xi, 0, H, W, Ci)];
                        const real* wr = &w[idx4(ky, kx, 0, 0, 3, Ci, Co)];
                        for (int64_t ci = 0; ci < Ci; ++ci) {
                            kern::axpy(in[ci], wr + ci * Co, out, static_cast<size_t>(Co));
                        }
                    }
                }
            }
        }
    }
    return y;
}

Tensor conv2d_spatial_bwd(const Tensor& x, const Tensor& w, const Tensor& dy, int stride,
                          Tensor& gw, Tensor& gb) {
    const int64_t L = x.shape[0], H = x.shape[1], W = x.shape[2], Ci = x.shape[3];
    const int64_t Co = w.shape[3];
    const int64_t Ho = dy.shape[1], Wo = dy.shape[2];
    Tensor dx(x.shape);
    for (int64_t l = 0; l < L; ++l) {
        for (int64_t yo = 0; yo < Ho; ++yo) {
            for (int64_t xo = 0; xo < Wo; ++xo) {
                const real* dout = &dy[idx4(l, yo, xo, 0, Ho, Wo, Co)];
                kern::axpy(1, dout, gb.data(), static_cast<size_t>(Co));
                for (int ky = 0; ky < 3; ++ky) {
                    const int64_t yi = yo * stride - 1 + ky;
                    if (yi < 0 || yi >= H) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int64_t xi = xo * stride - 1 + kx;
                        if (xi < 0 || xi >= W) continue;
                        const real* in = &x[idx4(l, yi, xi, 0, H, W, Ci)];
                        real* din = &dx[idx4(l, yi, xi, 0, H, W, Ci)];
                        const real* wr = &w[idx4(ky, kx, 0, 0, 3, Ci, Co)];
                        real* gwr = &gw[idx4(ky, kx, 0, 0, 3, Ci, Co)];
                        for (int64_t ci = 0; ci < Ci; ++ci) {
                            din[ci] += kern::dot(wr + ci * Co, dout, static_cast<size_t>(Co));
                            kern::axpy(in[ci], dout, gwr + ci * Co, static_cast<size_t>(Co));
                        }
                    }
                }
            }
        }
    }
    return dx;
}

Tensor conv1d_temporal_fwd(const Tensor& x, const Tensor& w, const Tensor& b) {
    check(x.shape.size() == 4 && w.shape.size() == 3, "conv1d_temporal: bad rank");
    const int64_t L = x.shape[0], H = x.shape[1], W = x.shape[2], Ci = x.shape[3];
    check(w.shape[0] == 3 && w.shape[1] == Ci, "conv1d_temporal: shape mismatch");
    const int64_t Co = w.shape[2];
    const int64_t plane = H * W;
    Tensor y({L, H, W, Co});
    for (int64_t l = 0; l < L; ++l) {
        for (int64_t p = 0; p < plane; ++p) {
            real* out = &y.v[static_cast<size_t>((l * plane + p) * Co)];
            for (int64_t c = 0; c < Co; ++c) out[c] = b[c];
            for (int kt = 0; kt < 3; ++kt) {
                const int64_t li = l - 1 + kt;
                if (li < 0 || li >= L) continue;
                const real* in = &x.v[static_cast<size_t>((li * plane + p) * Ci)];
                const real* wr = &w[idx3(kt, 0, 0, Ci, Co)];
                for (int64_t ci = 0; ci < Ci; ++ci) {
                    kern::axpy(in[ci], wr + ci * Co, out, static_cast<size_t>(Co));
                }
            }
        }
    }
    return y;
}

Tensor conv1d_temporal_bwd(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& gw,
                           Tensor& gb) {
    const int64_t L = x.shape[0], H = x.shape[1], W = x.shape[2], Ci = x.shape[3];
    const int64_t Co = w.shape[2];
    const int64_t plane = H * W;
    Tensor dx(x.shape);
    for (int64_t l = 0; l < L; ++l) {
        for (int64_t p = 0; p < plane; ++p) {
            const real* dout = &dy.v[static_cast<size_t>((l * plane + p) * Co)];
            kern::axpy(1, dout, gb.data(), static_cast<size_t>(Co));
            for (int kt = 0; kt < 3; ++kt) {
                const int64_t li = l - 1 + kt;
                if (li < 0 || li >= L) continue;
                const real* in = &x.v[static_cast<size_t>((li * plane + p) * Ci)];
                real* din = &dx.v[static_cast<size_t>((li * plane + p) * Ci)];
                const real* wr = &w[idx3(kt, 0, 0, Ci, Co)];
                real* gwr = &gw[idx3(kt, 0, 0, Ci, Co)];
                for (int64_t ci = 0; ci < Ci; ++ci) {
                    din[ci] += kern::dot(wr + ci * Co, dout, static_cast<size_t>(Co));
                    kern::axpy(in[ci], dout, gwr + ci * Co, static_cast<size_t>(Co));
                }
            }
        }
    }
    return dx;
}

Tensor conv1d_nodes_fwd(const Tensor& x, const Tensor& w, const Tensor& b) {
    check(x.shape.size() == 2 && w.shape.size() == 3, "conv1d_nodes: bad rank");
    const int64_t L = x.shape[0], Di = x.shape[1];
    const int64_t K = w.shape[0], Do = w.shape[2];
    check(w.shape[1] == Di && (K % 2) == 1, "conv1d_nodes: shape mismatch");
    const int64_t pad = K / 2;
    Tensor y({L, Do});
    for (int64_t l = 0; l < L; ++l) {
        real* out = &y[idx2(l, 0, Do)];
        for (int64_t c = 0; c < Do; ++c) out[c] = b[c];
        for (int64_t k = 0; k < K; ++k) {
            const int64_t li = l - pad + k;
            if (li < 0 || li >= L) continue;
            const real* in = &x[idx2(li, 0, Di)];
            const real* wr = &w[idx3(k, 0, 0, Di, Do)];
            for (int64_t ci = 0; ci < Di; ++ci) {
                kern::axpy(in[ci], wr + ci * Do, out, static_cast<size_t>(Do));
            }
        }
    }
    return y;
}

Tensor conv1d_nodes_bwd(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& gw,
                        Tensor& gb) {
    const int64_t L = x.shape[0], Di = x.shape[1];
    const int64_t K = w.shape[0], Do = w.shape[2];
    const int64_t pad = K / 2;
    Tensor dx(x.shape);
    for (int64_t l = 0; l < L; ++l) {
        const real* dout = &dy[idx2(l, 0, Do)];
        kern::axpy(1, dout, gb.data(), static_cast<size_t>(Do));
        for (int64_t k = 0; k < K; ++k) {
            const int64_t li = l - pad + k;
            if (li < 0 || li >= L) continue;
            const real* in = &x[idx2(li, 0, Di)];
            real* din = &dx[idx2(li, 0, Di)];
            const real* wr = &w[idx3(k, 0, 0, Di, Do)];
            real* gwr = &gw[idx3(k, 0, 0, Di, Do)];
            for (int64_t ci = 0; ci < Di; ++ci) {
                din[ci] += kern::dot(wr + ci * Do, dout, static_cast<size_t>(Do));
                kern::axpy(in[ci], dout, gwr + ci * Do, static_cast<size_t>(Do));
            }
        }
    }
    return dx;
}

Tensor relu_fwd(const Tensor& x) {
    Tensor y(x.shape);
    kern::relu(x.data(), y.data(), x.v.size());
    return y;
}

Tensor relu_bwd(const Tensor& x, const Tensor& dy) {
    Tensor dx(x.shape);
    kern::relu_backward(x.data(), dy.data(), dx.data(), x.v.size());
    return dx;
}

namespace {

constexpr real kStdEps = real(1e-6);

struct ChannelStats {
    std::vector<real> mean;
    std::vector<real> inv_std;  // 1 / sqrt(var + eps)
};

ChannelStats channel_stats(const Tensor& x) {
    const int64_t C = x.shape.back();
    const int64_t n = x.numel() / C;
    ChannelStats st;
    st.mean.assign(static_cast<size_t>(C), 0);
    st.inv_std.assign(static_cast<size_t>(C), 0);
    for (int64_t i = 0; i < n; ++i) {
        kern::axpy(1, x.data() + i * C, st.mean.data(), static_cast<size_t>(C));
    }
    const real inv_n = real(1) / static_cast<real>(n);
    kern::scale(inv_n, st.mean.data(), static_cast<size_t>(C));
    for (int64_t i = 0; i < n; ++i) {
        const real* row = x.data() + i * C;
        for (int64_t c = 0; c < C; ++c) {
            const real d = row[c] - st.mean[static_cast<size_t>(c)];
            st.inv_std[static_cast<size_t>(c)] += d * d;
        }
    }
    for (int64_t c = 0; c < C; ++c) {
        st.inv_std[static_cast<size_t>(c)] =
            real(1) / std::sqrt(st.inv_std[static_cast<size_t>(c)] * inv_n + kStdEps);
    }
    return st;
}

}  // namespace

Tensor standardize_channels_fwd(const Tensor& x) {
    const ChannelStats st = channel_stats(x);
    const int64_t C = x.shape.back();
    const int64_t n = x.numel() / C;
    Tensor y(x.shape);
    for (int64_t i = 0; i < n; ++i) {
        const real* in = x.data() + i * C;
        real* out = y.data() + i * C;
        for (int64_t c = 0; c < C; ++c) {
            out[c] = (in[c] - st.mean[static_cast<size_t>(c)]) * st.inv_std[static_cast<size_t>(c)];
        }
    }
    return y;
}

Tensor standardize_channels_bwd(const Tensor& x, const Tensor& dy) {
    // dx = (1/s) * (dy - mean(dy) - y * mean(dy * y)) per channel.
    const ChannelStats st = channel_stats(x);
    const int64_t C = x.shape.back();
    const int64_t n = x.numel() / C;
    const real inv_n = real(1) / static_cast<real>(n);
    std::vector<real> dy_mean(static_cast<size_t>(C), 0);
    std::vector<real> dyy_mean(static_cast<size_t>(C), 0);
    for (int64_t i = 0; i < n; ++i) {
        const real* drow = dy.data() + i * C;
        const real* xrow = x.data() + i * C;
        for (int64_t c = 0; c < C; ++c) {
            const real yv =
                (xrow[c] - st.mean[static_cast<size_t>(c)]) * st.inv_std[static_cast<size_t>(c)];
            dy_mean[static_cast<size_t>(c)] += drow[c];
            dyy_mean[static_cast<size_t>(c)] += drow[c] * yv;
        }
    }
    for (int64_t c = 0; c < C; ++c) {
        dy_mean[static_cast<size_t>(c)] *= inv_n;
        dyy_mean[static_cast<size_t>(c)] *= inv_n;
    }
    Tensor dx(x.shape);
    for (int64_t i = 0; i < n; ++i) {
        const real* drow = dy.data() + i * C;
        const real* xrow = x.data() + i * C;
        real* out = dx.data() + i * C;
        for (int64_t c = 0; c < C; ++c) {
            const real yv =
                (xrow[c] - st.mean[static_cast<size_t>(c)]) * st.inv_std[static_cast<size_t>(c)];
            out[c] = st.inv_std[static_cast<size_t>(c)] *
                     (drow[c] - dy_mean[static_cast<size_t>(c)] -
                      yv * dyy_mean[static_cast<size_t>(c)]);
        }
    }
    return dx;
}

Tensor gap_fwd(const Tensor& x) {
    const int64_t C = x.shape.back();
    const int64_t n = x.numel() / C;
    Tensor y({C});
    for (int64_t i = 0; i < n; ++i) {
        kern::axpy(1, x.data() + i * C, y.data(), static_cast<size_t>(C));
    }
    kern::scale(real(1) / static_cast<real>(n), y.data(), static_cast<size_t>(C));
    return y;
}

Tensor gap_bwd(const std::vector<int64_t>& x_shape, const Tensor& dy) {
    Tensor dx(x_shape);
    const int64_t C = x_shape.back();
    const int64_t n = dx.numel() / C;
    const real inv = real(1) / static_cast<real>(n);
    for (int64_t i = 0; i < n; ++i) {
        kern::axpy(inv, dy.data(), dx.data() + i * C, static_cast<size_t>(C));
    }
    return dx;
}

Tensor linear_fwd(const Tensor& x, const Tensor& w, const Tensor& b) {
    check(x.shape.size() == 1 && w.shape.size() == 2 && w.shape[0] == x.shape[0],
          "linear: shape mismatch");
    const int64_t Di = w.shape[0], Do = w.shape[1];
    Tensor y({Do});
    y.v = b.v;
    for (int64_t i = 0; i < Di; ++i) {
        kern::axpy(x[static_cast<size_t>(i)], &w[idx2(i, 0, Do)], y.data(),
                   static_cast<size_t>(Do));
    }
    return y;
}

Tensor linear_bwd(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& gw, Tensor& gb) {
    const int64_t Di = w.shape[0], Do = w.shape[1];
    Tensor dx({Di});
    for (int64_t i = 0; i < Di; ++i) {
        dx[static_cast<size_t>(i)] = kern::dot(&w[idx2(i, 0, Do)], dy.data(),
                                               static_cast<size_t>(Do));
        kern::axpy(x[static_cast<size_t>(i)], dy.data(), &gw[idx2(i, 0, Do)],
                   static_cast<size_t>(Do));
    }
    kern::axpy(1, dy.data(), gb.data(), static_cast<size_t>(Do));
    return dx;
}

Tensor l2_normalize(const Tensor& x) {
    const real nrm = std::sqrt(kern::dot(x.data(), x.data(), x.v.size()));
    Tensor y = x;
    if (nrm > 0) kern::scale(real(1) / nrm, y.data(), y.v.size());
    else y.fill(0);
    return y;
}

Tensor l2_normalize_bwd(const Tensor& x, const Tensor& dy) {
    const real nrm = std::sqrt(kern::dot(x.data(), x.data(), x.v.size()));
    Tensor dx(x.shape);
    if (nrm == 0) return dx;  // normalization of zero defined as zero, gradient zero
    // dx = (dy - y * (y . dy)) / |x|  with y = x / |x|
    Tensor y = x;
    kern::scale(real(1) / nrm, y.data(), y.v.size());
    const real proj = kern::dot(y.data(), dy.data(), y.v.size());
    dx.v = dy.v;
    kern::axpy(-proj, y.data(), dx.data(), dx.v.size());
    kern::scale(real(1) / nrm, dx.data(), dx.v.size());
    return dx;
}

Tensor softmax(const Tensor& logits) {
    const real m = kern::max_value(logits.data(), logits.v.size(), nullptr);
    Tensor p(logits.shape);
    real z = 0;
    for (size_t i = 0; i < logits.v.size(); ++i) {
        p.v[i] = std::exp(logits.v[i] - m);
        z += p.v[i];
    }
    kern::scale(real(1) / z, p.data(), p.v.size());
    return p;
}

CrossEntropy softmax_cross_entropy(const Tensor& logits, int64_t label) {
    check(label >= 0 && label < logits.numel(), "cross-entropy: label out of range");
    const real m = kern::max_value(logits.data(), logits.v.size(), nullptr);
    real z = 0;
    for (size_t i = 0; i < logits.v.size(); ++i) z += std::exp(logits.v[i] - m);
    CrossEntropy ce;
    ce.loss = std::log(z) + m - logits.v[static_cast<size_t>(label)];
    ce.probs = softmax(logits);
    return ce;
}

Tensor softmax_cross_entropy_bwd(const Tensor& probs, int64_t label) {
    Tensor d = probs;
    d.v[static_cast<size_t>(label)] -= 1;
    return d;
}

}  // namespace xvad
