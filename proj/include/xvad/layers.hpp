// layers.hpp - Differentiable building blocks.
//
// Free functions in forward/backward pairs. Backward passes take the cached
// forward input, accumulate parameter gradients into caller-owned buffers,
// and return the input gradient. All inner loops go through xvad::kern.
#pragma once

#include "xvad/tensor.hpp"

namespace xvad {

// Per-frame 3x3 spatial convolution, padding 1, square stride.
// x [L,H,W,Cin], w [3,3,Cin,Cout], b [Cout] -> y [L,H',W',Cout]
Tensor conv2d_spatial_fwd(const Tensor& x, const Tensor& w, const Tensor& b, int stride);
Tensor conv2d_spatial_bwd(const Tensor& x, const Tensor& w, const Tensor& dy, int stride,
                          Tensor& gw, Tensor& gb);

// Temporal convolution (kernel 3, zero same-padding) applied per pixel.
// x [L,H,W,Cin], w [3,Cin,Cout], b [Cout] -> y [L,H,W,Cout]
Tensor conv1d_temporal_fwd(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor conv1d_temporal_bwd(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& gw,
                           Tensor& gb);

// 1-D convolution over the node axis of an [L,Din] matrix, zero same-padding.
// w [k,Din,Dout] with odd k, b [Dout] -> y [L,Dout]
Tensor conv1d_nodes_fwd(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor conv1d_nodes_bwd(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& gw,
                        Tensor& gb);

Tensor relu_fwd(const Tensor& x);
Tensor relu_bwd(const Tensor& x, const Tensor& dy);  // dy gated by x > 0

// Per-channel standardization over all leading axes ([...,C] layout):
// y = (x - mean) / sqrt(var + eps). Strips DC brightness and contrast so
// downstream features respond to structure and motion at O(1) scale.
Tensor standardize_channels_fwd(const Tensor& x);
Tensor standardize_channels_bwd(const Tensor& x, const Tensor& dy);

// Global average pool over all leading axes: [L,H,W,C] -> [C].
Tensor gap_fwd(const Tensor& x);
Tensor gap_bwd(const std::vector<int64_t>& x_shape, const Tensor& dy);

// y = x.w + b with x [Din], w [Din,Dout], b [Dout].
Tensor linear_fwd(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor linear_bwd(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& gw, Tensor& gb);

// Unit-norm projection of a vector; the zero vector maps to itself and its
// gradient is defined as zero.
Tensor l2_normalize(const Tensor& x);
Tensor l2_normalize_bwd(const Tensor& x, const Tensor& dy);

// Numerically stable softmax over a vector of logits.
Tensor softmax(const Tensor& logits);

struct CrossEntropy {
    real loss;
    Tensor probs;
};
CrossEntropy softmax_cross_entropy(const Tensor& logits, int64_t label);
Tensor softmax_cross_entropy_bwd(const Tensor& probs, int64_t label);  // probs - onehot

}  // namespace xvad
