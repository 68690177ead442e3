// dam.hpp - Contrastive domain adaptation on normal target videos.
//
// From each video three random temporal crops are drawn: the anchor gets
// basic augmentations, the positive gets a shared per-clip spatial warp
// (similar motion, dissimilar scene), and the negative is the third crop's
// window re-drawn at a different start time (similar scene, dissimilar
// motion). Encoded features are pulled together / pushed apart with a
// memory-bank InfoNCE objective.
#pragma once

#include <deque>

#include "xvad/encoder.hpp"
#include "xvad/rng.hpp"
#include "xvad/synthdata.hpp"

namespace xvad {

// ---------------------------------------------------------------------------
// Spatial warp: a homography applied identically to every frame.
// Maps output pixel (x, y) to source coordinates
//   sx = (m[0] x + m[1] y + m[2]) / (m[6] x + m[7] y + 1)
//   sy = (m[3] x + m[4] y + m[5]) / (m[6] x + m[7] y + 1)
// with bilinear resampling and zero fill outside the frame.
// ---------------------------------------------------------------------------
struct WarpSpec {
    real m[8] = {1, 0, 0, 0, 1, 0, 0, 0};

    static WarpSpec identity() { return {}; }
    // Rotation/scale/translation about the frame center plus a mild
    // projective component. strength in [0,1] scales every magnitude;
    // strength 0 is the exact identity.
    static WarpSpec random(Rng& rng, int width, int height, real strength = 1);

    real linear_det() const { return m[0] * m[4] - m[1] * m[3]; }
};

// Throws data_error if the warp's linear part has determinant <= 0.25.
Tensor spatial_warp(const Tensor& clip, const WarpSpec& warp);

// ---------------------------------------------------------------------------
// Anchor augmentations: rotation, crop-and-resize, intensity jitter.
// All magnitudes zero yields the identity.
// ---------------------------------------------------------------------------
struct AugmentConfig {
    real max_rotation_deg = 15;
    // Crop zoom rescales apparent motion, so the default stays near 1.
    real min_crop_scale = 0.9;  // 1.0 disables cropping
    real max_intensity_jitter = 0.2;
};

Tensor augment_clip(const Tensor& clip, const AugmentConfig& cfg, Rng& rng);

// ---------------------------------------------------------------------------
// Triplets
// ---------------------------------------------------------------------------
struct Triplet {
    Tensor anchor, positive, negative;
};

struct TripletConfig {
    int clip_len = 8;
    int frame_rate = 1;
    // The three crops are drawn inside one parent window of
    // clip_len + parent_slack frames, so anchor and positive share the
    // clip's motion state; only the negative leaves the window via the
    // temporal shift.
    int parent_slack = 4;
    AugmentConfig aug;
    real warp_strength = 1;  // 0 disables the positive's spatial warp
};

// Clip of base's duration at a uniformly random valid start != base_start.
// Throws no_valid_shift_error when the video admits only one start.
Tensor temporal_shift(const VideoSample& video, int64_t base_start, int clip_len, int frame_rate,
                      uint64_t seed);

Triplet make_triplet(const VideoSample& video, const TripletConfig& cfg, uint64_t seed);

// ---------------------------------------------------------------------------
// Memory bank: FIFO ring of L2-normalized features.
// ---------------------------------------------------------------------------
class MemoryBank {
public:
    explicit MemoryBank(size_t capacity) : capacity_(capacity) {}

    size_t capacity() const { return capacity_; }
    size_t size() const { return entries_.size(); }

    // Stores a normalized copy; evicts the oldest entry when full.
    void push(const Tensor& feature);

    // Oldest to newest.
    const std::deque<Tensor>& entries() const { return entries_; }

private:
    size_t capacity_;
    std::deque<Tensor> entries_;
};

// ---------------------------------------------------------------------------
// InfoNCE over {positive, negative, bank entries}.
// Per sample: -log exp(za.zp) / (exp(za.zp) + exp(za.zn) + sum_j exp(za.b_j));
// the returned loss is the batch mean. Inputs are [B,d] rows, each row unit
// norm within 1e-6 (checked). Bank entries receive no gradient.
// ---------------------------------------------------------------------------
struct InfoNceResult {
    real loss = 0;
    Tensor d_anchor, d_positive, d_negative;  // same shape as the inputs
};

InfoNceResult infonce_loss(const Tensor& z_anchor, const Tensor& z_positive,
                           const Tensor& z_negative, const MemoryBank& bank,
                           bool with_grad = true);

// ---------------------------------------------------------------------------
// Adaptation loop
// ---------------------------------------------------------------------------
struct AdaptConfig {
    int epochs = 15;
    int batch_size = 8;
    size_t bank_capacity = 256;
    real lr = 0.003;
    real momentum = 0.9;
    // Leading encoder blocks kept frozen during adaptation. The early
    // blocks carry the generic motion vocabulary; adapting only the later
    // ones recalibrates to the target style without erasing it.
    int freeze_blocks = 1;
    TripletConfig triplet;
    uint64_t seed = 0;
    int jobs = 1;
};

// Adapts the encoder in place by minimizing infonce_loss over triplets from
// the normal-only manifest; anchors enter the bank after each step.
// Throws data_error if the manifest is not target_normal, is empty, or if no
// video satisfies the temporal-shift precondition.
TrainLog adapt_encoder(Encoder& enc, const DatasetManifest& normals, const AdaptConfig& cfg);

}  // namespace xvad
