#include "xvad/dam.hpp"

#include <cmath>

#include "xvad/errors.hpp"
#include "xvad/kernels.hpp"
#include "xvad/parallel.hpp"

namespace xvad {

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;

// Bilinear sample with zero fill outside [0,W)x[0,H).
inline real sample_bilinear(const real* frame, int64_t H, int64_t W, int64_t C, real sy, real sx,
                            int64_t c) {
    const int64_t x0 = static_cast<int64_t>(std::floor(sx));
    const int64_t y0 = static_cast<int64_t>(std::floor(sy));
    const real fx = sx - static_cast<real>(x0);
    const real fy = sy - static_cast<real>(y0);
    real acc = 0;
    for (int dy = 0; dy <= 1; ++dy) {
        const int64_t y = y0 + dy;
        if (y < 0 || y >= H) continue;
        const real wy = dy ? fy : real(1) - fy;
        for (int dx = 0; dx <= 1; ++dx) {
            const int64_t x = x0 + dx;
            if (x < 0 || x >= W) continue;
            const real wx = dx ? fx : real(1) - fx;
            acc += wy * wx * frame[idx3(y, x, c, W, C)];
        }
    }
    return acc;
}

Tensor apply_homography(const Tensor& clip, const real m[8]) {
    const int64_t L = clip.shape[0], H = clip.shape[1], W = clip.shape[2], C = clip.shape[3];
    Tensor out(clip.shape);
    const size_t frame_sz = static_cast<size_t>(H * W * C);
    for (int64_t l = 0; l < L; ++l) {
        const real* src = clip.data() + static_cast<size_t>(l) * frame_sz;
        real* dst = out.data() + static_cast<size_t>(l) * frame_sz;
        for (int64_t y = 0; y < H; ++y) {
            for (int64_t x = 0; x < W; ++x) {
                const real xf = static_cast<real>(x), yf = static_cast<real>(y);
                const real wdiv = m[6] * xf + m[7] * yf + 1;
                const real sx = (m[0] * xf + m[1] * yf + m[2]) / wdiv;
                const real sy = (m[3] * xf + m[4] * yf + m[5]) / wdiv;
                for (int64_t c = 0; c < C; ++c) {
                    dst[idx3(y, x, c, W, C)] = sample_bilinear(src, H, W, C, sy, sx, c);
                }
            }
        }
    }
    return out;
}

}  // namespace

WarpSpec WarpSpec::random(Rng& rng, int width, int height, real strength) {
    const real cx = static_cast<real>(width - 1) / 2;
    const real cy = static_cast<real>(height - 1) / 2;
    // Zoom stays near 1: scaling changes apparent speed, and the positive is
    // meant to share the anchor's motion.
    const real angle = strength * static_cast<real>(rng.uniform(-0.35, 0.35));
    const real sx = 1 + strength * static_cast<real>(rng.uniform(-0.05, 0.08));
    const real sy = 1 + strength * static_cast<real>(rng.uniform(-0.05, 0.08));
    const real tx = strength * static_cast<real>(rng.uniform(-0.12, 0.12)) * width;
    const real ty = strength * static_cast<real>(rng.uniform(-0.12, 0.12)) * height;
    const real px = strength * static_cast<real>(rng.uniform(-1.0, 1.0)) * real(0.002);
    const real py = strength * static_cast<real>(rng.uniform(-1.0, 1.0)) * real(0.002);
    const real ca = std::cos(angle), sa = std::sin(angle);
    // Output-to-source map: rotate+scale about the center, then translate.
    WarpSpec w;
    w.m[0] = ca * sx;
    w.m[1] = -sa * sx;
    w.m[3] = sa * sy;
    w.m[4] = ca * sy;
    w.m[2] = cx - w.m[0] * cx - w.m[1] * cy + tx;
    w.m[5] = cy - w.m[3] * cx - w.m[4] * cy + ty;
    w.m[6] = px;
    w.m[7] = py;
    return w;
}

Tensor spatial_warp(const Tensor& clip, const WarpSpec& warp) {
    if (clip.shape.size() != 4 || clip.numel() == 0) throw data_error("spatial_warp: empty clip");
    if (!(warp.linear_det() > real(0.25))) {
        throw data_error("spatial_warp: degenerate warp (|linear det| bound violated)");
    }
    return apply_homography(clip, warp.m);
}

Tensor augment_clip(const Tensor& clip, const AugmentConfig& cfg, Rng& rng) {
    const int64_t H = clip.shape[1], W = clip.shape[2];
    // Rotation and crop-zoom compose into one affine output-to-source map.
    const real angle = static_cast<real>(rng.uniform(-1.0, 1.0)) *
                       cfg.max_rotation_deg * static_cast<real>(kPi) / 180;
    const real scale = static_cast<real>(rng.uniform(cfg.min_crop_scale, 1.0));
    // Crop window offset within the slack left by the zoom.
    const real max_off_x = static_cast<real>(W - 1) * (1 - scale);
    const real max_off_y = static_cast<real>(H - 1) * (1 - scale);
    const real off_x = static_cast<real>(rng.uniform(0.0, 1.0)) * max_off_x;
    const real off_y = static_cast<real>(rng.uniform(0.0, 1.0)) * max_off_y;
    const real contrast = 1 + static_cast<real>(rng.uniform(-1.0, 1.0)) * cfg.max_intensity_jitter;
    const real brightness = static_cast<real>(rng.uniform(-1.0, 1.0)) * cfg.max_intensity_jitter;

    const real ca = std::cos(angle), sa = std::sin(angle);
    const real cx = static_cast<real>(W - 1) / 2, cy = static_cast<real>(H - 1) / 2;
    real m[8];
    // source = R * (out - c) * scale + c_crop, with c_crop the crop center.
    m[0] = ca * scale;
    m[1] = -sa * scale;
    m[3] = sa * scale;
    m[4] = ca * scale;
    const real ccx = off_x + scale * cx;
    const real ccy = off_y + scale * cy;
    m[2] = ccx - m[0] * cx - m[1] * cy;
    m[5] = ccy - m[3] * cx - m[4] * cy;
    m[6] = 0;
    m[7] = 0;

    const bool identity_geometry = angle == 0 && scale == 1;
    Tensor out = identity_geometry ? clip : apply_homography(clip, m);
    if (contrast != 1 || brightness != 0) {
        for (real& v : out.v) v = contrast * (v - real(0.5)) + real(0.5) + brightness;
    }
    return out;
}

Tensor temporal_shift(const VideoSample& video, int64_t base_start, int clip_len, int frame_rate,
                      uint64_t seed) {
    const int64_t n_starts = n_valid_clip_starts(video.n_frames(), clip_len, frame_rate);
    if (n_starts <= 0) throw data_error("temporal_shift: video too short for one clip");
    if (base_start < 0 || base_start >= n_starts) {
        throw data_error("temporal_shift: base start out of range");
    }
    if (n_starts < 2) {
        throw no_valid_shift_error("temporal_shift: video admits only one clip start");
    }
    Rng rng(seed);
    const int64_t pick = rng.uniform_int(0, n_starts - 2);
    const int64_t shifted = pick >= base_start ? pick + 1 : pick;
    return clip_from_frames(video.frames, shifted, clip_len, frame_rate);
}

Triplet make_triplet(const VideoSample& video, const TripletConfig& cfg, uint64_t seed) {
    const int64_t n_starts = n_valid_clip_starts(video.n_frames(), cfg.clip_len, cfg.frame_rate);
    if (n_starts < 2) {
        throw no_valid_shift_error("make_triplet: video admits no temporal shift");
    }
    Rng rng(seed);
    // Parent window: the crops share its motion state.
    const int64_t span = std::min<int64_t>(n_starts - 1, cfg.parent_slack);
    const int64_t parent = rng.uniform_int(0, n_starts - 1 - span);
    const int64_t s1 = parent + rng.uniform_int(0, span);
    const int64_t s2 = parent + rng.uniform_int(0, span);
    const int64_t s3 = parent + rng.uniform_int(0, span);

    Triplet t;
    const Tensor c1 = clip_from_frames(video.frames, s1, cfg.clip_len, cfg.frame_rate);
    t.anchor = augment_clip(c1, cfg.aug, rng);
    const Tensor c2 = clip_from_frames(video.frames, s2, cfg.clip_len, cfg.frame_rate);
    const WarpSpec warp = WarpSpec::random(rng, static_cast<int>(c2.shape[2]),
                                           static_cast<int>(c2.shape[1]), cfg.warp_strength);
    t.positive = spatial_warp(c2, warp);  // strength 0 resamples through the exact identity
    t.negative = temporal_shift(video, s3, cfg.clip_len, cfg.frame_rate, rng.next_u64());
    return t;
}

void MemoryBank::push(const Tensor& feature) {
    if (capacity_ == 0) return;
    if (entries_.size() == capacity_) entries_.pop_front();
    entries_.push_back(l2_normalize(feature));
}

InfoNceResult infonce_loss(const Tensor& z_anchor, const Tensor& z_positive,
                           const Tensor& z_negative, const MemoryBank& bank, bool with_grad) {
    if (z_anchor.shape.size() != 2 || z_anchor.shape != z_positive.shape ||
        z_anchor.shape != z_negative.shape) {
        throw data_error("infonce: inputs must be [B,d] with matching shapes");
    }
    const int64_t B = z_anchor.shape[0], D = z_anchor.shape[1];
    if (B < 1) throw data_error("infonce: batch must be non-empty");
    for (const Tensor* t : {&z_anchor, &z_positive, &z_negative}) {
        for (int64_t i = 0; i < B; ++i) {
            const real* row = t->data() + i * D;
            const real norm = std::sqrt(kern::dot(row, row, static_cast<size_t>(D)));
            if (std::abs(norm - 1) > real(1e-6)) {
                throw data_error("infonce: features must be L2-normalized (tolerance 1e-6)");
            }
        }
    }

    InfoNceResult res;
    if (with_grad) {
        res.d_anchor = Tensor(z_anchor.shape);
        res.d_positive = Tensor(z_anchor.shape);
        res.d_negative = Tensor(z_anchor.shape);
    }
    const auto& bank_entries = bank.entries();
    const size_t K = bank_entries.size();
    std::vector<real> sims(K + 2);
    const real inv_b = real(1) / static_cast<real>(B);

    for (int64_t i = 0; i < B; ++i) {
        const real* za = z_anchor.data() + i * D;
        const real* zp = z_positive.data() + i * D;
        const real* zn = z_negative.data() + i * D;
        sims[0] = kern::dot(za, zp, static_cast<size_t>(D));
        sims[1] = kern::dot(za, zn, static_cast<size_t>(D));
        for (size_t j = 0; j < K; ++j) {
            sims[2 + j] = kern::dot(za, bank_entries[j].data(), static_cast<size_t>(D));
        }
        const real m = kern::max_value(sims.data(), sims.size(), nullptr);
        real z = 0;
        for (real s : sims) z += std::exp(s - m);
        res.loss += (m + std::log(z) - sims[0]) * inv_b;

        if (with_grad) {
            // Softmax weights over {positive, negative, bank}.
            const real qp = std::exp(sims[0] - m) / z;
            const real qn = std::exp(sims[1] - m) / z;
            real* da = res.d_anchor.data() + i * D;
            real* dp = res.d_positive.data() + i * D;
            real* dn = res.d_negative.data() + i * D;
            kern::axpy((qp - 1) * inv_b, zp, da, static_cast<size_t>(D));
            kern::axpy(qn * inv_b, zn, da, static_cast<size_t>(D));
            for (size_t j = 0; j < K; ++j) {
                const real qb = std::exp(sims[2 + j] - m) / z;
                kern::axpy(qb * inv_b, bank_entries[j].data(), da, static_cast<size_t>(D));
            }
            kern::axpy((qp - 1) * inv_b, za, dp, static_cast<size_t>(D));
            kern::axpy(qn * inv_b, za, dn, static_cast<size_t>(D));
        }
    }
    return res;
}

TrainLog adapt_encoder(Encoder& enc, const DatasetManifest& normals, const AdaptConfig& cfg) {
    if (normals.domain_tag != DomainTag::target_normal) {
        throw data_error("adapt: dataset must contain only normal target videos");
    }
    if (normals.entries.empty()) throw data_error("adapt: empty dataset");

    std::vector<VideoSample> videos;
    videos.reserve(normals.entries.size());
    for (const auto& e : normals.entries) videos.push_back(load_video(e, normals.domain_tag));

    // Only videos with at least two clip starts can produce a temporal
    // negative; the rest are skipped.
    std::vector<size_t> usable;
    for (size_t i = 0; i < videos.size(); ++i) {
        if (n_valid_clip_starts(videos[i].n_frames(), cfg.triplet.clip_len,
                                cfg.triplet.frame_rate) >= 2) {
            usable.push_back(i);
        }
    }
    if (usable.empty()) {
        throw data_error("adapt: no video satisfies the temporal-shift precondition "
                         "(effective dataset is empty)");
    }

    TrainLog log;
    MemoryBank bank(cfg.bank_capacity);
    Sgd opt({cfg.lr, cfg.momentum});
    const int64_t D = enc.cfg.feature_dim;

    // Warm-start the bank with features of clips drawn from the dataset (one
    // gradient-free pass) so the negative distribution, and with it the loss
    // scale, is stationary from the first batch.
    {
        Rng bank_rng(derive_seed(cfg.seed, 0xb0));
        for (size_t i = 0; i < cfg.bank_capacity; ++i) {
            const VideoSample& v = videos[usable[i % usable.size()]];
            const int64_t ns =
                n_valid_clip_starts(v.n_frames(), cfg.triplet.clip_len, cfg.triplet.frame_rate);
            const int64_t start = bank_rng.uniform_int(0, ns - 1);
            const Tensor clip =
                clip_from_frames(v.frames, start, cfg.triplet.clip_len, cfg.triplet.frame_rate);
            bank.push(encode_clip(enc, clip));
        }
    }

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(derive_seed(cfg.seed, 0xda, static_cast<uint64_t>(epoch)));
        std::vector<size_t> order = usable;
        rng.shuffle(order);

        real epoch_loss = 0;
        size_t batches = 0;
        for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(order.size(), begin + static_cast<size_t>(cfg.batch_size));
            const size_t bs = end - begin;
            std::vector<uint64_t> seeds(bs);
            for (size_t s = 0; s < bs; ++s) seeds[s] = rng.next_u64();

            struct SampleState {
                EncoderTape tape_a, tape_p, tape_n;
                Tensor feat_a, feat_p, feat_n;  // pre-normalization
            };
            std::vector<SampleState> st(bs);
            Tensor za({static_cast<int64_t>(bs), D});
            Tensor zp({static_cast<int64_t>(bs), D});
            Tensor zn({static_cast<int64_t>(bs), D});
            parallel_for(bs, cfg.jobs, [&](size_t s) {
                const Triplet trip = make_triplet(videos[order[begin + s]], cfg.triplet, seeds[s]);
                st[s].feat_a = encode_clip_fwd(enc, trip.anchor, st[s].tape_a);
                st[s].feat_p = encode_clip_fwd(enc, trip.positive, st[s].tape_p);
                st[s].feat_n = encode_clip_fwd(enc, trip.negative, st[s].tape_n);
                const Tensor na = l2_normalize(st[s].feat_a);
                const Tensor np = l2_normalize(st[s].feat_p);
                const Tensor nn = l2_normalize(st[s].feat_n);
                std::copy(na.v.begin(), na.v.end(), za.data() + s * D);
                std::copy(np.v.begin(), np.v.end(), zp.data() + s * D);
                std::copy(nn.v.begin(), nn.v.end(), zn.data() + s * D);
            });

            const InfoNceResult nce = infonce_loss(za, zp, zn, bank, /*with_grad=*/true);
            if (!std::isfinite(nce.loss)) {
                throw numeric_error("adapt: non-finite loss at epoch " + std::to_string(epoch));
            }
            epoch_loss += nce.loss;
            ++batches;

            std::vector<Encoder> sample_grads(bs, zeros_like(enc));
            parallel_for(bs, cfg.jobs, [&](size_t s) {
                auto grad_row = [&](const Tensor& batch_grad) {
                    Tensor g({D});
                    std::copy(batch_grad.data() + s * D, batch_grad.data() + (s + 1) * D,
                              g.data());
                    return g;
                };
                const Tensor df_a = l2_normalize_bwd(st[s].feat_a, grad_row(nce.d_anchor));
                const Tensor df_p = l2_normalize_bwd(st[s].feat_p, grad_row(nce.d_positive));
                const Tensor df_n = l2_normalize_bwd(st[s].feat_n, grad_row(nce.d_negative));
                encode_clip_bwd(enc, st[s].tape_a, df_a, sample_grads[s]);
                encode_clip_bwd(enc, st[s].tape_p, df_p, sample_grads[s]);
                encode_clip_bwd(enc, st[s].tape_n, df_n, sample_grads[s]);
            });

            Encoder grads = zeros_like(enc);
            for (size_t s = 0; s < bs; ++s) accumulate(grads, sample_grads[s]);
            for (int b = 0; b < cfg.freeze_blocks && b < static_cast<int>(grads.blocks.size());
                 ++b) {
                for (Tensor* t : {&grads.blocks[b].spatial_w, &grads.blocks[b].spatial_b,
                                  &grads.blocks[b].temporal_w, &grads.blocks[b].temporal_b}) {
                    t->fill(0);
                }
            }

            std::vector<Tensor*> params;
            std::vector<const Tensor*> gptrs;
            for (auto& [name, t] : enc.named_params()) params.push_back(t);
            for (auto& [name, t] : grads.named_params()) gptrs.push_back(t);
            opt.step(params, gptrs);

            // Detached anchors enter the bank after the step, oldest first.
            for (size_t s = 0; s < bs; ++s) {
                Tensor row({D});
                std::copy(za.data() + s * D, za.data() + (s + 1) * D, row.data());
                bank.push(row);
            }
        }
        log.epoch_loss.push_back(epoch_loss / static_cast<real>(batches));
    }
    return log;
}

}  // namespace xvad
