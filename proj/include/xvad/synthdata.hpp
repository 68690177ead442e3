// synthdata.hpp - Synthetic video corpora and clip sampling.
//
// Source domain: multi-class moving-sprite videos where the class determines
// the motion family (heading and speed band). Target domain: normal videos
// with smooth constant-velocity motion, plus anomalous videos where a random
// time window disrupts the dynamics (stop / reverse / cross / jitter) while
// the visual style stays identical to normal.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "xvad/rng.hpp"
#include "xvad/tensor.hpp"
#include "xvad/tensorio.hpp"

namespace xvad {

struct VideoConfig {
    int height = 32;
    int width = 32;
    int channels = 3;
    int min_frames = 24;
    int max_frames = 128;
    int min_sprites = 2;
    int max_sprites = 4;
    double noise_std = 0.02;  // fraction of full intensity scale

    // Visual/dynamic style; differs between source and target configs to
    // create a real domain gap.
    double sprite_min_radius = 2.0;
    double sprite_max_radius = 3.0;
    double speed_min = 0.8;
    double speed_max = 1.8;
    double background = 0.3;  // base gray level, fraction of full scale
    // Per-sprite constant heading drift (radians/frame). Nonzero drift makes
    // motion state time-varying, so temporally shifted clips genuinely
    // differ in motion.
    double heading_drift_max = 0.0;
    // Sinusoidal per-sprite speed modulation: speed(t) = s0 * (1 + depth *
    // sin(2*pi*t/period + phase)). Same purpose as drift, on the energy axis.
    double speed_wobble_depth = 0.0;
    double speed_wobble_period = 18.0;

    // Anomalous-window coverage as a fraction of the video length.
    double event_min_frac = 0.3;
    double event_max_frac = 0.5;

    void validate() const;
};

struct VideoSample {
    TensorU8 frames;  // [T,H,W,C]
    int64_t label = 0;
    std::string anomaly_type;  // empty for source / normal
    DomainTag domain_tag = DomainTag::source;

    int64_t n_frames() const { return frames.shape.empty() ? 0 : frames.shape[0]; }
};

enum class ClipPolicy { random, middlemost };

// Supported anomaly types.
//   stop:    sprites freeze during the event window
//   reverse: velocities are negated during the event window
//   cross:   two sprites are steered to collide mid-window
//   jitter:  headings are re-randomized every frame inside the window
const std::vector<std::string>& known_anomaly_types();

// ---------------------------------------------------------------------------
// Video construction (pure in (seed, config))
// ---------------------------------------------------------------------------
VideoSample make_source_video(uint64_t seed, int cls, int n_classes, const VideoConfig& cfg);
VideoSample make_normal_video(uint64_t seed, const VideoConfig& cfg);
VideoSample make_abnormal_video(uint64_t seed, const std::string& anomaly_type,
                                const VideoConfig& cfg);

// ---------------------------------------------------------------------------
// Corpus generation. Videos land in out_dir/videos/, manifests in out_dir.
// ---------------------------------------------------------------------------
DatasetManifest gen_source_dataset(uint64_t seed, int n_classes, int n_per_class,
                                   const VideoConfig& cfg, const std::filesystem::path& out_dir);

struct TargetDataset {
    DatasetManifest normal;    // domain_tag target_normal, labels 0
    DatasetManifest abnormal;  // domain_tag target_abnormal, labels 1
};

TargetDataset gen_target_dataset(uint64_t seed, const std::vector<std::string>& anomaly_types,
                                 int n_normal, int n_per_type, const VideoConfig& cfg,
                                 const std::filesystem::path& out_dir);

VideoSample load_video(const ManifestEntry& entry, DomainTag tag);

// ---------------------------------------------------------------------------
// Clip sampling. Clips are float tensors [clip_len,H,W,C] scaled to [0,1].
// ---------------------------------------------------------------------------

// Valid starts satisfy start + clip_len*frame_rate <= T.
int64_t n_valid_clip_starts(int64_t n_frames, int clip_len, int frame_rate);
int64_t middlemost_clip_start(int64_t n_frames, int clip_len, int frame_rate);

Tensor clip_from_frames(const TensorU8& frames, int64_t start, int clip_len, int frame_rate);

Tensor sample_clip(const VideoSample& video, ClipPolicy policy, int clip_len, int frame_rate,
                   uint64_t seed);

// Fixed-stride clip cover of the first min(T, max_len) frames. Videos shorter
// than min_len are extended by wrapping back to frame 0 until min_len frames
// are available.
std::vector<Tensor> sample_clip_sequence(const TensorU8& frames, int clip_len, int stride,
                                         int min_len, int max_len);

// Mean per-pixel absolute intensity difference between consecutive frames;
// the simple motion-energy statistic used by sanity baselines.
double mean_frame_difference(const TensorU8& frames);

}  // namespace xvad
