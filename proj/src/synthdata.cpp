#include "xvad/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "xvad/errors.hpp"

namespace fs = std::filesystem;

namespace xvad {

namespace {

constexpr double kTau = 6.283185307179586476925286766559;

struct Sprite {
    double x, y;      // center, pixels
    double vx, vy;    // pixels per frame
    double drift;     // heading rotation per frame, radians
    double wobble_phase;
    double radius;
    double amp[3];    // per-channel intensity amplitude, fraction of scale
};

struct MotionScript {
    // Event window [begin, end) during which the disruption is active;
    // empty (begin == end == 0) for smooth motion.
    int64_t event_begin = 0;
    int64_t event_end = 0;
    std::string type;  // "", "stop", "reverse", "cross", "jitter"
};

double wrap_coord(double v, double extent) {
    v = std::fmod(v, extent);
    return v < 0 ? v + extent : v;
}

std::vector<Sprite> init_sprites(Rng& rng, const VideoConfig& cfg, double heading_lo,
                                 double heading_hi) {
    const int count = static_cast<int>(rng.uniform_int(cfg.min_sprites, cfg.max_sprites));
    std::vector<Sprite> sprites(static_cast<size_t>(count));
    for (auto& s : sprites) {
        s.x = rng.uniform(0.0, cfg.width);
        s.y = rng.uniform(0.0, cfg.height);
        const double heading = rng.uniform(heading_lo, heading_hi);
        const double speed = rng.uniform(cfg.speed_min, cfg.speed_max);
        s.vx = speed * std::cos(heading);
        s.vy = speed * std::sin(heading);
        s.drift = rng.uniform(-cfg.heading_drift_max, cfg.heading_drift_max);
        s.wobble_phase = rng.uniform(0.0, kTau);
        s.radius = rng.uniform(cfg.sprite_min_radius, cfg.sprite_max_radius);
        for (double& a : s.amp) a = rng.uniform(0.35, 0.7);
    }
    return sprites;
}

void render_frame(const std::vector<Sprite>& sprites, const VideoConfig& cfg, Rng& noise_rng,
                  uint8_t* out) {
    const int H = cfg.height, W = cfg.width, C = cfg.channels;
    std::vector<double> acc(static_cast<size_t>(H) * W * C, cfg.background);
    for (const Sprite& s : sprites) {
        const double inv2s2 = 1.0 / (2.0 * (s.radius * 0.55) * (s.radius * 0.55));
        const int reach = static_cast<int>(std::ceil(s.radius * 2.0));
        const int cx = static_cast<int>(std::floor(s.x));
        const int cy = static_cast<int>(std::floor(s.y));
        for (int dy = -reach; dy <= reach; ++dy) {
            for (int dx = -reach; dx <= reach; ++dx) {
                // Toroidal geometry: sprites wrap across frame borders.
                const int px = ((cx + dx) % W + W) % W;
                const int py = ((cy + dy) % H + H) % H;
                const double fx = static_cast<double>(cx + dx) - s.x;
                const double fy = static_cast<double>(cy + dy) - s.y;
                const double g = std::exp(-(fx * fx + fy * fy) * inv2s2);
                double* px_acc = &acc[(static_cast<size_t>(py) * W + px) * C];
                for (int c = 0; c < C && c < 3; ++c) px_acc[c] += s.amp[c] * g;
            }
        }
    }
    for (size_t i = 0; i < acc.size(); ++i) {
        double v = acc[i] + cfg.noise_std * noise_rng.normal();
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        out[i] = static_cast<uint8_t>(std::lround(v * 255.0));
    }
}

TensorU8 render_video(Rng& rng, const VideoConfig& cfg, int64_t n_frames,
                      std::vector<Sprite> sprites, const MotionScript& script) {
    TensorU8 frames({n_frames, cfg.height, cfg.width, cfg.channels});
    const size_t frame_sz = static_cast<size_t>(cfg.height) * cfg.width * cfg.channels;

    std::vector<Sprite> saved;  // velocities to restore after the event window
    for (int64_t t = 0; t < n_frames; ++t) {
        const bool in_event = t >= script.event_begin && t < script.event_end;
        if (!script.type.empty()) {
            if (t == script.event_begin) {
                saved = sprites;
                if (script.type == "stop") {
                    for (auto& s : sprites) s.vx = s.vy = 0.0;
                } else if (script.type == "reverse") {
                    for (auto& s : sprites) {
                        s.vx = -s.vx;
                        s.vy = -s.vy;
                    }
                } else if (script.type == "cross" && sprites.size() >= 2) {
                    // Steer the first two sprites to meet mid-window.
                    const int64_t frames_to_meet =
                        std::max<int64_t>(1, (script.event_end - script.event_begin) / 2);
                    const double mx = 0.5 * (sprites[0].x + sprites[1].x);
                    const double my = 0.5 * (sprites[0].y + sprites[1].y);
                    for (int k = 0; k < 2; ++k) {
                        sprites[k].vx = (mx - sprites[k].x) / static_cast<double>(frames_to_meet);
                        sprites[k].vy = (my - sprites[k].y) / static_cast<double>(frames_to_meet);
                    }
                }
            }
            if (in_event && script.type == "jitter") {
                for (auto& s : sprites) {
                    const double speed = std::hypot(saved[&s - sprites.data()].vx,
                                                    saved[&s - sprites.data()].vy);
                    const double heading = rng.uniform(0.0, kTau);
                    s.vx = speed * std::cos(heading);
                    s.vy = speed * std::sin(heading);
                }
            }
            if (t == script.event_end && !saved.empty()) {
                // Restore normal dynamics, keeping current positions.
                for (size_t k = 0; k < sprites.size(); ++k) {
                    sprites[k].vx = saved[k].vx;
                    sprites[k].vy = saved[k].vy;
                }
            }
        }

        render_frame(sprites, cfg, rng, frames.data() + static_cast<size_t>(t) * frame_sz);

        for (auto& s : sprites) {
            double f = 1.0;
            if (cfg.speed_wobble_depth > 0.0) {
                f = 1.0 + cfg.speed_wobble_depth *
                              std::sin(kTau * static_cast<double>(t) / cfg.speed_wobble_period +
                                       s.wobble_phase);
            }
            s.x = wrap_coord(s.x + s.vx * f, cfg.width);
            s.y = wrap_coord(s.y + s.vy * f, cfg.height);
            if (s.drift != 0.0) {
                const double ca = std::cos(s.drift), sa = std::sin(s.drift);
                const double vx = s.vx * ca - s.vy * sa;
                s.vy = s.vx * sa + s.vy * ca;
                s.vx = vx;
            }
        }
    }
    return frames;
}

MotionScript make_event_script(Rng& rng, const std::string& type, int64_t n_frames,
                               const VideoConfig& cfg) {
    MotionScript script;
    script.type = type;
    const double frac = rng.uniform(cfg.event_min_frac, cfg.event_max_frac);
    int64_t len = std::max<int64_t>(4, static_cast<int64_t>(std::lround(frac * n_frames)));
    len = std::min(len, n_frames);
    script.event_begin = rng.uniform_int(0, n_frames - len);
    script.event_end = script.event_begin + len;
    return script;
}

std::string video_filename(const char* prefix, int index) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%04d.actf", prefix, index);
    return buf;
}

}  // namespace

void VideoConfig::validate() const {
    if (height < 8 || width < 8) throw config_error("video dimensions must be >= 8");
    if (channels != 3) throw config_error("channels must be 3");
    if (min_frames > max_frames || min_sprites > max_sprites) {
        throw config_error("range minimum exceeds maximum in video config");
    }
    if (noise_std < 0.0 || noise_std > 1.0) throw config_error("noise_std must be in [0,1]");
    if (heading_drift_max < 0.0) throw config_error("heading_drift_max must be >= 0");
    if (speed_wobble_depth < 0.0 || speed_wobble_depth >= 1.0 || speed_wobble_period <= 0.0) {
        throw config_error("speed wobble parameters out of range");
    }
    if (speed_min > speed_max || sprite_min_radius > sprite_max_radius) {
        throw config_error("range minimum exceeds maximum in video config");
    }
    if (event_min_frac > event_max_frac || event_min_frac < 0.0 || event_max_frac > 1.0) {
        throw config_error("event fraction range invalid");
    }
}

const std::vector<std::string>& known_anomaly_types() {
    static const std::vector<std::string> types = {"stop", "reverse", "cross", "jitter"};
    return types;
}

VideoSample make_source_video(uint64_t seed, int cls, int n_classes, const VideoConfig& cfg) {
    Rng rng(seed);
    const int64_t n_frames = rng.uniform_int(cfg.min_frames, cfg.max_frames);

    // Motion vocabulary: the last two classes are a near-static family and an
    // incoherent (per-frame heading) family; the rest are heading cones
    // spread over the circle. Mirrors a generic action corpus where both
    // still and erratic motion occur.
    const int n_heading = std::max(1, n_classes - 2);
    std::vector<Sprite> sprites;
    MotionScript script;
    if (cls == n_classes - 2 && n_classes >= 3) {
        VideoConfig slow = cfg;
        slow.speed_min = 0.0;
        slow.speed_max = 0.12 * cfg.speed_max;
        sprites = init_sprites(rng, slow, 0.0, kTau);
    } else if (cls == n_classes - 1 && n_classes >= 3) {
        sprites = init_sprites(rng, cfg, 0.0, kTau);
        script.type = "jitter";
        script.event_begin = 0;
        script.event_end = n_frames;
    } else {
        const double center = kTau * cls / n_heading;
        sprites = init_sprites(rng, cfg, center - 0.25, center + 0.25);
    }
    VideoSample v;
    if (script.type.empty()) {
        v.frames = render_video(rng, cfg, n_frames, std::move(sprites), MotionScript{});
    } else {
        v.frames = render_video(rng, cfg, n_frames, std::move(sprites), script);
    }
    v.label = cls;
    v.domain_tag = DomainTag::source;
    return v;
}

VideoSample make_normal_video(uint64_t seed, const VideoConfig& cfg) {
    Rng rng(seed);
    const int64_t n_frames = rng.uniform_int(cfg.min_frames, cfg.max_frames);
    auto sprites = init_sprites(rng, cfg, 0.0, kTau);
    VideoSample v;
    v.frames = render_video(rng, cfg, n_frames, std::move(sprites), MotionScript{});
    v.label = 0;
    v.domain_tag = DomainTag::target_normal;
    return v;
}

VideoSample make_abnormal_video(uint64_t seed, const std::string& anomaly_type,
                                const VideoConfig& cfg) {
    const auto& known = known_anomaly_types();
    if (std::find(known.begin(), known.end(), anomaly_type) == known.end()) {
        throw config_error("unknown anomaly type: " + anomaly_type);
    }
    Rng rng(seed);
    const int64_t n_frames = rng.uniform_int(cfg.min_frames, cfg.max_frames);
    auto sprites = init_sprites(rng, cfg, 0.0, kTau);
    const MotionScript script = make_event_script(rng, anomaly_type, n_frames, cfg);
    VideoSample v;
    v.frames = render_video(rng, cfg, n_frames, std::move(sprites), script);
    v.label = 1;
    v.anomaly_type = anomaly_type;
    v.domain_tag = DomainTag::target_abnormal;
    return v;
}

DatasetManifest gen_source_dataset(uint64_t seed, int n_classes, int n_per_class,
                                   const VideoConfig& cfg, const fs::path& out_dir) {
    if (n_classes < 2) throw config_error("source dataset needs at least 2 classes");
    if (n_per_class < 1) throw config_error("n_per_class must be >= 1");
    cfg.validate();
    fs::create_directories(out_dir / "videos");

    DatasetManifest m;
    m.domain_tag = DomainTag::source;
    m.seed = seed;
    m.generator_config = {{"n_classes", n_classes},
                          {"n_per_class", n_per_class},
                          {"height", cfg.height},
                          {"width", cfg.width},
                          {"min_frames", cfg.min_frames},
                          {"max_frames", cfg.max_frames}};
    int index = 0;
    for (int cls = 0; cls < n_classes; ++cls) {
        for (int i = 0; i < n_per_class; ++i, ++index) {
            const VideoSample v =
                make_source_video(derive_seed(seed, static_cast<uint64_t>(index)), cls, n_classes, cfg);
            ManifestEntry e;
            e.video_path = "videos/" + video_filename("source", index);
            write_tensor_u8(out_dir / e.video_path, v.frames);
            e.label = cls;
            e.n_frames = v.n_frames();
            m.entries.push_back(std::move(e));
        }
    }
    save_manifest(out_dir / "source_manifest.json", m);
    return load_manifest(out_dir / "source_manifest.json");
}

TargetDataset gen_target_dataset(uint64_t seed, const std::vector<std::string>& anomaly_types,
                                 int n_normal, int n_per_type, const VideoConfig& cfg,
                                 const fs::path& out_dir) {
    if (anomaly_types.empty()) throw config_error("need at least one anomaly type");
    if (n_normal < n_per_type) throw config_error("n_normal must be >= n_per_type");
    cfg.validate();
    fs::create_directories(out_dir / "videos");

    DatasetManifest normal;
    normal.domain_tag = DomainTag::target_normal;
    normal.seed = seed;
    normal.generator_config = {{"n_normal", n_normal},
                               {"anomaly_types", anomaly_types},
                               {"n_per_type", n_per_type},
                               {"height", cfg.height},
                               {"width", cfg.width},
                               {"min_frames", cfg.min_frames},
                               {"max_frames", cfg.max_frames}};
    DatasetManifest abnormal = normal;
    abnormal.domain_tag = DomainTag::target_abnormal;

    int index = 0;
    for (int i = 0; i < n_normal; ++i, ++index) {
        const VideoSample v = make_normal_video(derive_seed(seed, static_cast<uint64_t>(index)), cfg);
        ManifestEntry e;
        e.video_path = "videos/" + video_filename("normal", i);
        write_tensor_u8(out_dir / e.video_path, v.frames);
        e.label = 0;
        e.n_frames = v.n_frames();
        normal.entries.push_back(std::move(e));
    }
    int abn_index = 0;
    for (const std::string& type : anomaly_types) {
        for (int i = 0; i < n_per_type; ++i, ++index, ++abn_index) {
            const VideoSample v =
                make_abnormal_video(derive_seed(seed, static_cast<uint64_t>(index)), type, cfg);
            ManifestEntry e;
            e.video_path = "videos/" + video_filename("abnormal", abn_index);
            write_tensor_u8(out_dir / e.video_path, v.frames);
            e.label = 1;
            e.anomaly_type = type;
            e.n_frames = v.n_frames();
            abnormal.entries.push_back(std::move(e));
        }
    }
    save_manifest(out_dir / "target_normal_manifest.json", normal);
    save_manifest(out_dir / "target_abnormal_manifest.json", abnormal);
    return {load_manifest(out_dir / "target_normal_manifest.json"),
            load_manifest(out_dir / "target_abnormal_manifest.json")};
}

VideoSample load_video(const ManifestEntry& entry, DomainTag tag) {
    VideoSample v;
    v.frames = read_tensor_u8(entry.resolved_path.empty() ? entry.video_path
                                                          : entry.resolved_path);
    if (v.frames.shape.size() != 4) {
        throw data_error("video tensor must be 4-D [T,H,W,C]: " + entry.video_path);
    }
    v.label = entry.label;
    v.anomaly_type = entry.anomaly_type;
    v.domain_tag = tag;
    return v;
}

int64_t n_valid_clip_starts(int64_t n_frames, int clip_len, int frame_rate) {
    const int64_t span = static_cast<int64_t>(clip_len) * frame_rate;
    return n_frames >= span ? n_frames - span + 1 : 0;
}

int64_t middlemost_clip_start(int64_t n_frames, int clip_len, int frame_rate) {
    const int64_t span = static_cast<int64_t>(clip_len) * frame_rate;
    if (n_frames < span) throw data_error("video too short for one clip");
    return (n_frames - span) / 2;
}

Tensor clip_from_frames(const TensorU8& frames, int64_t start, int clip_len, int frame_rate) {
    const int64_t T = frames.shape[0];
    const int64_t H = frames.shape[1], W = frames.shape[2], C = frames.shape[3];
    const int64_t span = static_cast<int64_t>(clip_len) * frame_rate;
    if (start < 0 || start + span > T) throw data_error("clip window out of range");
    Tensor clip({clip_len, H, W, C});
    const size_t frame_sz = static_cast<size_t>(H * W * C);
    for (int i = 0; i < clip_len; ++i) {
        const uint8_t* src = frames.data() + static_cast<size_t>(start + i * frame_rate) * frame_sz;
        real* dst = clip.data() + static_cast<size_t>(i) * frame_sz;
        for (size_t p = 0; p < frame_sz; ++p) dst[p] = static_cast<real>(src[p]) / real(255);
    }
    return clip;
}

Tensor sample_clip(const VideoSample& video, ClipPolicy policy, int clip_len, int frame_rate,
                   uint64_t seed) {
    const int64_t T = video.n_frames();
    const int64_t n_starts = n_valid_clip_starts(T, clip_len, frame_rate);
    if (n_starts <= 0) throw data_error("video too short for one clip");
    int64_t start;
    if (policy == ClipPolicy::middlemost) {
        start = middlemost_clip_start(T, clip_len, frame_rate);
    } else {
        Rng rng(seed);
        start = rng.uniform_int(0, n_starts - 1);
    }
    return clip_from_frames(video.frames, start, clip_len, frame_rate);
}

std::vector<Tensor> sample_clip_sequence(const TensorU8& frames, int clip_len, int stride,
                                         int min_len, int max_len) {
    if (min_len < clip_len) throw config_error("min_len must be >= clip_len");
    if (stride < 1) throw config_error("stride must be >= 1");
    const int64_t T = frames.shape[0];
    const int64_t H = frames.shape[1], W = frames.shape[2], C = frames.shape[3];
    const size_t frame_sz = static_cast<size_t>(H * W * C);

    // Wrap-extend short videos from the beginning until min_len frames exist.
    const TensorU8* src = &frames;
    TensorU8 wrapped;
    if (T < min_len) {
        wrapped = TensorU8({static_cast<int64_t>(min_len), H, W, C});
        for (int64_t t = 0; t < min_len; ++t) {
            std::memcpy(wrapped.data() + static_cast<size_t>(t) * frame_sz,
                        frames.data() + static_cast<size_t>(t % T) * frame_sz, frame_sz);
        }
        src = &wrapped;
    }
    const int64_t effective = std::min<int64_t>(src->shape[0], max_len);

    std::vector<Tensor> clips;
    for (int64_t start = 0; start + clip_len <= effective; start += stride) {
        clips.push_back(clip_from_frames(*src, start, clip_len, 1));
    }
    return clips;
}

double mean_frame_difference(const TensorU8& frames) {
    const int64_t T = frames.shape[0];
    if (T < 2) return 0.0;
    const size_t frame_sz = frames.v.size() / static_cast<size_t>(T);
    double total = 0.0;
    for (int64_t t = 0; t + 1 < T; ++t) {
        const uint8_t* a = frames.data() + static_cast<size_t>(t) * frame_sz;
        const uint8_t* b = a + frame_sz;
        int64_t acc = 0;
        for (size_t p = 0; p < frame_sz; ++p) {
            acc += std::abs(static_cast<int>(a[p]) - static_cast<int>(b[p]));
        }
        total += static_cast<double>(acc) / static_cast<double>(frame_sz);
    }
    return total / static_cast<double>(T - 1);
}

}  // namespace xvad
