// Domain adaptation: warps, triplets, memory bank, InfoNCE, adaptation loop.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "grad_check.hpp"
#include "xvad/dam.hpp"
#include "xvad/errors.hpp"
#include "xvad/kernels.hpp"

namespace fs = std::filesystem;
using namespace xvad;

static_assert(sizeof(real) == 8, "the numeric test suite requires the float64 build");

namespace {

Tensor random_clip(int64_t L, int64_t H, int64_t W, uint64_t seed) {
    Tensor clip({L, H, W, 3});
    Rng rng(seed);
    for (real& v : clip.v) v = static_cast<real>(rng.uniform(0.0, 1.0));
    return clip;
}

VideoSample normal_video(int64_t T, uint64_t seed) {
    VideoConfig cfg;
    cfg.height = 16;
    cfg.width = 16;
    cfg.min_frames = static_cast<int>(T);
    cfg.max_frames = static_cast<int>(T);
    cfg.min_sprites = 1;
    cfg.max_sprites = 2;
    return make_normal_video(seed, cfg);
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("xvad_dam_" + std::to_string(mix64(reinterpret_cast<uintptr_t>(this))));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("identity warp reproduces the clip exactly") {
    const Tensor clip = random_clip(3, 9, 7, 1);
    const Tensor out = spatial_warp(clip, WarpSpec::identity());
    CHECK(out.v == clip.v);
}

TEST_CASE("warp strength zero draws the exact identity") {
    Rng rng(2);
    const WarpSpec w = WarpSpec::random(rng, 16, 16, 0);
    CHECK(w.m[0] == 1);
    CHECK(w.m[4] == 1);
    CHECK(w.m[1] == 0);
    CHECK(w.m[2] == 0);
    CHECK(w.m[6] == 0);
}

TEST_CASE("warp is linear in intensities") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const WarpSpec w = WarpSpec::random(rng, 11, 13, 1);
        const Tensor a = random_clip(2, 13, 11, 100 + trial);
        const Tensor b = random_clip(2, 13, 11, 200 + trial);
        Tensor diff(a.shape);
        for (size_t i = 0; i < a.v.size(); ++i) diff.v[i] = a.v[i] - b.v[i];

        const Tensor wa = spatial_warp(a, w);
        const Tensor wb = spatial_warp(b, w);
        const Tensor wd = spatial_warp(diff, w);
        real max_dev = 0;
        for (size_t i = 0; i < wa.v.size(); ++i) {
            max_dev = std::max(max_dev, std::abs(wa.v[i] - wb.v[i] - wd.v[i]));
        }
        CHECK(max_dev < 1e-6);
    }
}

TEST_CASE("90-degree rotation about the center moves a single bright pixel") {
    // 5x5 frame, bright pixel at (y=1, x=2). Output-to-source map rotates by
    // 90 degrees about (2,2): src = R(out - c) + c with R = [[0,-1],[1,0]],
    // so output (x,y) reads source (4-y, x). The source pixel (x=2, y=1)
    // therefore lands at output (x=1, y=2).
    Tensor clip({1, 5, 5, 3});
    for (int c = 0; c < 3; ++c) clip[idx4(0, 1, 2, c, 5, 5, 3)] = 1;
    WarpSpec w;
    w.m[0] = 0;
    w.m[1] = -1;
    w.m[2] = 4;
    w.m[3] = 1;
    w.m[4] = 0;
    w.m[5] = 0;
    const Tensor out = spatial_warp(clip, w);
    for (int y = 0; y < 5; ++y) {
        for (int x = 0; x < 5; ++x) {
            const real expected = (y == 2 && x == 1) ? real(1) : real(0);
            CHECK(out[idx4(0, y, x, 0, 5, 5, 3)] == expected);
        }
    }
}

TEST_CASE("degenerate warps are rejected") {
    Tensor clip = random_clip(1, 5, 5, 4);
    WarpSpec w;
    w.m[0] = 0.4;
    w.m[4] = 0.4;  // linear det 0.16 <= 0.25
    CHECK_THROWS_AS(spatial_warp(clip, w), data_error);
}

TEST_CASE("augment with zero magnitudes is the identity") {
    const Tensor clip = random_clip(4, 12, 12, 5);
    AugmentConfig aug;
    aug.max_rotation_deg = 0;
    aug.min_crop_scale = 1.0;
    aug.max_intensity_jitter = 0;
    Rng rng(6);
    const Tensor out = augment_clip(clip, aug, rng);
    CHECK(out.v == clip.v);
}

TEST_CASE("temporal shift draws every other start and errors when impossible") {
    SUBCASE("single-start video") {
        const VideoSample v = normal_video(8, 7);
        CHECK_THROWS_AS(temporal_shift(v, 0, 8, 1, 1), no_valid_shift_error);
    }
    SUBCASE("T=10 base 0: shifted starts are exactly {1,2}") {
        const VideoSample v = normal_video(10, 8);
        const Tensor c1 = clip_from_frames(v.frames, 1, 8, 1);
        const Tensor c2 = clip_from_frames(v.frames, 2, 8, 1);
        std::set<int> seen;
        for (uint64_t seed = 0; seed < 1000; ++seed) {
            const Tensor shifted = temporal_shift(v, 0, 8, 1, seed);
            CHECK(shifted.shape == std::vector<int64_t>{8, 16, 16, 3});
            if (shifted.v == c1.v) seen.insert(1);
            else if (shifted.v == c2.v) seen.insert(2);
            else FAIL("shifted clip matches no expected window");
        }
        CHECK(seen == std::set<int>{1, 2});
    }
}

TEST_CASE("triplets are deterministic, shaped, and reduce to raw crops") {
    const VideoSample v = normal_video(24, 9);
    TripletConfig cfg;

    const Triplet a = make_triplet(v, cfg, 42);
    const Triplet b = make_triplet(v, cfg, 42);
    CHECK(a.anchor.v == b.anchor.v);
    CHECK(a.positive.v == b.positive.v);
    CHECK(a.negative.v == b.negative.v);
    for (const Tensor* t : {&a.anchor, &a.positive, &a.negative}) {
        CHECK(t->shape == std::vector<int64_t>{8, 16, 16, 3});
    }

    TripletConfig degenerate;
    degenerate.aug = {0, 1.0, 0};
    degenerate.warp_strength = 0;
    const Triplet d = make_triplet(v, degenerate, 43);
    // With magnitudes zeroed, anchor and positive are raw temporal crops.
    bool anchor_is_crop = false, positive_is_crop = false;
    for (int64_t s = 0; s <= v.n_frames() - 8; ++s) {
        const Tensor crop = clip_from_frames(v.frames, s, 8, 1);
        if (d.anchor.v == crop.v) anchor_is_crop = true;
        if (d.positive.v == crop.v) positive_is_crop = true;
    }
    CHECK(anchor_is_crop);
    CHECK(positive_is_crop);

    VideoSample tiny = normal_video(8, 10);
    CHECK_THROWS_AS(make_triplet(tiny, cfg, 1), no_valid_shift_error);
}

TEST_CASE("memory bank keeps the last capacity entries in insertion order") {
    MemoryBank bank(5);
    std::vector<Tensor> pushed;
    for (int i = 0; i < 12; ++i) {
        Tensor f({4});
        f.v = {real(i + 1), real(0.5), 0, 0};
        pushed.push_back(l2_normalize(f));
        bank.push(f);
        CHECK(bank.size() == std::min<size_t>(5, static_cast<size_t>(i + 1)));
    }
    REQUIRE(bank.size() == 5);
    size_t j = 7;  // oldest surviving insertion
    for (const Tensor& e : bank.entries()) {
        CHECK(e.v == pushed[j].v);
        const real n = std::sqrt(kern::dot(e.data(), e.data(), e.v.size()));
        CHECK(n == doctest::Approx(1.0));
        ++j;
    }
}

namespace {

Tensor unit_row(std::vector<real> v) {
    Tensor t({static_cast<int64_t>(v.size())});
    t.v = std::move(v);
    return l2_normalize(t);
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
    const int64_t d = rows[0].shape[0];
    Tensor out({static_cast<int64_t>(rows.size()), d});
    for (size_t i = 0; i < rows.size(); ++i) {
        std::copy(rows[i].v.begin(), rows[i].v.end(), out.data() + i * d);
    }
    return out;
}

}  // namespace

TEST_CASE("infonce closed-form values") {
    SUBCASE("symmetric positive/negative gives log 2 regardless of the dot") {
        for (real s : {real(0), real(0.3), real(-0.5)}) {
            const Tensor za = stack_rows({unit_row({1, 0, 0})});
            const Tensor zshared = stack_rows({unit_row({s, std::sqrt(1 - s * s), 0})});
            MemoryBank bank(4);
            const InfoNceResult r = infonce_loss(za, zshared, zshared, bank, false);
            CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
        }
    }
    SUBCASE("positive aligned, negative and one bank entry orthogonal") {
        const Tensor za = stack_rows({unit_row({1, 0, 0})});
        const Tensor zp = za;
        const Tensor zn = stack_rows({unit_row({0, 1, 0})});
        MemoryBank bank(4);
        Tensor b({3});
        b.v = {0, 0, 1};
        bank.push(b);
        const InfoNceResult r = infonce_loss(za, zp, zn, bank, false);
        const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
        CHECK(r.loss == doctest::Approx(expected).epsilon(1e-12));
        CHECK(r.loss == doctest::Approx(0.5514).epsilon(1e-3));
    }
    SUBCASE("uniform similarities give exactly log(K+2)") {
        const size_t K = 7;
        const Tensor za = stack_rows({unit_row({1, 0, 0})});
        const Tensor w = stack_rows({unit_row({0, 1, 0})});
        MemoryBank bank(K);
        for (size_t i = 0; i < K; ++i) {
            Tensor b({3});
            b.v = {0, 0, 1};
            bank.push(b);
        }
        const InfoNceResult r = infonce_loss(za, w, w, bank, false);
        CHECK(std::abs(r.loss - std::log(static_cast<double>(K + 2))) < 1e-10);
    }
}

TEST_CASE("infonce positivity and bounded range on random unit features") {
    Rng rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        const int64_t B = 3, D = 8;
        auto random_rows = [&]() {
            std::vector<Tensor> rows;
            for (int64_t i = 0; i < B; ++i) {
                Tensor t({D});
                for (real& v : t.v) v = static_cast<real>(rng.normal());
                rows.push_back(l2_normalize(t));
            }
            return stack_rows(rows);
        };
        MemoryBank bank(6);
        const size_t K = static_cast<size_t>(rng.uniform_int(0, 6));
        for (size_t i = 0; i < K; ++i) {
            Tensor b({D});
            for (real& v : b.v) v = static_cast<real>(rng.normal());
            bank.push(b);
        }
        const InfoNceResult r =
            infonce_loss(random_rows(), random_rows(), random_rows(), bank, false);
        CHECK(r.loss > 0);
        CHECK(r.loss < std::log(static_cast<double>(bank.size() + 2)) + 2);
    }
}

TEST_CASE("infonce rejects non-normalized inputs") {
    Tensor za({1, 3}), zp({1, 3}), zn({1, 3});
    za.v = {1, 0, 0};
    zp.v = {0.5, 0, 0};  // norm 0.5
    zn.v = {0, 1, 0};
    MemoryBank bank(2);
    CHECK_THROWS_AS(infonce_loss(za, zp, zn, bank, false), data_error);
}

TEST_CASE("infonce gradients (through normalization) match finite differences") {
    Rng rng(12);
    const int64_t B = 2, D = 5;
    Tensor raw_a({B, D}), raw_p({B, D}), raw_n({B, D});
    for (Tensor* t : {&raw_a, &raw_p, &raw_n}) {
        for (real& v : t->v) v = static_cast<real>(rng.normal());
    }
    MemoryBank bank(3);
    for (int i = 0; i < 3; ++i) {
        Tensor b({D});
        for (real& v : b.v) v = static_cast<real>(rng.normal());
        bank.push(b);
    }

    auto normalize_rows = [&](const Tensor& raw) {
        Tensor out(raw.shape);
        for (int64_t i = 0; i < B; ++i) {
            Tensor row({D});
            std::copy(raw.data() + i * D, raw.data() + (i + 1) * D, row.data());
            const Tensor nrm = l2_normalize(row);
            std::copy(nrm.v.begin(), nrm.v.end(), out.data() + i * D);
        }
        return out;
    };
    auto loss = [&]() {
        return static_cast<double>(infonce_loss(normalize_rows(raw_a), normalize_rows(raw_p),
                                                normalize_rows(raw_n), bank, false)
                                       .loss);
    };

    const InfoNceResult r = infonce_loss(normalize_rows(raw_a), normalize_rows(raw_p),
                                         normalize_rows(raw_n), bank, true);
    auto back_rows = [&](const Tensor& raw, const Tensor& dnorm) {
        Tensor out(raw.shape);
        for (int64_t i = 0; i < B; ++i) {
            Tensor row({D}), drow({D});
            std::copy(raw.data() + i * D, raw.data() + (i + 1) * D, row.data());
            std::copy(dnorm.data() + i * D, dnorm.data() + (i + 1) * D, drow.data());
            const Tensor d = l2_normalize_bwd(row, drow);
            std::copy(d.v.begin(), d.v.end(), out.data() + i * D);
        }
        return out;
    };
    const Tensor da = back_rows(raw_a, r.d_anchor);
    const Tensor dp = back_rows(raw_p, r.d_positive);
    const Tensor dn = back_rows(raw_n, r.d_negative);

    const double worst = testing::check_gradients(
        loss, {{&raw_a, &da}, {&raw_p, &dp}, {&raw_n, &dn}}, rng, 10, 1e-5);
    MESSAGE("worst relative error: ", worst);
    CHECK(worst < 1e-4);
}

TEST_CASE("adaptation contracts: domain check, zero epochs, learning, determinism") {
    TempDir tmp;
    VideoConfig vc;
    vc.height = 16;
    vc.width = 16;
    vc.min_frames = 16;
    vc.max_frames = 28;
    vc.min_sprites = 1;
    vc.max_sprites = 2;
    const TargetDataset ds = gen_target_dataset(31, {"stop"}, 20, 4, vc, tmp.path);

    EncoderConfig ec;
    ec.clip_len = 8;
    ec.height = 16;
    ec.width = 16;
    ec.widths = {6, 12};
    ec.feature_dim = 32;

    AdaptConfig ac;
    ac.epochs = 0;
    ac.batch_size = 8;
    ac.bank_capacity = 32;
    ac.seed = 32;

    SUBCASE("abnormal manifests are refused") {
        Encoder enc = Encoder::init(ec, 33);
        CHECK_THROWS_AS(adapt_encoder(enc, ds.abnormal, ac), data_error);
    }

    SUBCASE("zero epochs leaves parameters untouched") {
        Encoder enc = Encoder::init(ec, 33);
        const Encoder before = enc;
        adapt_encoder(enc, ds.normal, ac);
        CHECK(enc.same_values(before));
    }

    SUBCASE("videos shorter than the shift precondition leave no usable data") {
        TempDir tmp2;
        VideoConfig short_vc = vc;
        short_vc.min_frames = 8;
        short_vc.max_frames = 8;  // exactly one clip start
        const TargetDataset short_ds = gen_target_dataset(34, {"stop"}, 4, 2, short_vc, tmp2.path);
        Encoder enc = Encoder::init(ec, 33);
        ac.epochs = 1;
        CHECK_THROWS_AS(adapt_encoder(enc, short_ds.normal, ac), data_error);
    }

    SUBCASE("loss decreases and the run is deterministic across job counts") {
        // Adaptation starts from a pretrained encoder, as in the pipeline;
        // from a random initialization the features collapse to one
        // direction and the contrastive objective is already stationary.
        TempDir src_tmp;
        VideoConfig sv = vc;
        sv.min_frames = 12;
        sv.max_frames = 20;
        sv.speed_min = 1.2;
        sv.speed_max = 2.2;
        const DatasetManifest source = gen_source_dataset(21, 4, 5, sv, src_tmp.path);
        Encoder enc1 = Encoder::init(ec, 33);
        ClassifierHead head = ClassifierHead::init(HeadKind::fc, ec.feature_dim, 4, 34);
        PretrainConfig pc;
        pc.epochs = 50;
        pc.batch_size = 8;
        pc.lr = 0.01;
        pc.seed = 24;
        pc.jobs = 2;
        pretrain_source(enc1, head, source, pc);
        const Encoder pretrained = enc1;

        ac.epochs = 20;
        const TrainLog log1 = adapt_encoder(enc1, ds.normal, ac);
        MESSAGE("adapt loss: ", log1.epoch_loss.front(), " -> ", log1.epoch_loss.back());
        CHECK(log1.epoch_loss.back() < log1.epoch_loss.front());

        AdaptConfig ac2 = ac;
        ac2.jobs = 2;
        Encoder enc2 = pretrained;
        adapt_encoder(enc2, ds.normal, ac2);
        CHECK(enc1.same_values(enc2));
    }
}
