// Encoder, heads, SGD, checkpoints, pretraining. The gradient assertions use
// the central finite-difference oracle in grad_check.hpp.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "grad_check.hpp"
#include "xvad/encoder.hpp"
#include "xvad/errors.hpp"
#include "xvad/kernels.hpp"
#include "xvad/synthdata.hpp"

namespace fs = std::filesystem;
using namespace xvad;

static_assert(sizeof(real) == 8, "the numeric test suite requires the float64 build");

namespace {

EncoderConfig tiny_config() {
    EncoderConfig cfg;
    cfg.clip_len = 4;
    cfg.height = 12;
    cfg.width = 12;
    cfg.channels = 3;
    cfg.widths = {4, 6};
    cfg.feature_dim = 8;
    return cfg;
}

Tensor random_clip(const EncoderConfig& cfg, uint64_t seed) {
    Tensor clip({cfg.clip_len, cfg.height, cfg.width, cfg.channels});
    Rng rng(seed);
    for (real& v : clip.v) v = static_cast<real>(rng.uniform(0.0, 1.0));
    return clip;
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("xvad_enc_" + std::to_string(mix64(reinterpret_cast<uintptr_t>(this))));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("all-zero clip through zero parameters gives a zero feature") {
    const EncoderConfig cfg = tiny_config();
    const Encoder enc = Encoder::zeros(cfg);
    Tensor clip({cfg.clip_len, cfg.height, cfg.width, cfg.channels});
    const Tensor feat = encode_clip(enc, clip);
    for (real v : feat.v) CHECK(v == 0);
}

TEST_CASE("encoding is deterministic and shape-checked") {
    const EncoderConfig cfg = tiny_config();
    const Encoder enc = Encoder::init(cfg, 3);
    const Tensor clip = random_clip(cfg, 4);
    const Tensor a = encode_clip(enc, clip);
    const Tensor b = encode_clip(enc, clip);
    CHECK(a.v == b.v);
    CHECK(a.shape == std::vector<int64_t>{cfg.feature_dim});

    Tensor wrong({cfg.clip_len, cfg.height, cfg.width + 1, cfg.channels});
    CHECK_THROWS_AS(encode_clip(enc, wrong), data_error);
}

TEST_CASE("encoder gradients match finite differences (params and clip)") {
    const EncoderConfig cfg = tiny_config();
    Encoder enc = Encoder::init(cfg, 5);
    // Evaluate at a generic point: zero biases leave dead zones whose
    // pre-activations sit exactly on the ReLU kink, where the two-sided
    // difference quotient is not the subgradient the backward pass picks.
    {
        Rng brng(55);
        for (auto& [name, t] : enc.named_params()) {
            if (name.ends_with("_b")) {
                for (real& v : t->v) v = static_cast<real>(brng.normal()) * real(0.05);
            }
        }
    }
    Tensor clip = random_clip(cfg, 6);

    // Scalar objective: fixed random projection of the feature vector.
    Tensor probe({cfg.feature_dim});
    Rng prng(7);
    for (real& v : probe.v) v = static_cast<real>(prng.normal());

    auto loss = [&]() {
        const Tensor f = encode_clip(enc, clip);
        return static_cast<double>(kern::dot(f.data(), probe.data(), f.v.size()));
    };

    EncoderTape tape;
    encode_clip_fwd(enc, clip, tape);
    Encoder grads = zeros_like(enc);
    const Tensor dclip = encode_clip_bwd(enc, tape, probe, grads);

    std::vector<std::pair<Tensor*, const Tensor*>> pairs;
    auto params = enc.named_params();
    auto gparams = grads.named_params();
    for (size_t i = 0; i < params.size(); ++i) {
        pairs.emplace_back(params[i].second, gparams[i].second);
    }
    pairs.emplace_back(&clip, &dclip);

    Rng rng(8);
    const double worst = testing::check_gradients(loss, pairs, rng, 10, 1e-5);
    MESSAGE("worst relative error: ", worst);
    CHECK(worst < 1e-4);
}

TEST_CASE("fc head with zero weights and bias gives uniform probabilities") {
    ClassifierHead head;
    head.kind = HeadKind::fc;
    head.w = Tensor({4, 2});
    head.b = Tensor({2});
    Tensor z({4});
    z.v = {1, -2, 3, 0.5};
    const Classification out = classify(head, z);
    CHECK(out.probs.v[0] == doctest::Approx(0.5));
    CHECK(out.probs.v[1] == doctest::Approx(0.5));
}

TEST_CASE("cosine head: orthonormal case matches the closed form") {
    ClassifierHead head;
    head.kind = HeadKind::cosine;
    head.temperature = 10;
    head.w = Tensor({2, 2});
    // Column 0 = e0, column 1 = e1 (w stored [d, n_classes]).
    head.w[idx2(0, 0, 2)] = 1;
    head.w[idx2(1, 1, 2)] = 1;
    head.b = Tensor({2});
    Tensor z({2});
    z.v = {1, 0};  // equals w column 0, orthogonal to column 1
    const Classification out = classify(head, z);
    CHECK(out.logits.v[0] == doctest::Approx(10.0));
    CHECK(out.logits.v[1] == doctest::Approx(0.0));
    CHECK(out.probs.v[0] == doctest::Approx(1.0 / (1.0 + std::exp(-10.0))));
    CHECK(out.probs.v[1] == doctest::Approx(std::exp(-10.0) / (1.0 + std::exp(-10.0))));
}

TEST_CASE("probabilities sum to one for random inputs") {
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        ClassifierHead head = ClassifierHead::init(
            trial % 2 ? HeadKind::cosine : HeadKind::fc, 6, 3, rng.next_u64());
        Tensor z({6});
        for (real& v : z.v) v = static_cast<real>(rng.normal());
        const Classification out = classify(head, z);
        CHECK(kern::sum(out.probs.data(), out.probs.v.size()) == doctest::Approx(1.0));
    }
}

TEST_CASE("cosine head is scale-invariant and zero-norm maps to zero logits") {
    Rng rng(10);
    ClassifierHead head = ClassifierHead::init(HeadKind::cosine, 6, 3, 11);
    Tensor z({6});
    for (real& v : z.v) v = static_cast<real>(rng.normal());
    const Classification base = classify(head, z);

    // Power-of-two scales are exact in float arithmetic.
    for (real alpha : {real(2), real(0.25), real(64)}) {
        Tensor scaled = z;
        kern::scale(alpha, scaled.data(), scaled.v.size());
        const Classification out = classify(head, scaled);
        CHECK(out.logits.v == base.logits.v);
    }
    // A generic positive scale agrees to rounding, same argmax.
    Tensor scaled = z;
    kern::scale(real(3.7), scaled.data(), scaled.v.size());
    const Classification out = classify(head, scaled);
    size_t a0 = 0, a1 = 0;
    kern::max_value(base.logits.data(), base.logits.v.size(), &a0);
    kern::max_value(out.logits.data(), out.logits.v.size(), &a1);
    CHECK(a0 == a1);
    for (size_t i = 0; i < out.logits.v.size(); ++i) {
        CHECK(out.logits.v[i] == doctest::Approx(base.logits.v[i]).epsilon(1e-12));
    }

    Tensor zero({6});
    const Classification zc = classify(head, zero);
    for (real v : zc.logits.v) CHECK(v == 0);
    for (real v : zc.probs.v) CHECK(v == doctest::Approx(1.0 / 3));
}

TEST_CASE("head gradients match finite differences for both kinds") {
    Rng rng(12);
    for (HeadKind kind : {HeadKind::fc, HeadKind::cosine}) {
        ClassifierHead head = ClassifierHead::init(kind, 5, 3, rng.next_u64());
        Tensor z({5});
        for (real& v : z.v) v = static_cast<real>(rng.normal());
        const int64_t label = 1;

        auto loss = [&]() {
            const Classification out = classify(head, z);
            return static_cast<double>(softmax_cross_entropy(out.logits, label).loss);
        };

        const Classification out = classify(head, z);
        const CrossEntropy ce = softmax_cross_entropy(out.logits, label);
        const Tensor dlogits = softmax_cross_entropy_bwd(ce.probs, label);
        Tensor gw(head.w.shape), gb(head.b.shape);
        const Tensor dz = classify_bwd(head, z, dlogits, gw, gb);

        std::vector<std::pair<Tensor*, const Tensor*>> pairs = {{&head.w, &gw}, {&z, &dz}};
        if (kind == HeadKind::fc) pairs.push_back({&head.b, &gb});
        const double worst = testing::check_gradients(loss, pairs, rng, 10, 1e-5);
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("sgd with momentum follows the hand-computed trajectory") {
    Tensor p({1});
    p.v = {1.0};
    Tensor g({1});
    g.v = {0.5};
    Sgd opt({0.1, 0.9});
    opt.step({&p}, {&g});
    // v1 = -0.1*0.5 = -0.05; p = 0.95
    CHECK(p.v[0] == doctest::Approx(0.95));
    opt.step({&p}, {&g});
    // v2 = 0.9*(-0.05) - 0.05 = -0.095; p = 0.855
    CHECK(p.v[0] == doctest::Approx(0.855));
}

TEST_CASE("encoder and head checkpoints round-trip") {
    TempDir tmp;
    const Encoder enc = Encoder::init(tiny_config(), 13);
    save_encoder(tmp.path / "enc", enc);
    const Encoder back = load_encoder(tmp.path / "enc");
    CHECK(back.same_values(enc));
    CHECK(back.cfg == enc.cfg);

    ClassifierHead head = ClassifierHead::init(HeadKind::cosine, 8, 2, 14);
    head.temperature = 7;
    save_head(tmp.path / "head", head);
    const ClassifierHead hback = load_head(tmp.path / "head");
    CHECK(hback.kind == HeadKind::cosine);
    CHECK(hback.temperature == 7);
    CHECK(hback.w.v == head.w.v);
}

TEST_CASE("pretraining: zero epochs, determinism, learnable source classes") {
    TempDir tmp;
    VideoConfig vc;
    vc.height = 16;
    vc.width = 16;
    vc.min_frames = 12;
    vc.max_frames = 20;
    vc.min_sprites = 1;
    vc.max_sprites = 2;
    vc.speed_min = 1.2;
    vc.speed_max = 2.2;
    const DatasetManifest source = gen_source_dataset(21, 4, 5, vc, tmp.path);

    EncoderConfig ec;
    ec.clip_len = 8;
    ec.height = 16;
    ec.width = 16;
    ec.widths = {6, 12};
    ec.feature_dim = 32;

    PretrainConfig pc;
    pc.epochs = 0;
    pc.seed = 1;

    SUBCASE("zero epochs leaves parameters untouched") {
        Encoder enc = Encoder::init(ec, 22);
        const Encoder before = enc;
        ClassifierHead head = ClassifierHead::init(HeadKind::fc, ec.feature_dim, 4, 23);
        pretrain_source(enc, head, source, pc);
        CHECK(enc.same_values(before));
    }

    SUBCASE("single-class dataset is rejected") {
        TempDir tmp2;
        DatasetManifest single = source;
        for (auto& e : single.entries) e.label = 0;
        Encoder enc = Encoder::init(ec, 22);
        ClassifierHead head = ClassifierHead::init(HeadKind::fc, ec.feature_dim, 4, 23);
        CHECK_THROWS_AS(pretrain_source(enc, head, single, pc), data_error);
    }

    SUBCASE("training fits the separable corpus and is bit-deterministic") {
        pc.epochs = 50;
        pc.batch_size = 8;
        pc.lr = 0.01;
        pc.seed = 24;

        Encoder enc1 = Encoder::init(ec, 22);
        ClassifierHead head1 = ClassifierHead::init(HeadKind::fc, ec.feature_dim, 4, 23);
        const TrainLog log1 = pretrain_source(enc1, head1, source, pc);
        MESSAGE("final train accuracy: ", log1.epoch_accuracy.back());
        CHECK(log1.epoch_accuracy.back() > 0.9);

        // Smoothed (5-epoch window) loss does not increase.
        const auto& loss = log1.epoch_loss;
        auto window = [&](size_t end) {
            double s = 0;
            for (size_t i = end - 5; i < end; ++i) s += loss[i];
            return s / 5;
        };
        for (size_t end = 5; end + 5 <= loss.size(); ++end) {
            CHECK(window(end + 5) <= window(end) + 1e-9);
        }

        PretrainConfig pc2 = pc;
        pc2.jobs = 2;  // job count must not affect the result
        Encoder enc2 = Encoder::init(ec, 22);
        ClassifierHead head2 = ClassifierHead::init(HeadKind::fc, ec.feature_dim, 4, 23);
        pretrain_source(enc2, head2, source, pc2);
        CHECK(enc1.same_values(enc2));
        CHECK(head1.w.v == head2.w.v);
    }
}
