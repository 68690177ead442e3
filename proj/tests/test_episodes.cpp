// Episodic protocol, baselines, and statistics.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "xvad/episodes.hpp"
#include "xvad/errors.hpp"
#include "xvad/kernels.hpp"

namespace fs = std::filesystem;
using namespace xvad;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("xvad_ep_" + std::to_string(mix64(reinterpret_cast<uintptr_t>(this))));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// Small target corpus: 20 normals, 2 types x 8 abnormals, 16x16 frames.
TargetDataset small_target(const fs::path& dir, uint64_t seed = 91) {
    VideoConfig vc;
    vc.height = 16;
    vc.width = 16;
    vc.min_frames = 20;
    vc.max_frames = 32;
    vc.min_sprites = 1;
    vc.max_sprites = 2;
    return gen_target_dataset(seed, {"stop", "reverse"}, 20, 8, vc, dir);
}

EncoderConfig small_encoder_config() {
    EncoderConfig ec;
    ec.clip_len = 8;
    ec.height = 16;
    ec.width = 16;
    ec.widths = {4, 8};
    ec.feature_dim = 16;
    return ec;
}

}  // namespace

TEST_CASE("pool construction: filters, counts, unknown types") {
    TempDir tmp;
    const TargetDataset ds = small_target(tmp.path);

    const MetaTestPool all = build_meta_test_pool(ds.normal, ds.abnormal, "all");
    CHECK(all.normals.size() == 20);
    CHECK(all.abnormals.size() == 16);

    const MetaTestPool stop = build_meta_test_pool(ds.normal, ds.abnormal, "stop");
    CHECK(stop.normals.size() == 20);
    CHECK(stop.abnormals.size() == 8);
    for (const auto& e : stop.abnormals) CHECK(e.anomaly_type == "stop");

    CHECK_THROWS_AS(build_meta_test_pool(ds.normal, ds.abnormal, "nonexistent"), data_error);
    CHECK_THROWS_AS(build_meta_test_pool(ds.abnormal, ds.normal, "all"), data_error);
}

TEST_CASE("episodes: sizes, balance, disjointness over 1000 draws, determinism") {
    TempDir tmp;
    const TargetDataset ds = small_target(tmp.path);
    const MetaTestPool pool = build_meta_test_pool(ds.normal, ds.abnormal, "all");

    EpisodeConfig cfg;
    cfg.k_shots = 5;
    cfg.q_queries = 10;  // pool has 16 abnormals; 5 + 10 fits
    cfg.n_episodes = 1000;
    cfg.seed = 7;

    for (int64_t i = 0; i < 1000; ++i) {
        const Episode ep = sample_episode(pool, cfg, i);
        REQUIRE(ep.support_normal.size() == 5);
        REQUIRE(ep.support_abnormal.size() == 5);
        REQUIRE(ep.query_normal.size() == 10);
        REQUIRE(ep.query_abnormal.size() == 10);
        std::set<size_t> normal_ids(ep.support_normal.begin(), ep.support_normal.end());
        normal_ids.insert(ep.query_normal.begin(), ep.query_normal.end());
        CHECK(normal_ids.size() == 15);  // support and query never overlap
        std::set<size_t> abnormal_ids(ep.support_abnormal.begin(), ep.support_abnormal.end());
        abnormal_ids.insert(ep.query_abnormal.begin(), ep.query_abnormal.end());
        CHECK(abnormal_ids.size() == 15);
    }

    const Episode a = sample_episode(pool, cfg, 123);
    const Episode b = sample_episode(pool, cfg, 123);
    CHECK(a.support_normal == b.support_normal);
    CHECK(a.query_abnormal == b.query_abnormal);
    CHECK(a.stream == b.stream);

    EpisodeConfig too_big = cfg;
    too_big.q_queries = 15;  // 5 + 15 = 20 > 16 abnormals
    CHECK_THROWS_AS(sample_episode(pool, too_big, 0), data_error);
}

TEST_CASE("eval statistics: mean and sample std are recomputable") {
    EvalResult r = make_eval_result({0.5, 0.7, 0.9, 0.6}, {});
    const double mean = (0.5 + 0.7 + 0.9 + 0.6) / 4.0;
    CHECK(std::abs(r.mean - mean) < 1e-12);
    double ss = 0;
    for (double a : {0.5, 0.7, 0.9, 0.6}) ss += (a - mean) * (a - mean);
    CHECK(std::abs(r.stddev - std::sqrt(ss / 3.0)) < 1e-12);

    const EvalResult single = make_eval_result({0.25}, {});
    CHECK(single.mean == 0.25);
    CHECK(single.stddev == 0);
}

TEST_CASE("episode runner: oracle, coin flip, count oracle, determinism") {
    TempDir tmp;
    const TargetDataset ds = small_target(tmp.path);
    const MetaTestPool pool = build_meta_test_pool(ds.normal, ds.abnormal, "all");
    EpisodeConfig cfg;
    cfg.k_shots = 1;
    cfg.q_queries = 15;
    cfg.n_episodes = 200;
    cfg.seed = 11;

    SUBCASE("an oracle classifier scores 1.00 +/- 0.00") {
        const EvalResult r = run_episodes(pool, cfg, 2, [&](const Episode& ep) {
            std::vector<int64_t> pred(ep.query_normal.size(), 0);
            pred.insert(pred.end(), ep.query_abnormal.size(), 1);
            return pred;
        });
        CHECK(r.mean == 1.0);
        CHECK(r.stddev == 0.0);
    }

    SUBCASE("a seeded coin flip lands within 0.5 +/- 0.03") {
        const EvalResult r = run_episodes(pool, cfg, 2, [&](const Episode& ep) {
            Rng rng(derive_seed(ep.stream, 0xc0));
            std::vector<int64_t> pred;
            for (size_t q = 0; q < ep.query_normal.size() + ep.query_abnormal.size(); ++q) {
                pred.push_back(static_cast<int64_t>(rng.uniform_u64(2)));
            }
            return pred;
        });
        // 200 episodes of 30 Bernoulli(1/2) queries: the mean accuracy has
        // standard error sqrt(0.25/30)/sqrt(200) ~ 0.0065, so 0.03 is 4.6 SE.
        CHECK(std::abs(r.mean - 0.5) < 0.03);
    }

    SUBCASE("episode accuracy equals a direct count oracle") {
        EpisodeConfig one = cfg;
        one.n_episodes = 25;
        // Fixed rule: predict abnormal iff the pool index is even.
        auto rule = [](size_t pool_index) { return pool_index % 2 == 0 ? 1 : 0; };
        const EvalResult r = run_episodes(pool, one, 1, [&](const Episode& ep) {
            std::vector<int64_t> pred;
            for (size_t i : ep.query_normal) pred.push_back(rule(i));
            for (size_t i : ep.query_abnormal) pred.push_back(rule(i));
            return pred;
        });
        for (int64_t e = 0; e < one.n_episodes; ++e) {
            const Episode ep = sample_episode(pool, one, e);
            int64_t correct = 0;
            for (size_t i : ep.query_normal) {
                if (rule(i) == 0) ++correct;
            }
            for (size_t i : ep.query_abnormal) {
                if (rule(i) == 1) ++correct;
            }
            const double oracle = static_cast<double>(correct) / 30.0;
            CHECK(r.per_episode_accuracy[static_cast<size_t>(e)] == oracle);
        }
    }

    SUBCASE("same seed and config give identical per-episode lists at any job count") {
        auto classifier = [&](const Episode& ep) {
            Rng rng(derive_seed(ep.stream, 0xc1));
            std::vector<int64_t> pred;
            for (size_t q = 0; q < ep.query_normal.size() + ep.query_abnormal.size(); ++q) {
                pred.push_back(static_cast<int64_t>(rng.uniform_u64(2)));
            }
            return pred;
        };
        const EvalResult r1 = run_episodes(pool, cfg, 1, classifier);
        const EvalResult r2 = run_episodes(pool, cfg, 2, classifier);
        CHECK(r1.per_episode_accuracy == r2.per_episode_accuracy);
    }
}

// ---------------------------------------------------------------------------
// Head-only baseline
// ---------------------------------------------------------------------------

namespace {

// Writes a pool whose videos are byte-identical within each class (8-frame
// videos admit exactly one clip window, so every clip feature is constant
// per class).
TargetDataset degenerate_target(const fs::path& dir) {
    VideoConfig vc;
    vc.height = 16;
    vc.width = 16;
    vc.min_frames = 8;
    vc.max_frames = 8;
    vc.min_sprites = 2;
    vc.max_sprites = 2;
    fs::create_directories(dir / "videos");
    const VideoSample normal = make_normal_video(1, vc);
    const VideoSample abnormal = make_abnormal_video(2, "stop", vc);

    DatasetManifest nm, am;
    nm.domain_tag = DomainTag::target_normal;
    am.domain_tag = DomainTag::target_abnormal;
    for (int i = 0; i < 6; ++i) {
        const std::string np = "videos/n" + std::to_string(i) + ".actf";
        write_tensor_u8(dir / np, normal.frames);
        nm.entries.push_back({np, (dir / np).string(), 0, "", normal.n_frames()});
        const std::string ap = "videos/a" + std::to_string(i) + ".actf";
        write_tensor_u8(dir / ap, abnormal.frames);
        am.entries.push_back({ap, (dir / ap).string(), 1, "stop", abnormal.n_frames()});
    }
    return {nm, am};
}

}  // namespace

TEST_CASE("head-only baseline: degenerate separable pool scores 1.0") {
    TempDir tmp;
    const TargetDataset ds = degenerate_target(tmp.path);
    const MetaTestPool pool = build_meta_test_pool(ds.normal, ds.abnormal, "all");
    const Encoder enc = Encoder::init(small_encoder_config(), 17);

    EpisodeConfig cfg;
    cfg.k_shots = 2;
    cfg.q_queries = 2;
    cfg.n_episodes = 5;
    cfg.seed = 13;
    HeadOnlyConfig hc;
    for (HeadKind kind : {HeadKind::cosine, HeadKind::fc}) {
        hc.kind = kind;
        const EvalResult r = baseline_head_only(enc, pool, cfg, hc, 1);
        CHECK(r.mean == 1.0);
        CHECK(r.stddev == 0.0);
    }
}

TEST_CASE("head-only baseline: constant features give exactly chance accuracy") {
    TempDir tmp;
    const TargetDataset ds = small_target(tmp.path);
    const MetaTestPool pool = build_meta_test_pool(ds.normal, ds.abnormal, "all");
    // A zero encoder emits the zero feature for every clip; the cosine head
    // pins logits to zero and argmax always picks class 0.
    const Encoder enc = Encoder::zeros(small_encoder_config());

    EpisodeConfig cfg;
    cfg.k_shots = 2;
    cfg.q_queries = 5;
    cfg.n_episodes = 20;
    cfg.seed = 19;
    HeadOnlyConfig hc;
    hc.kind = HeadKind::cosine;
    const EvalResult r = baseline_head_only(enc, pool, cfg, hc, 2);
    CHECK(r.mean == doctest::Approx(0.5));
}

TEST_CASE("head-only baseline leaves the encoder untouched and is deterministic") {
    TempDir tmp;
    const TargetDataset ds = small_target(tmp.path);
    const MetaTestPool pool = build_meta_test_pool(ds.normal, ds.abnormal, "all");
    const Encoder enc = Encoder::init(small_encoder_config(), 23);
    const Encoder before = enc;

    EpisodeConfig cfg;
    cfg.k_shots = 3;
    cfg.q_queries = 5;
    cfg.n_episodes = 8;
    cfg.seed = 29;
    HeadOnlyConfig hc;
    const EvalResult r1 = baseline_head_only(enc, pool, cfg, hc, 1);
    const EvalResult r2 = baseline_head_only(enc, pool, cfg, hc, 2);
    CHECK(enc.same_values(before));
    CHECK(r1.per_episode_accuracy == r2.per_episode_accuracy);
    for (double a : r1.per_episode_accuracy) {
        CHECK(a >= 0.0);
        CHECK(a <= 1.0);
    }
}

// ---------------------------------------------------------------------------
// One-class baseline
// ---------------------------------------------------------------------------

TEST_CASE("threshold sweep: worked 1-D example and brute-force equivalence") {
    SUBCASE("normals {0,0.1}, abnormals {1.0,1.1} separate perfectly") {
        const auto [threshold, acc] =
            best_midpoint_threshold({0.0, 0.1, 1.0, 1.1}, {0, 0, 1, 1});
        CHECK(acc == 1.0);
        CHECK(threshold > 0.1);
        CHECK(threshold < 1.0);
    }
    SUBCASE("sweep matches an exhaustive oracle on random instances") {
        Rng rng(31);
        for (int trial = 0; trial < 200; ++trial) {
            const int n = static_cast<int>(rng.uniform_int(2, 25));
            std::vector<double> scores;
            std::vector<int64_t> labels;
            for (int i = 0; i < n; ++i) {
                // Coarse grid scores exercise duplicate-score midpoints.
                scores.push_back(static_cast<double>(rng.uniform_int(0, 6)));
                labels.push_back(static_cast<int64_t>(rng.uniform_u64(2)));
            }
            const auto [threshold, acc] = best_midpoint_threshold(scores, labels);

            // Oracle: recount accuracy at every midpoint of the sorted scores.
            std::vector<double> sorted = scores;
            std::sort(sorted.begin(), sorted.end());
            double best = -1;
            for (size_t i = 0; i + 1 < sorted.size(); ++i) {
                const double r = 0.5 * (sorted[i] + sorted[i + 1]);
                int correct = 0;
                for (size_t j = 0; j < scores.size(); ++j) {
                    const int64_t pred = scores[j] > r ? 1 : 0;
                    if (pred == labels[j]) ++correct;
                }
                best = std::max(best, static_cast<double>(correct) / n);
            }
            CHECK(acc == best);
            // The returned threshold attains the reported accuracy.
            int correct = 0;
            for (size_t j = 0; j < scores.size(); ++j) {
                const int64_t pred = scores[j] > threshold ? 1 : 0;
                if (pred == labels[j]) ++correct;
            }
            CHECK(static_cast<double>(correct) / n == acc);
        }
    }
}

TEST_CASE("one-class baseline: identical training features give a zero-score center") {
    TempDir tmp;
    const TargetDataset ds = degenerate_target(tmp.path);
    const Encoder enc = Encoder::init(small_encoder_config(), 37);

    LabeledVideoSet validation, test;
    for (size_t i = 0; i < 2; ++i) {
        validation.entries.push_back(ds.normal.entries[i]);
        validation.labels.push_back(0);
        validation.entries.push_back(ds.abnormal.entries[i]);
        validation.labels.push_back(1);
        test.entries.push_back(ds.normal.entries[2 + i]);
        test.labels.push_back(0);
        test.entries.push_back(ds.abnormal.entries[2 + i]);
        test.labels.push_back(1);
    }
    const OneClassResult r = baseline_one_class(enc, ds.normal, validation, test, 8, 1);

    // All normal videos are byte-identical: the center equals their feature
    // and every normal score is exactly zero, so validation and test separate.
    const VideoSample normal = load_video(ds.normal.entries[0], DomainTag::target_normal);
    const Tensor f = encode_clip(enc, clip_from_frames(normal.frames, 0, 8, 1));
    CHECK(kern::sqdist(f.data(), r.center.data(), f.v.size()) < 1e-24);
    CHECK(r.validation_accuracy == 1.0);
    CHECK(r.test_accuracy == 1.0);

    LabeledVideoSet no_abnormal = validation;
    no_abnormal.labels.assign(no_abnormal.labels.size(), 0);
    CHECK_THROWS_AS(baseline_one_class(enc, ds.normal, no_abnormal, test, 8, 1), data_error);
}

// ---------------------------------------------------------------------------
// Feature export
// ---------------------------------------------------------------------------

TEST_CASE("feature export: one row per video, deterministic, bit-exact") {
    TempDir tmp;
    const TargetDataset ds = small_target(tmp.path);
    const Encoder enc = Encoder::init(small_encoder_config(), 41);

    const fs::path out = tmp.path / "features.actf";
    export_features(enc, ds.abnormal, out, 8, 1);
    const Tensor rows = read_tensor_real(out);
    REQUIRE(rows.shape == std::vector<int64_t>{16, 16});

    // Re-encoding reproduces the exported values bit-exactly.
    for (size_t i = 0; i < 3; ++i) {
        const VideoSample v = load_video(ds.abnormal.entries[i], DomainTag::target_abnormal);
        const int64_t start = middlemost_clip_start(v.n_frames(), 8, 1);
        const Tensor f = encode_clip(enc, clip_from_frames(v.frames, start, 8, 1));
        for (int64_t c = 0; c < 16; ++c) {
            CHECK(rows[idx2(static_cast<int64_t>(i), c, 16)] == f.v[static_cast<size_t>(c)]);
        }
    }

    std::ifstream sidecar(out.string() + ".json");
    REQUIRE(sidecar.good());
    nlohmann::json meta;
    sidecar >> meta;
    CHECK(meta.at("labels").size() == 16);
    CHECK(meta.at("anomaly_types")[0] == "stop");

    export_features(enc, ds.abnormal, tmp.path / "features2.actf", 8, 1);
    const Tensor rows2 = read_tensor_real(tmp.path / "features2.actf");
    CHECK(rows.v == rows2.v);
}

// ---------------------------------------------------------------------------
// Pipeline evaluation smoke test (full runs live in the acceptance suite)
// ---------------------------------------------------------------------------

TEST_CASE("evaluate_pipeline runs episodes deterministically") {
    TempDir tmp;
    const TargetDataset ds = small_target(tmp.path);
    const MetaTestPool pool = build_meta_test_pool(ds.normal, ds.abnormal, "all");
    const Encoder enc = Encoder::init(small_encoder_config(), 43);

    EpisodeConfig cfg;
    cfg.k_shots = 2;
    cfg.q_queries = 3;
    cfg.n_episodes = 4;
    cfg.seed = 47;
    McpmConfig mcpm;
    mcpm.d_g = 8;
    mcpm.epochs = 10;

    const EvalResult r1 = evaluate_pipeline(enc, pool, cfg, mcpm, 1);
    const EvalResult r2 = evaluate_pipeline(enc, pool, cfg, mcpm, 2);
    CHECK(r1.per_episode_accuracy == r2.per_episode_accuracy);
    CHECK(r1.per_episode_accuracy.size() == 4);
    for (double a : r1.per_episode_accuracy) {
        CHECK(a >= 0.0);
        CHECK(a <= 1.0);
    }
    CHECK(r1.config_echo.at("method") == "mcpm");
}
