#include "xvad/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "xvad/errors.hpp"
#include "xvad/kernels.hpp"
#include "xvad/parallel.hpp"

namespace fs = std::filesystem;

namespace xvad {

MetaTestPool build_meta_test_pool(const DatasetManifest& normals,
                                  const DatasetManifest& abnormals,
                                  const std::string& type_filter) {
    if (normals.domain_tag != DomainTag::target_normal ||
        abnormals.domain_tag != DomainTag::target_abnormal) {
        throw data_error("meta-test pool needs a target_normal and a target_abnormal manifest");
    }
    MetaTestPool pool;
    pool.type_filter = type_filter;
    pool.normals = normals.entries;
    if (type_filter == "all") {
        pool.abnormals = abnormals.entries;
    } else {
        for (const auto& e : abnormals.entries) {
            if (e.anomaly_type == type_filter) pool.abnormals.push_back(e);
        }
        if (pool.abnormals.empty()) {
            throw data_error("unknown anomaly type filter: " + type_filter);
        }
    }
    return pool;
}

void validate_pool(const MetaTestPool& pool, const EpisodeConfig& cfg) {
    if (cfg.n_way != 2) throw config_error("protocol is 2-way only");
    if (cfg.k_shots < 1 || cfg.q_queries < 1 || cfg.n_episodes < 1) {
        throw config_error("episode config values must be positive");
    }
    const size_t need = static_cast<size_t>(cfg.k_shots) + static_cast<size_t>(cfg.q_queries);
    if (pool.normals.size() < need || pool.abnormals.size() < need) {
        throw data_error("pool too small: need " + std::to_string(need) +
                         " videos per class, have " + std::to_string(pool.normals.size()) +
                         " normal / " + std::to_string(pool.abnormals.size()) + " abnormal");
    }
}

Episode sample_episode(const MetaTestPool& pool, const EpisodeConfig& cfg,
                       int64_t episode_index) {
    validate_pool(pool, cfg);
    Episode ep;
    ep.index = episode_index;
    ep.stream = derive_seed(cfg.seed, 0xe5, static_cast<uint64_t>(episode_index));
    Rng rng(derive_seed(cfg.seed, 0xe7, static_cast<uint64_t>(episode_index)));

    auto draw = [&](size_t pool_size, std::vector<size_t>& support, std::vector<size_t>& query) {
        std::vector<size_t> idx(pool_size);
        std::iota(idx.begin(), idx.end(), size_t{0});
        rng.shuffle(idx);
        support.assign(idx.begin(), idx.begin() + cfg.k_shots);
        query.assign(idx.begin() + cfg.k_shots, idx.begin() + cfg.k_shots + cfg.q_queries);
    };
    draw(pool.normals.size(), ep.support_normal, ep.query_normal);
    draw(pool.abnormals.size(), ep.support_abnormal, ep.query_abnormal);
    return ep;
}

EvalResult make_eval_result(std::vector<double> per_episode, nlohmann::json config_echo) {
    EvalResult r;
    r.per_episode_accuracy = std::move(per_episode);
    r.config_echo = std::move(config_echo);
    const size_t n = r.per_episode_accuracy.size();
    if (n == 0) return r;
    double sum = 0;
    for (double a : r.per_episode_accuracy) sum += a;
    r.mean = sum / static_cast<double>(n);
    if (n > 1) {
        double ss = 0;
        for (double a : r.per_episode_accuracy) ss += (a - r.mean) * (a - r.mean);
        r.stddev = std::sqrt(ss / static_cast<double>(n - 1));
    }
    return r;
}

void save_eval_result(const fs::path& path, const EvalResult& r) {
    nlohmann::json j;
    j["mean"] = r.mean;
    j["std"] = r.stddev;
    j["per_episode"] = r.per_episode_accuracy;
    j["config"] = r.config_echo;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw data_error("cannot write eval result: " + path.string());
    out << j.dump(2) << "\n";
}

EvalResult run_episodes(const MetaTestPool& pool, const EpisodeConfig& cfg, int jobs,
                        const EpisodeClassifier& classify_queries) {
    validate_pool(pool, cfg);
    std::vector<double> acc(static_cast<size_t>(cfg.n_episodes));
    parallel_for(static_cast<size_t>(cfg.n_episodes), jobs, [&](size_t i) {
        const Episode ep = sample_episode(pool, cfg, static_cast<int64_t>(i));
        const std::vector<int64_t> pred = classify_queries(ep);
        const size_t nq = ep.query_normal.size() + ep.query_abnormal.size();
        if (pred.size() != nq) throw data_error("episode classifier returned wrong count");
        int64_t correct = 0;
        for (size_t q = 0; q < ep.query_normal.size(); ++q) {
            if (pred[q] == 0) ++correct;
        }
        for (size_t q = 0; q < ep.query_abnormal.size(); ++q) {
            if (pred[ep.query_normal.size() + q] == 1) ++correct;
        }
        acc[i] = static_cast<double>(correct) / static_cast<double>(nq);
    });
    nlohmann::json echo = {{"n_way", cfg.n_way},         {"k_shots", cfg.k_shots},
                           {"q_queries", cfg.q_queries}, {"n_episodes", cfg.n_episodes},
                           {"type_filter", cfg.type_filter}, {"seed", cfg.seed}};
    return make_eval_result(std::move(acc), std::move(echo));
}

// ---------------------------------------------------------------------------
// Feature store
// ---------------------------------------------------------------------------

const TensorU8& VideoFeatureStore::frames(const ManifestEntry& entry) {
    const std::string key = entry.resolved_path.empty() ? entry.video_path : entry.resolved_path;
    {
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = frames_cache_.find(key);
        if (it != frames_cache_.end()) return it->second;
    }
    TensorU8 loaded = read_tensor_u8(key);
    std::lock_guard<std::mutex> lock(mutex_);
    return frames_cache_.emplace(key, std::move(loaded)).first->second;
}

Tensor VideoFeatureStore::sequence_features(const ManifestEntry& entry) {
    const std::string key = entry.resolved_path.empty() ? entry.video_path : entry.resolved_path;
    {
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = sequence_cache_.find(key);
        if (it != sequence_cache_.end()) return it->second;
    }
    const Tensor feats = video_node_features(enc_, frames(entry), protocol_);
    std::lock_guard<std::mutex> lock(mutex_);
    return sequence_cache_.emplace(key, feats).first->second;
}

Tensor VideoFeatureStore::clip_feature(const ManifestEntry& entry, int64_t start) {
    const std::string path = entry.resolved_path.empty() ? entry.video_path : entry.resolved_path;
    const std::string key = path + "#" + std::to_string(start);
    {
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = clip_cache_.find(key);
        if (it != clip_cache_.end()) return it->second;
    }
    const Tensor clip = clip_from_frames(frames(entry), start, protocol_.clip_len, 1);
    const Tensor feat = encode_clip(enc_, clip);
    std::lock_guard<std::mutex> lock(mutex_);
    return clip_cache_.emplace(key, feat).first->second;
}

Tensor VideoFeatureStore::middlemost_feature(const ManifestEntry& entry) {
    return clip_feature(entry, middlemost_clip_start(n_frames(entry), protocol_.clip_len, 1));
}

int64_t VideoFeatureStore::n_frames(const ManifestEntry& entry) {
    return frames(entry).shape[0];
}

// ---------------------------------------------------------------------------
// Pipeline evaluation
// ---------------------------------------------------------------------------

EvalResult evaluate_pipeline(const Encoder& enc, const MetaTestPool& pool,
                             const EpisodeConfig& cfg, const McpmConfig& mcpm, int jobs) {
    VideoFeatureStore store(enc, mcpm);
    EvalResult r = run_episodes(pool, cfg, jobs, [&](const Episode& ep) {
        std::vector<SupportSample> support;
        support.reserve(ep.support_normal.size() + ep.support_abnormal.size());
        for (size_t i : ep.support_normal) {
            support.push_back({store.sequence_features(pool.normals[i]), 0});
        }
        for (size_t i : ep.support_abnormal) {
            support.push_back({store.sequence_features(pool.abnormals[i]), 1});
        }
        const TrainedGraph trained =
            train_mcpm(support, enc.cfg.feature_dim, mcpm, ep.stream);

        std::vector<int64_t> pred;
        pred.reserve(ep.query_normal.size() + ep.query_abnormal.size());
        auto classify_one = [&](const ManifestEntry& entry) {
            const Classification cls = graph_classify(trained.params, trained.head, mcpm.k,
                                                      store.sequence_features(entry));
            size_t arg = 0;
            kern::max_value(cls.probs.data(), cls.probs.v.size(), &arg);
            return static_cast<int64_t>(arg);
        };
        for (size_t i : ep.query_normal) pred.push_back(classify_one(pool.normals[i]));
        for (size_t i : ep.query_abnormal) pred.push_back(classify_one(pool.abnormals[i]));
        return pred;
    });
    r.config_echo["method"] = "mcpm";
    r.config_echo["clip_len"] = mcpm.clip_len;
    r.config_echo["stride"] = mcpm.stride;
    r.config_echo["min_len"] = mcpm.min_len;
    r.config_echo["max_len"] = mcpm.max_len;
    return r;
}

// ---------------------------------------------------------------------------
// Head-only baseline
// ---------------------------------------------------------------------------

namespace {

ClassifierHead train_head_on_features(const std::vector<Tensor>& feats,
                                      const std::vector<int64_t>& labels,
                                      const HeadOnlyConfig& cfg, int feature_dim,
                                      uint64_t seed) {
    ClassifierHead head = ClassifierHead::init(cfg.kind, feature_dim, 2, seed);
    head.temperature = cfg.temperature;
    Sgd opt({cfg.lr, cfg.momentum});
    const real inv = real(1) / static_cast<real>(feats.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Tensor gw(head.w.shape), gb(head.b.shape);
        real loss = 0;
        for (size_t s = 0; s < feats.size(); ++s) {
            const Classification cls = classify(head, feats[s]);
            const CrossEntropy ce = softmax_cross_entropy(cls.logits, labels[s]);
            loss += ce.loss;
            Tensor dlogits = softmax_cross_entropy_bwd(ce.probs, labels[s]);
            kern::scale(inv, dlogits.data(), dlogits.v.size());
            classify_bwd(head, feats[s], dlogits, gw, gb);
        }
        if (!std::isfinite(loss)) throw numeric_error("head-only: non-finite loss");
        opt.step({&head.w, &head.b}, {&gw, &gb});
    }
    return head;
}

}  // namespace

EvalResult baseline_head_only(const Encoder& enc, const MetaTestPool& pool,
                              const EpisodeConfig& cfg, const HeadOnlyConfig& head_cfg,
                              int jobs) {
    McpmConfig protocol;
    protocol.clip_len = head_cfg.clip_len;
    VideoFeatureStore store(enc, protocol);
    EvalResult r = run_episodes(pool, cfg, jobs, [&](const Episode& ep) {
        // Support: one random clip per video, drawn from the episode stream in
        // a fixed order (normals first).
        Rng rng(derive_seed(ep.stream, 0x51));
        std::vector<Tensor> feats;
        std::vector<int64_t> labels;
        auto add_support = [&](const ManifestEntry& entry, int64_t label) {
            const int64_t ns =
                n_valid_clip_starts(store.n_frames(entry), head_cfg.clip_len, head_cfg.frame_rate);
            if (ns <= 0) throw data_error("head-only: video too short for one clip");
            const int64_t start = rng.uniform_int(0, ns - 1);
            feats.push_back(store.clip_feature(entry, start));
            labels.push_back(label);
        };
        for (size_t i : ep.support_normal) add_support(pool.normals[i], 0);
        for (size_t i : ep.support_abnormal) add_support(pool.abnormals[i], 1);

        const ClassifierHead head = train_head_on_features(
            feats, labels, head_cfg, enc.cfg.feature_dim, derive_seed(ep.stream, 0x52));

        std::vector<int64_t> pred;
        auto classify_one = [&](const ManifestEntry& entry) {
            const Classification cls = classify(head, store.middlemost_feature(entry));
            size_t arg = 0;
            kern::max_value(cls.probs.data(), cls.probs.v.size(), &arg);
            return static_cast<int64_t>(arg);
        };
        for (size_t i : ep.query_normal) pred.push_back(classify_one(pool.normals[i]));
        for (size_t i : ep.query_abnormal) pred.push_back(classify_one(pool.abnormals[i]));
        return pred;
    });
    r.config_echo["method"] = head_cfg.kind == HeadKind::fc ? "head_fc" : "head_cosine";
    return r;
}

// ---------------------------------------------------------------------------
// One-class baseline
// ---------------------------------------------------------------------------

std::pair<double, double> best_midpoint_threshold(const std::vector<double>& scores,
                                                  const std::vector<int64_t>& labels) {
    if (scores.empty() || scores.size() != labels.size()) {
        throw data_error("threshold sweep needs matching non-empty scores and labels");
    }
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    const size_t n = scores.size();
    size_t total_abnormal = 0, total_normal = 0;
    for (int64_t l : labels) {
        if (l == 1) ++total_abnormal;
        else ++total_normal;
    }

    // Classify abnormal iff score > r; candidates are the midpoints of
    // consecutive sorted scores. A midpoint between tied scores equals the
    // tied value and induces the same split as the midpoint at the end of
    // the tie run, so evaluating distinct-value boundaries (with the whole
    // run counted as below) covers every candidate split exactly.
    bool found = false;
    double best_threshold = 0;
    double best_accuracy = -1;
    size_t normals_below = 0, abnormals_below = 0;
    for (size_t i = 0; i + 1 < n; ++i) {
        if (labels[order[i]] == 1) ++abnormals_below;
        else ++normals_below;
        if (scores[order[i]] == scores[order[i + 1]]) continue;
        const double r = 0.5 * (scores[order[i]] + scores[order[i + 1]]);
        const size_t correct = normals_below + (total_abnormal - abnormals_below);
        const double acc = static_cast<double>(correct) / static_cast<double>(n);
        if (acc > best_accuracy) {
            best_accuracy = acc;
            best_threshold = r;
            found = true;
        }
    }
    // A tie run at the top has no distinct boundary after it; its degenerate
    // midpoint equals the maximum score and classifies everything as normal.
    if (n >= 2 && scores[order[n - 1]] == scores[order[n - 2]]) {
        const double acc = static_cast<double>(total_normal) / static_cast<double>(n);
        if (acc > best_accuracy) {
            best_accuracy = acc;
            best_threshold = scores[order[n - 1]];
        }
        found = true;
    }
    if (!found) {
        // Single sample: no midpoints exist; classify it as normal.
        best_threshold = scores[order[n - 1]];
        best_accuracy = static_cast<double>(total_normal) / static_cast<double>(n);
    }
    return {best_threshold, best_accuracy};
}

OneClassResult baseline_one_class(const Encoder& enc, const DatasetManifest& train_normals,
                                  const LabeledVideoSet& validation, const LabeledVideoSet& test,
                                  int clip_len, int frame_rate) {
    if (train_normals.domain_tag != DomainTag::target_normal || train_normals.entries.empty()) {
        throw data_error("one-class baseline needs a non-empty normal training manifest");
    }
    auto has_both = [](const LabeledVideoSet& s) {
        std::set<int64_t> seen(s.labels.begin(), s.labels.end());
        return seen.count(0) && seen.count(1);
    };
    if (validation.entries.empty() || test.entries.empty() || !has_both(validation) ||
        !has_both(test)) {
        throw data_error("one-class baseline needs both classes in validation and test");
    }

    auto middle_feature = [&](const ManifestEntry& entry) {
        const TensorU8 frames = read_tensor_u8(entry.resolved_path.empty() ? entry.video_path
                                                                           : entry.resolved_path);
        const int64_t start = middlemost_clip_start(frames.shape[0], clip_len, frame_rate);
        return encode_clip(enc, clip_from_frames(frames, start, clip_len, frame_rate));
    };

    OneClassResult res;
    res.center = Tensor({enc.cfg.feature_dim});
    for (const auto& e : train_normals.entries) {
        const Tensor f = middle_feature(e);
        kern::axpy(1, f.data(), res.center.data(), res.center.v.size());
    }
    kern::scale(real(1) / static_cast<real>(train_normals.entries.size()), res.center.data(),
                res.center.v.size());

    auto score_set = [&](const LabeledVideoSet& s) {
        std::vector<double> scores;
        scores.reserve(s.entries.size());
        for (const auto& e : s.entries) {
            const Tensor f = middle_feature(e);
            scores.push_back(static_cast<double>(
                kern::sqdist(f.data(), res.center.data(), f.v.size())));
        }
        return scores;
    };

    const std::vector<double> val_scores = score_set(validation);
    std::tie(res.threshold, res.validation_accuracy) =
        best_midpoint_threshold(val_scores, validation.labels);

    const std::vector<double> test_scores = score_set(test);
    int64_t correct_normal = 0, total_normal = 0, correct_abnormal = 0, total_abnormal = 0;
    for (size_t i = 0; i < test_scores.size(); ++i) {
        const bool predicted_abnormal = test_scores[i] > res.threshold;
        if (test.labels[i] == 1) {
            ++total_abnormal;
            if (predicted_abnormal) ++correct_abnormal;
        } else {
            ++total_normal;
            if (!predicted_abnormal) ++correct_normal;
        }
    }
    // Balanced accuracy: the protocol keeps the classes at equal size.
    res.test_accuracy = 0.5 * (static_cast<double>(correct_normal) / total_normal +
                               static_cast<double>(correct_abnormal) / total_abnormal);
    return res;
}

// ---------------------------------------------------------------------------
// Feature export
// ---------------------------------------------------------------------------

void export_features(const Encoder& enc, const DatasetManifest& dataset,
                     const fs::path& out_tensor, int clip_len, int frame_rate) {
    const int64_t n = static_cast<int64_t>(dataset.entries.size());
    const int64_t d = enc.cfg.feature_dim;
    Tensor rows({n, d});
    nlohmann::json sidecar;
    sidecar["labels"] = nlohmann::json::array();
    sidecar["anomaly_types"] = nlohmann::json::array();
    sidecar["video_paths"] = nlohmann::json::array();
    for (int64_t i = 0; i < n; ++i) {
        const auto& e = dataset.entries[static_cast<size_t>(i)];
        const TensorU8 frames = read_tensor_u8(e.resolved_path.empty() ? e.video_path
                                                                       : e.resolved_path);
        const int64_t start = middlemost_clip_start(frames.shape[0], clip_len, frame_rate);
        const Tensor f = encode_clip(enc, clip_from_frames(frames, start, clip_len, frame_rate));
        std::copy(f.v.begin(), f.v.end(), rows.data() + i * d);
        sidecar["labels"].push_back(e.label);
        sidecar["anomaly_types"].push_back(e.anomaly_type);
        sidecar["video_paths"].push_back(e.video_path);
    }
    sidecar["feature_dim"] = d;
    write_tensor_real(out_tensor, rows);
    std::ofstream out(out_tensor.string() + ".json", std::ios::trunc);
    if (!out) throw data_error("cannot write feature sidecar");
    out << sidecar.dump(2) << "\n";
}

}  // namespace xvad
