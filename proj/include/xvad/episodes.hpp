// episodes.hpp - Episodic meta-test protocol, baselines, statistics.
//
// Each episode draws a balanced 2-way support/query split from the pool
// (normals are down-sampled to match the abnormal count), trains the
// per-episode learner on the support set only, and scores query accuracy.
// Results aggregate as mean +/- sample standard deviation over episodes.
#pragma once

#include <functional>
#include <mutex>
#include <unordered_map>

#include "xvad/encoder.hpp"
#include "xvad/mcpm.hpp"
#include "xvad/synthdata.hpp"

namespace xvad {

struct EpisodeConfig {
    int n_way = 2;  // fixed by the protocol
    int k_shots = 5;
    int q_queries = 15;
    int n_episodes = 200;
    std::string type_filter = "all";
    uint64_t seed = 0;
};

struct MetaTestPool {
    std::vector<ManifestEntry> normals;
    std::vector<ManifestEntry> abnormals;  // filtered by anomaly type
    std::string type_filter = "all";
};

// All normal videos plus abnormal videos of the filtered type ("all" keeps
// every type). Throws data_error for a type absent from the manifest.
MetaTestPool build_meta_test_pool(const DatasetManifest& normals,
                                  const DatasetManifest& abnormals,
                                  const std::string& type_filter);

// Pool must hold at least k_shots + q_queries videos per class.
void validate_pool(const MetaTestPool& pool, const EpisodeConfig& cfg);

struct Episode {
    std::vector<size_t> support_normal, query_normal;      // indices into pool.normals
    std::vector<size_t> support_abnormal, query_abnormal;  // indices into pool.abnormals
    uint64_t stream = 0;  // per-episode seed for clip draws and initialization
    int64_t index = 0;
};

// Uniform without replacement within each class; deterministic in
// (cfg.seed, episode_index) and independent of evaluation order.
Episode sample_episode(const MetaTestPool& pool, const EpisodeConfig& cfg,
                       int64_t episode_index);

struct EvalResult {
    std::vector<double> per_episode_accuracy;
    double mean = 0;
    double stddev = 0;  // sample standard deviation (n-1)
    nlohmann::json config_echo;
};

EvalResult make_eval_result(std::vector<double> per_episode, nlohmann::json config_echo);
void save_eval_result(const std::filesystem::path& path, const EvalResult& r);

// ---------------------------------------------------------------------------
// Episode runner: evaluates an arbitrary per-episode classifier. The
// classifier returns predicted labels for the episode's queries in pool
// order (query normals first, then query abnormals). Episodes may run in
// parallel; the result list is ordered by episode index.
// ---------------------------------------------------------------------------
using EpisodeClassifier =
    std::function<std::vector<int64_t>(const Episode&)>;

EvalResult run_episodes(const MetaTestPool& pool, const EpisodeConfig& cfg, int jobs,
                        const EpisodeClassifier& classify_queries);

// ---------------------------------------------------------------------------
// Feature store: memoized encoder outputs for a fixed (encoder, protocol).
// Values are independent of evaluation order, so caching does not affect
// determinism. Thread-safe.
// ---------------------------------------------------------------------------
class VideoFeatureStore {
public:
    VideoFeatureStore(const Encoder& enc, McpmConfig protocol)
        : enc_(enc), protocol_(protocol) {}

    // [L, d] node features of the stride cover (wrap rule applied).
    Tensor sequence_features(const ManifestEntry& entry);
    // Feature of the single clip at `start` (protocol clip length, rate 1).
    Tensor clip_feature(const ManifestEntry& entry, int64_t start);
    Tensor middlemost_feature(const ManifestEntry& entry);
    int64_t n_frames(const ManifestEntry& entry);
    const Encoder& encoder() const { return enc_; }
    const McpmConfig& protocol() const { return protocol_; }

private:
    const TensorU8& frames(const ManifestEntry& entry);

    const Encoder& enc_;
    McpmConfig protocol_;
    std::mutex mutex_;
    std::unordered_map<std::string, TensorU8> frames_cache_;
    std::unordered_map<std::string, Tensor> sequence_cache_;
    std::unordered_map<std::string, Tensor> clip_cache_;  // key path#start
};

// ---------------------------------------------------------------------------
// Pipeline evaluation: per episode, train the graph module and head on the
// support set (encoder frozen), classify queries with forward_video.
// ---------------------------------------------------------------------------
EvalResult evaluate_pipeline(const Encoder& enc, const MetaTestPool& pool,
                             const EpisodeConfig& cfg, const McpmConfig& mcpm, int jobs);

// ---------------------------------------------------------------------------
// Head-only baseline: frozen encoder, per-episode classifier head trained on
// one random clip per support video, queries scored on their middlemost clip.
// ---------------------------------------------------------------------------
struct HeadOnlyConfig {
    HeadKind kind = HeadKind::cosine;
    real temperature = 10;
    real lr = 0.05;
    int epochs = 100;  // full-batch steps on the support features
    real momentum = 0.9;
    int clip_len = 8;
    int frame_rate = 1;
};

EvalResult baseline_head_only(const Encoder& enc, const MetaTestPool& pool,
                              const EpisodeConfig& cfg, const HeadOnlyConfig& head_cfg,
                              int jobs);

// ---------------------------------------------------------------------------
// One-class hypersphere baseline: center is the mean encoded middlemost clip
// of the normal training videos, score is squared distance to the center,
// radius is tuned by sweeping midpoints of the sorted validation scores.
// ---------------------------------------------------------------------------
struct LabeledVideoSet {
    std::vector<ManifestEntry> entries;
    std::vector<int64_t> labels;  // 0 normal, 1 abnormal
};

struct OneClassResult {
    Tensor center;
    double threshold = 0;             // squared-distance radius
    double validation_accuracy = 0;   // plain accuracy on the validation set
    double test_accuracy = 0;         // balanced accuracy on the test set
};

OneClassResult baseline_one_class(const Encoder& enc, const DatasetManifest& train_normals,
                                  const LabeledVideoSet& validation, const LabeledVideoSet& test,
                                  int clip_len, int frame_rate);

// Threshold selection on (score, label) pairs; exposed for the oracle test.
// Returns the accuracy-maximizing midpoint (smallest such on ties).
std::pair<double, double> best_midpoint_threshold(const std::vector<double>& scores,
                                                  const std::vector<int64_t>& labels);

// ---------------------------------------------------------------------------
// Feature export: one row per video (middlemost clip feature) written as a
// tensor file plus a JSON sidecar with labels, anomaly types, and paths.
// ---------------------------------------------------------------------------
void export_features(const Encoder& enc, const DatasetManifest& dataset,
                     const std::filesystem::path& out_tensor, int clip_len, int frame_rate);

}  // namespace xvad
