#include "xvad/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <iostream>

#include "xvad/errors.hpp"

namespace fs = std::filesystem;

namespace xvad {

namespace {

uint64_t hash_str(const std::string& s) {
    uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

void generate_data(const ExperimentConfig& cfg) {
    const fs::path dir = cfg.data.dir;
    gen_source_dataset(derive_seed(cfg.seed, 0x5c), cfg.data.n_classes, cfg.data.n_per_class,
                       cfg.data.source_video, dir);
    gen_target_dataset(derive_seed(cfg.seed, 0x7a), cfg.data.anomaly_types, cfg.data.n_normal,
                       cfg.data.n_per_type, cfg.data.target_video, dir);
}

PipelineData load_pipeline_data(const ExperimentConfig& cfg) {
    const fs::path dir = cfg.data.dir;
    for (const char* name :
         {"source_manifest.json", "target_normal_manifest.json", "target_abnormal_manifest.json"}) {
        if (!fs::exists(dir / name)) {
            throw data_error("missing manifest " + (dir / name).string() +
                             " (run the gen-data stage first)");
        }
    }
    PipelineData data;
    data.source = load_manifest(dir / "source_manifest.json");
    data.target_normal = load_manifest(dir / "target_normal_manifest.json");
    data.target_abnormal = load_manifest(dir / "target_abnormal_manifest.json");
    return data;
}

Encoder make_initial_encoder(const ExperimentConfig& cfg, const PipelineData& data,
                             TrainLog* log) {
    Encoder enc = Encoder::init(cfg.encoder, derive_seed(cfg.seed, 0x1e));
    if (!cfg.ablation.use_pretrain) return enc;

    ClassifierHead head = ClassifierHead::init(cfg.pretrain_head, cfg.encoder.feature_dim,
                                               cfg.data.n_classes, derive_seed(cfg.seed, 0x1f));
    PretrainConfig pc = cfg.pretrain;
    pc.seed = derive_seed(cfg.seed, 0x20);
    pc.jobs = cfg.jobs;
    TrainLog l = pretrain_source(enc, head, data.source, pc);
    if (log) *log = std::move(l);
    return enc;
}

TrainLog run_adaptation(const ExperimentConfig& cfg, Encoder& enc,
                        const DatasetManifest& normals) {
    AdaptConfig ac = cfg.dam;
    ac.seed = derive_seed(cfg.seed, 0x21);
    ac.jobs = cfg.jobs;
    return adapt_encoder(enc, normals, ac);
}

EvalResult evaluate_variant(const ExperimentConfig& cfg, const Encoder& enc,
                            const PipelineData& data, const std::string& type_filter) {
    const MetaTestPool pool =
        build_meta_test_pool(data.target_normal, data.target_abnormal, type_filter);
    EpisodeConfig ec = cfg.episodes;
    ec.type_filter = type_filter;
    ec.seed = derive_seed(cfg.seed, 0x22, hash_str(type_filter));
    if (cfg.ablation.use_mcpm) {
        return evaluate_pipeline(enc, pool, ec, cfg.mcpm, cfg.jobs);
    }
    return baseline_head_only(enc, pool, ec, cfg.head_only, cfg.jobs);
}

nlohmann::json run_experiment(const ExperimentConfig& cfg, bool verbose) {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path out_dir = cfg.output_dir;
    fs::create_directories(out_dir);
    std::ofstream timings(out_dir / "timings.txt", std::ios::trunc);

    const PipelineData data = load_pipeline_data(cfg);

    TrainLog pretrain_log;
    Encoder enc = make_initial_encoder(cfg, data, &pretrain_log);
    save_encoder(out_dir / "encoder_initial", enc);
    timings << "stage_encoder_s " << seconds_since(t0) << "\n";
    if (verbose) {
        std::cerr << "[run] encoder ready (" << cfg.variant_name() << ")\n";
    }

    if (cfg.ablation.use_dam) {
        const auto t1 = std::chrono::steady_clock::now();
        run_adaptation(cfg, enc, data.target_normal);
        save_encoder(out_dir / "encoder_adapted", enc);
        timings << "stage_adapt_s " << seconds_since(t1) << "\n";
        if (verbose) std::cerr << "[run] adaptation done\n";
    }

    nlohmann::json results = nlohmann::json::object();
    nlohmann::json per_variant = nlohmann::json::object();
    for (const std::string& filter : cfg.type_filters) {
        const auto t2 = std::chrono::steady_clock::now();
        const EvalResult r = evaluate_variant(cfg, enc, data, filter);
        nlohmann::json cell;
        cell["mean"] = r.mean;
        cell["std"] = r.stddev;
        cell["per_episode"] = r.per_episode_accuracy;
        cell["config"] = r.config_echo;
        per_variant[filter] = std::move(cell);
        timings << "eval_" << filter << "_s " << seconds_since(t2) << "\n";
        if (verbose) {
            std::cerr << "[run] " << filter << ": " << format_mean_std(r.mean, r.stddev) << "\n";
        }
    }
    results[cfg.variant_name()] = std::move(per_variant);

    nlohmann::json report;
    report["config"] = cfg.resolved;
    report["environment"] = environment_echo();
    report["results"] = std::move(results);
    write_run_report(out_dir, report);
    write_results_csv(out_dir / "results.csv", report["results"]);
    timings << "total_s " << seconds_since(t0) << "\n";
    return report;
}

nlohmann::json one_class_eval(const ExperimentConfig& cfg, const Encoder& enc,
                              const std::string& type_filter) {
    const PipelineData data = load_pipeline_data(cfg);

    // Validation corpus: a sibling seed with balanced classes, generated on
    // first use under the data directory.
    const fs::path val_dir = fs::path(cfg.data.dir) / "oneclass_val";
    const int types = static_cast<int>(cfg.data.anomaly_types.size());
    if (!fs::exists(val_dir / "target_normal_manifest.json")) {
        gen_target_dataset(derive_seed(cfg.seed, 0x0c1), cfg.data.anomaly_types,
                           cfg.data.n_per_type * types, cfg.data.n_per_type,
                           cfg.data.target_video, val_dir);
    }
    const DatasetManifest val_normal = load_manifest(val_dir / "target_normal_manifest.json");
    const DatasetManifest val_abnormal = load_manifest(val_dir / "target_abnormal_manifest.json");

    auto add_set = [&](LabeledVideoSet& set, const std::vector<ManifestEntry>& entries,
                       int64_t label) {
        for (const auto& e : entries) {
            if (label == 1 && type_filter != "all" && e.anomaly_type != type_filter) continue;
            set.entries.push_back(e);
            set.labels.push_back(label);
        }
    };
    LabeledVideoSet validation;
    add_set(validation, val_normal.entries, 0);
    add_set(validation, val_abnormal.entries, 1);

    // Balanced test set: every filtered abnormal plus an equal count of
    // normals drawn by a seeded shuffle.
    LabeledVideoSet test;
    add_set(test, data.target_abnormal.entries, 1);
    std::vector<size_t> normal_idx(data.target_normal.entries.size());
    for (size_t i = 0; i < normal_idx.size(); ++i) normal_idx[i] = i;
    Rng rng(derive_seed(cfg.seed, 0x0c2, hash_str(type_filter)));
    rng.shuffle(normal_idx);
    const size_t n_abnormal = test.entries.size();
    if (n_abnormal == 0) throw data_error("one-class: no abnormal videos match the filter");
    for (size_t i = 0; i < std::min(n_abnormal, normal_idx.size()); ++i) {
        test.entries.push_back(data.target_normal.entries[normal_idx[i]]);
        test.labels.push_back(0);
    }

    const OneClassResult r = baseline_one_class(enc, data.target_normal, validation, test,
                                                cfg.encoder.clip_len, 1);
    return {{"method", "one_class"},
            {"type_filter", type_filter},
            {"threshold", r.threshold},
            {"validation_accuracy", r.validation_accuracy},
            {"test_accuracy", r.test_accuracy}};
}

}  // namespace xvad
