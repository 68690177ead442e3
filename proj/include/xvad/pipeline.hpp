// pipeline.hpp - Stage orchestration behind the CLI subcommands.
#pragma once

#include "xvad/config.hpp"
#include "xvad/report.hpp"

namespace xvad {

struct PipelineData {
    DatasetManifest source;
    DatasetManifest target_normal;
    DatasetManifest target_abnormal;
};

// Writes both corpora under cfg.data.dir (idempotent for a fixed seed).
void generate_data(const ExperimentConfig& cfg);

// Loads the three manifests; throws data_error when gen-data has not run.
PipelineData load_pipeline_data(const ExperimentConfig& cfg);

// Stage 1: supervised pretraining when enabled, otherwise a seed-derived
// random initialization.
Encoder make_initial_encoder(const ExperimentConfig& cfg, const PipelineData& data,
                             TrainLog* log = nullptr);

// Stage 2: contrastive adaptation (in place) on the given normal manifest.
TrainLog run_adaptation(const ExperimentConfig& cfg, Encoder& enc,
                        const DatasetManifest& normals);

// Stage 3: one EvalResult per type filter for the configured variant.
EvalResult evaluate_variant(const ExperimentConfig& cfg, const Encoder& enc,
                            const PipelineData& data, const std::string& type_filter);

// Full run: stages per the ablation flags; writes report.json, results.csv,
// checkpoints, and a timing sidecar under cfg.output_dir. Returns the report.
nlohmann::json run_experiment(const ExperimentConfig& cfg, bool verbose);

// Deep SVDD style evaluation: center fit on the target normals, radius tuned
// on a sibling-seed validation corpus (generated under data.dir), balanced
// accuracy on the filtered test pool.
nlohmann::json one_class_eval(const ExperimentConfig& cfg, const Encoder& enc,
                              const std::string& type_filter);

}  // namespace xvad
