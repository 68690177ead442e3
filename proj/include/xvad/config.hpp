// config.hpp - Experiment configuration: canonical JSON defaults, strict
// deep-merge of user files, dotted-path overrides, and the typed view the
// pipeline stages consume.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xvad/dam.hpp"
#include "xvad/encoder.hpp"
#include "xvad/episodes.hpp"
#include "xvad/mcpm.hpp"
#include "xvad/synthdata.hpp"

namespace xvad {

// Canonical defaults; every recognized key appears here.
nlohmann::json default_config_json();

// Overlays `user` on `base`; throws config_error on keys absent from the
// defaults or on type mismatches. Arrays and scalars replace wholesale.
nlohmann::json merge_config(const nlohmann::json& base, const nlohmann::json& user);

// Applies one "--set section.key=value" override. The value is parsed as
// JSON when possible, otherwise taken as a string.
void apply_override(nlohmann::json& config, const std::string& spec);

nlohmann::json load_config_file(const std::filesystem::path& path);

struct ExperimentConfig {
    uint64_t seed = 7;
    std::string output_dir = "runs/default";
    int jobs = 1;

    struct Data {
        std::string dir = "data/default";
        VideoConfig source_video;
        VideoConfig target_video;
        int n_classes = 4;
        int n_per_class = 15;
        int n_normal = 100;
        int n_per_type = 20;
        std::vector<std::string> anomaly_types = {"stop", "reverse"};
    } data;

    EncoderConfig encoder;
    PretrainConfig pretrain;
    HeadKind pretrain_head = HeadKind::fc;
    AdaptConfig dam;
    McpmConfig mcpm;
    EpisodeConfig episodes;
    std::vector<std::string> type_filters = {"all"};
    HeadOnlyConfig head_only;

    struct Ablation {
        bool use_pretrain = true;
        bool use_dam = true;
        bool use_mcpm = true;
    } ablation;

    nlohmann::json resolved;  // the merged JSON this config was parsed from

    // Variant label derived from the ablation flags, e.g. "pretrain+dam+mcpm".
    std::string variant_name() const;
};

// Parses and validates the merged JSON; throws config_error on bad values.
ExperimentConfig parse_experiment_config(const nlohmann::json& merged);

}  // namespace xvad
