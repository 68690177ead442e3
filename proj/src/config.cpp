#include "xvad/config.hpp"

#include <fstream>

#include "xvad/errors.hpp"

namespace xvad {

nlohmann::json default_config_json() {
    return nlohmann::json{
        {"seed", 7},
        {"output_dir", "runs/default"},
        {"jobs", 1},
        {"data",
         {{"dir", "data/default"},
          {"source",
           {{"n_classes", 6},
            {"n_per_class", 15},
            {"height", 32},
            {"width", 32},
            {"min_frames", 24},
            {"max_frames", 48},
            {"min_sprites", 2},
            {"max_sprites", 4},
            {"noise_std", 0.02},
            {"sprite_min_radius", 1.4},
            {"sprite_max_radius", 2.0},
            {"speed_min", 1.2},
            {"speed_max", 2.4},
            {"background", 0.2},
            {"heading_drift_max", 0.0},
            {"speed_wobble_depth", 0.35},
            {"speed_wobble_period", 18.0}}},
          {"target",
           {{"anomaly_types", {"stop", "reverse"}},
            {"n_normal", 100},
            {"n_per_type", 20},
            {"height", 32},
            {"width", 32},
            {"min_frames", 28},
            {"max_frames", 60},
            {"min_sprites", 1},
            {"max_sprites", 3},
            {"noise_std", 0.04},
            {"sprite_min_radius", 2.4},
            {"sprite_max_radius", 3.4},
            {"speed_min", 0.8},
            {"speed_max", 1.6},
            {"background", 0.42},
            {"heading_drift_max", 0.0},
            {"speed_wobble_depth", 0.35},
            {"speed_wobble_period", 18.0},
            {"event_min_frac", 0.3},
            {"event_max_frac", 0.5}}}}},
        {"encoder", {{"widths", {8, 16, 32}}, {"feature_dim", 64}, {"clip_len", 8}}},
        {"pretrain",
         {{"epochs", 30},
          {"batch_size", 8},
          {"lr", 0.01},
          {"momentum", 0.9},
          {"frame_rate", 1},
          {"head", "fc"}}},
        {"dam",
         {{"epochs", 15},
          {"batch_size", 8},
          {"bank_capacity", 256},
          {"lr", 0.003},
          {"freeze_blocks", 1},
          {"momentum", 0.9},
          {"frame_rate", 1},
          {"parent_slack", 4},
          {"max_rotation_deg", 15.0},
          {"min_crop_scale", 0.9},
          {"max_intensity_jitter", 0.2}}},
        {"mcpm",
         {{"d_g", 32},
          {"k", 3},
          {"clip_len", 8},
          {"stride", 4},
          {"min_len", 20},
          {"max_len", 124},
          {"lr", 0.001},
          {"batch_size", 4},
          {"epochs", 60},
          {"momentum", 0.9},
          {"head", "cosine"},
          {"temperature", 10.0}}},
        {"episodes",
         {{"n_way", 2},
          {"k_shots", 5},
          {"q_queries", 15},
          {"n_episodes", 200},
          {"type_filters", {"all"}},
          {"head_lr", 0.05},
          {"head_epochs", 100},
          {"head_momentum", 0.9},
          {"head_kind", "cosine"},
          {"head_temperature", 10.0}}},
        {"ablation", {{"use_pretrain", true}, {"use_dam", true}, {"use_mcpm", true}}}};
}

nlohmann::json merge_config(const nlohmann::json& base, const nlohmann::json& user) {
    if (!user.is_object() || !base.is_object()) {
        throw config_error("config sections must be JSON objects");
    }
    nlohmann::json out = base;
    for (auto it = user.begin(); it != user.end(); ++it) {
        if (!base.contains(it.key())) {
            throw config_error("unknown config key: " + it.key());
        }
        const nlohmann::json& bv = base.at(it.key());
        if (bv.is_object()) {
            out[it.key()] = merge_config(bv, it.value());
        } else {
            const nlohmann::json& uv = it.value();
            const bool compatible = (bv.is_number() && uv.is_number()) ||
                                    (bv.is_string() && uv.is_string()) ||
                                    (bv.is_boolean() && uv.is_boolean()) ||
                                    (bv.is_array() && uv.is_array());
            if (!compatible) {
                throw config_error("config key has the wrong type: " + it.key());
            }
            out[it.key()] = uv;
        }
    }
    return out;
}

void apply_override(nlohmann::json& config, const std::string& spec) {
    const size_t eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw config_error("override must look like section.key=value: " + spec);
    }
    const std::string path = spec.substr(0, eq);
    const std::string value_str = spec.substr(eq + 1);

    nlohmann::json value;
    try {
        value = nlohmann::json::parse(value_str);
    } catch (const nlohmann::json::exception&) {
        value = value_str;  // plain string
    }

    nlohmann::json* node = &config;
    size_t begin = 0;
    for (;;) {
        const size_t dot = path.find('.', begin);
        const std::string key = path.substr(begin, dot == std::string::npos ? dot : dot - begin);
        if (key.empty()) throw config_error("override has an empty path segment: " + spec);
        if (!node->contains(key)) throw config_error("unknown config key: " + path);
        if (dot == std::string::npos) {
            if ((*node)[key].is_object()) {
                throw config_error("override path names a section, not a key: " + path);
            }
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        begin = dot + 1;
    }
}

nlohmann::json load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file: " + path.string());
    try {
        nlohmann::json j;
        in >> j;
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw config_error("config file is not valid JSON: " + std::string(e.what()));
    }
}

namespace {

VideoConfig parse_video_config(const nlohmann::json& j) {
    VideoConfig v;
    v.height = j.at("height").get<int>();
    v.width = j.at("width").get<int>();
    v.min_frames = j.at("min_frames").get<int>();
    v.max_frames = j.at("max_frames").get<int>();
    v.min_sprites = j.at("min_sprites").get<int>();
    v.max_sprites = j.at("max_sprites").get<int>();
    v.noise_std = j.at("noise_std").get<double>();
    v.sprite_min_radius = j.at("sprite_min_radius").get<double>();
    v.sprite_max_radius = j.at("sprite_max_radius").get<double>();
    v.speed_min = j.at("speed_min").get<double>();
    v.speed_max = j.at("speed_max").get<double>();
    v.background = j.at("background").get<double>();
    if (j.contains("event_min_frac")) v.event_min_frac = j.at("event_min_frac").get<double>();
    if (j.contains("event_max_frac")) v.event_max_frac = j.at("event_max_frac").get<double>();
    if (j.contains("heading_drift_max")) {
        v.heading_drift_max = j.at("heading_drift_max").get<double>();
    }
    if (j.contains("speed_wobble_depth")) {
        v.speed_wobble_depth = j.at("speed_wobble_depth").get<double>();
    }
    if (j.contains("speed_wobble_period")) {
        v.speed_wobble_period = j.at("speed_wobble_period").get<double>();
    }
    v.validate();
    return v;
}

HeadKind parse_head_kind(const std::string& s) {
    if (s == "fc") return HeadKind::fc;
    if (s == "cosine") return HeadKind::cosine;
    throw config_error("head kind must be 'fc' or 'cosine', got: " + s);
}

}  // namespace

std::string ExperimentConfig::variant_name() const {
    std::string name = ablation.use_pretrain ? "pretrain" : "scratch";
    if (ablation.use_dam) name += "+dam";
    name += ablation.use_mcpm ? "+mcpm" : "+head";
    return name;
}

ExperimentConfig parse_experiment_config(const nlohmann::json& merged) {
    ExperimentConfig c;
    c.resolved = merged;
    try {
        c.seed = merged.at("seed").get<uint64_t>();
        c.output_dir = merged.at("output_dir").get<std::string>();
        c.jobs = merged.at("jobs").get<int>();
        if (c.jobs < 1) throw config_error("jobs must be >= 1");

        const auto& jd = merged.at("data");
        c.data.dir = jd.at("dir").get<std::string>();
        c.data.source_video = parse_video_config(jd.at("source"));
        c.data.target_video = parse_video_config(jd.at("target"));
        c.data.n_classes = jd.at("source").at("n_classes").get<int>();
        c.data.n_per_class = jd.at("source").at("n_per_class").get<int>();
        c.data.n_normal = jd.at("target").at("n_normal").get<int>();
        c.data.n_per_type = jd.at("target").at("n_per_type").get<int>();
        c.data.anomaly_types =
            jd.at("target").at("anomaly_types").get<std::vector<std::string>>();

        const auto& je = merged.at("encoder");
        c.encoder.widths = je.at("widths").get<std::vector<int>>();
        c.encoder.feature_dim = je.at("feature_dim").get<int>();
        c.encoder.clip_len = je.at("clip_len").get<int>();
        c.encoder.height = c.data.target_video.height;
        c.encoder.width = c.data.target_video.width;
        c.encoder.channels = c.data.target_video.channels;
        if (c.data.source_video.height != c.data.target_video.height ||
            c.data.source_video.width != c.data.target_video.width) {
            throw config_error("source and target frame sizes must match for a shared encoder");
        }
        if (c.encoder.widths.empty() || c.encoder.feature_dim < 1) {
            throw config_error("encoder widths and feature_dim must be positive");
        }

        const auto& jp = merged.at("pretrain");
        c.pretrain.epochs = jp.at("epochs").get<int>();
        c.pretrain.batch_size = jp.at("batch_size").get<int>();
        c.pretrain.lr = jp.at("lr").get<real>();
        c.pretrain.momentum = jp.at("momentum").get<real>();
        c.pretrain.frame_rate = jp.at("frame_rate").get<int>();
        c.pretrain.clip_len = c.encoder.clip_len;
        c.pretrain_head = parse_head_kind(jp.at("head").get<std::string>());

        const auto& jdam = merged.at("dam");
        c.dam.epochs = jdam.at("epochs").get<int>();
        c.dam.batch_size = jdam.at("batch_size").get<int>();
        c.dam.bank_capacity = jdam.at("bank_capacity").get<size_t>();
        c.dam.freeze_blocks = jdam.at("freeze_blocks").get<int>();
        c.dam.lr = jdam.at("lr").get<real>();
        c.dam.momentum = jdam.at("momentum").get<real>();
        c.dam.triplet.clip_len = c.encoder.clip_len;
        c.dam.triplet.frame_rate = jdam.at("frame_rate").get<int>();
        c.dam.triplet.parent_slack = jdam.at("parent_slack").get<int>();
        c.dam.triplet.aug.max_rotation_deg = jdam.at("max_rotation_deg").get<real>();
        c.dam.triplet.aug.min_crop_scale = jdam.at("min_crop_scale").get<real>();
        c.dam.triplet.aug.max_intensity_jitter = jdam.at("max_intensity_jitter").get<real>();

        const auto& jm = merged.at("mcpm");
        c.mcpm.d_g = jm.at("d_g").get<int>();
        c.mcpm.k = jm.at("k").get<int>();
        c.mcpm.clip_len = jm.at("clip_len").get<int>();
        c.mcpm.stride = jm.at("stride").get<int>();
        c.mcpm.min_len = jm.at("min_len").get<int>();
        c.mcpm.max_len = jm.at("max_len").get<int>();
        c.mcpm.lr = jm.at("lr").get<real>();
        c.mcpm.batch_size = jm.at("batch_size").get<int>();
        c.mcpm.epochs = jm.at("epochs").get<int>();
        c.mcpm.momentum = jm.at("momentum").get<real>();
        c.mcpm.head_kind = parse_head_kind(jm.at("head").get<std::string>());
        c.mcpm.head_temperature = jm.at("temperature").get<real>();
        if (c.mcpm.min_len < c.mcpm.clip_len) {
            throw config_error("mcpm.min_len must be >= mcpm.clip_len");
        }

        const auto& jep = merged.at("episodes");
        c.episodes.n_way = jep.at("n_way").get<int>();
        c.episodes.k_shots = jep.at("k_shots").get<int>();
        c.episodes.q_queries = jep.at("q_queries").get<int>();
        c.episodes.n_episodes = jep.at("n_episodes").get<int>();
        c.episodes.seed = c.seed;
        c.type_filters = jep.at("type_filters").get<std::vector<std::string>>();
        if (c.type_filters.empty()) throw config_error("episodes.type_filters must be non-empty");
        c.head_only.kind = parse_head_kind(jep.at("head_kind").get<std::string>());
        c.head_only.temperature = jep.at("head_temperature").get<real>();
        c.head_only.lr = jep.at("head_lr").get<real>();
        c.head_only.epochs = jep.at("head_epochs").get<int>();
        c.head_only.momentum = jep.at("head_momentum").get<real>();
        c.head_only.clip_len = c.encoder.clip_len;

        const auto& ja = merged.at("ablation");
        c.ablation.use_pretrain = ja.at("use_pretrain").get<bool>();
        c.ablation.use_dam = ja.at("use_dam").get<bool>();
        c.ablation.use_mcpm = ja.at("use_mcpm").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw config_error("malformed config: " + std::string(e.what()));
    }
    return c;
}

}  // namespace xvad
