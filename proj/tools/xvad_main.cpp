// xvad - synthetic cross-domain few-shot video anomaly detection toolkit.
//
// Subcommands: gen-data, pretrain, adapt, meta-test, run, export-features,
// report. Exit codes: 0 success, 2 config error, 3 data error, 4 numeric
// failure, 1 anything else.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "xvad/errors.hpp"
#include "xvad/pipeline.hpp"

namespace fs = std::filesystem;
using namespace xvad;

namespace {

struct GlobalArgs {
    std::string config_file;
    std::vector<std::string> overrides;
    int jobs = 0;  // 0: take from config
};

ExperimentConfig resolve_config(const GlobalArgs& args) {
    nlohmann::json merged = default_config_json();
    if (!args.config_file.empty()) {
        merged = merge_config(merged, load_config_file(args.config_file));
    }
    for (const std::string& spec : args.overrides) apply_override(merged, spec);
    ExperimentConfig cfg = parse_experiment_config(merged);
    if (args.jobs > 0) cfg.jobs = args.jobs;
    return cfg;
}

Encoder load_encoder_arg(const std::string& path, const ExperimentConfig& cfg,
                         const char* fallback) {
    const fs::path p = path.empty() ? fs::path(cfg.output_dir) / fallback : fs::path(path);
    return load_encoder(p);
}

int do_meta_test(const ExperimentConfig& cfg, const std::string& encoder_path,
                 const std::string& method) {
    const Encoder enc = load_encoder_arg(encoder_path, cfg, "encoder_adapted");
    const fs::path out_dir = fs::path(cfg.output_dir) / "evals";
    fs::create_directories(out_dir);

    nlohmann::json results = nlohmann::json::object();
    for (const std::string& filter : cfg.type_filters) {
        if (method == "one_class") {
            const nlohmann::json r = one_class_eval(cfg, enc, filter);
            std::ofstream out(out_dir / ("one_class_" + filter + ".json"), std::ios::trunc);
            out << r.dump(2) << "\n";
            std::cout << "one_class " << filter << ": accuracy "
                      << r.at("test_accuracy").get<double>() << "\n";
            continue;
        }
        const PipelineData data = load_pipeline_data(cfg);
        ExperimentConfig variant = cfg;
        if (method == "mcpm") {
            variant.ablation.use_mcpm = true;
        } else if (method == "head_fc" || method == "head_cosine") {
            variant.ablation.use_mcpm = false;
            variant.head_only.kind = method == "head_fc" ? HeadKind::fc : HeadKind::cosine;
        } else {
            throw config_error("unknown meta-test method: " + method);
        }
        const EvalResult r = evaluate_variant(variant, enc, data, filter);
        save_eval_result(out_dir / (method + "_" + filter + ".json"), r);
        results[method][filter] = {{"mean", r.mean},
                                   {"std", r.stddev},
                                   {"per_episode", r.per_episode_accuracy}};
        std::cout << method << " " << filter << ": " << format_mean_std(r.mean, r.stddev)
                  << "\n";
    }
    if (!results.empty()) {
        write_results_csv(out_dir / "results.csv", results);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic cross-domain few-shot video anomaly detection toolkit"};
    app.require_subcommand(1);

    GlobalArgs g;
    app.add_option("--config", g.config_file, "experiment config JSON file");
    app.add_option("--set", g.overrides, "override config values (section.key=value)")
        ->take_all();
    app.add_option("--jobs", g.jobs, "worker threads for batch and episode parallelism");

    auto* cmd_gen = app.add_subcommand("gen-data", "generate the synthetic corpora");
    auto* cmd_pre = app.add_subcommand("pretrain", "supervised source-domain pretraining");
    auto* cmd_adapt = app.add_subcommand("adapt", "contrastive adaptation on normal videos");
    std::string adapt_encoder_path, adapt_dataset;
    cmd_adapt->add_option("--encoder", adapt_encoder_path,
                          "encoder checkpoint directory (default: <output_dir>/encoder_source)");
    cmd_adapt->add_option("--dataset", adapt_dataset,
                          "normal-video manifest to adapt on (default: the configured corpus)");
    auto* cmd_meta = app.add_subcommand("meta-test", "episodic evaluation of a trained encoder");
    std::string meta_encoder_path, meta_method = "mcpm";
    cmd_meta->add_option("--encoder", meta_encoder_path,
                         "encoder checkpoint directory (default: <output_dir>/encoder_adapted)");
    cmd_meta->add_option("--method", meta_method, "mcpm | head_fc | head_cosine | one_class");
    auto* cmd_run = app.add_subcommand("run", "full pipeline per the ablation flags");
    auto* cmd_export = app.add_subcommand("export-features", "write per-video features");
    std::string export_encoder_path, export_dataset, export_out;
    cmd_export->add_option("--encoder", export_encoder_path, "encoder checkpoint directory");
    cmd_export->add_option("--dataset", export_dataset, "manifest to encode")->required();
    cmd_export->add_option("--out", export_out, "output tensor path")->required();
    auto* cmd_report = app.add_subcommand("report", "aggregate run reports");
    std::vector<std::string> report_dirs;
    std::string report_out = "report_out";
    cmd_report->add_option("runs", report_dirs, "run directories")->required();
    cmd_report->add_option("--out", report_out, "output directory");

    try {
        app.parse(argc, argv);
        const ExperimentConfig cfg = resolve_config(g);

        if (cmd_gen->parsed()) {
            generate_data(cfg);
            std::cout << "generated corpora under " << cfg.data.dir << "\n";
            return 0;
        }
        if (cmd_pre->parsed()) {
            const PipelineData data = load_pipeline_data(cfg);
            ExperimentConfig pcfg = cfg;
            pcfg.ablation.use_pretrain = true;
            TrainLog log;
            const Encoder enc = make_initial_encoder(pcfg, data, &log);
            save_encoder(fs::path(cfg.output_dir) / "encoder_source", enc);
            std::cout << "pretrained encoder saved; final train accuracy "
                      << (log.epoch_accuracy.empty() ? 0.0 : log.epoch_accuracy.back()) << "\n";
            return 0;
        }
        if (cmd_adapt->parsed()) {
            Encoder enc = load_encoder_arg(adapt_encoder_path, cfg, "encoder_source");
            const DatasetManifest normals =
                adapt_dataset.empty()
                    ? load_manifest(fs::path(cfg.data.dir) / "target_normal_manifest.json")
                    : load_manifest(adapt_dataset);
            const TrainLog log = run_adaptation(cfg, enc, normals);
            save_encoder(fs::path(cfg.output_dir) / "encoder_adapted", enc);
            std::cout << "adapted encoder saved; loss " << log.epoch_loss.front() << " -> "
                      << log.epoch_loss.back() << "\n";
            return 0;
        }
        if (cmd_meta->parsed()) {
            return do_meta_test(cfg, meta_encoder_path, meta_method);
        }
        if (cmd_run->parsed()) {
            run_experiment(cfg, /*verbose=*/true);
            std::cout << "report written to " << cfg.output_dir << "/report.json\n";
            return 0;
        }
        if (cmd_export->parsed()) {
            const Encoder enc = load_encoder_arg(export_encoder_path, cfg, "encoder_adapted");
            const DatasetManifest ds = load_manifest(export_dataset);
            export_features(enc, ds, export_out, cfg.encoder.clip_len, 1);
            std::cout << "features written to " << export_out << "\n";
            return 0;
        }
        if (cmd_report->parsed()) {
            std::vector<fs::path> dirs(report_dirs.begin(), report_dirs.end());
            write_comparison(dirs, report_out);
            std::cout << "comparison written to " << report_out << "\n";
            return 0;
        }
        return 0;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << "error: usage: " << e.what() << "\n";
        return 2;
    } catch (const config_error& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return 2;
    } catch (const numeric_error& e) {
        std::cerr << "error: numeric: " << e.what() << "\n";
        return 4;
    } catch (const data_error& e) {
        std::cerr << "error: data: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
}
