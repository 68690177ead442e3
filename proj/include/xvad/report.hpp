// report.hpp - Run reports, result tables, and the comparison chart.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace xvad {

// Static description of the build and active kernels (no timestamps; the
// report must be byte-identical across reruns).
nlohmann::json environment_echo();

// "0.81±0.08" with two decimals.
std::string format_mean_std(double mean, double stddev);

// report.json layout:
// { "config": {...}, "environment": {...},
//   "results": { "<variant>": { "<filter>": {mean, std, per_episode, config} } } }
void write_run_report(const std::filesystem::path& dir, const nlohmann::json& report);
nlohmann::json load_run_report(const std::filesystem::path& dir);

// One CSV row per (method, type_filter).
void write_results_csv(const std::filesystem::path& path, const nlohmann::json& results);

// Aggregates several run reports into a comparison table (rows = variants,
// columns = type filters, cells = "mean±std") and a bar-chart image.
// Throws data_error when the runs' episode protocols differ.
void write_comparison(const std::vector<std::filesystem::path>& run_dirs,
                      const std::filesystem::path& out_dir);

// Minimal RGB PNG writer.
void write_png_rgb(const std::filesystem::path& path, int width, int height,
                   const std::vector<uint8_t>& rgb);

}  // namespace xvad
