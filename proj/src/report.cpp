#include "xvad/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "chart_font.hpp"
#include "xvad/errors.hpp"
#include "xvad/kernels.hpp"
#include "xvad/real.hpp"

namespace fs = std::filesystem;

namespace xvad {

nlohmann::json environment_echo() {
    return {{"precision", real_name()},
            {"kernels", kern::backend_name()},
            {"version", "0.1.0"}};
}

std::string format_mean_std(double mean, double stddev) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.2f\xC2\xB1%.2f", mean, stddev);
    return buf;
}

void write_run_report(const fs::path& dir, const nlohmann::json& report) {
    fs::create_directories(dir);
    std::ofstream out(dir / "report.json", std::ios::trunc);
    if (!out) throw data_error("cannot write report: " + (dir / "report.json").string());
    out << report.dump(2) << "\n";
}

nlohmann::json load_run_report(const fs::path& dir) {
    std::ifstream in(dir / "report.json");
    if (!in) throw data_error("cannot open report: " + (dir / "report.json").string());
    try {
        nlohmann::json j;
        in >> j;
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw data_error("report is not valid JSON: " + std::string(e.what()));
    }
}

void write_results_csv(const fs::path& path, const nlohmann::json& results) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw data_error("cannot write csv: " + path.string());
    out << "method,type_filter,mean,std,n_episodes\n";
    for (auto vit = results.begin(); vit != results.end(); ++vit) {
        for (auto fit = vit.value().begin(); fit != vit.value().end(); ++fit) {
            const auto& cell = fit.value();
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%.6f,%.6f", cell.at("mean").get<double>(),
                          cell.at("std").get<double>());
            out << vit.key() << "," << fit.key() << "," << buf << ","
                << cell.at("per_episode").size() << "\n";
        }
    }
}

// ---------------------------------------------------------------------------
// Chart rendering
// ---------------------------------------------------------------------------

namespace {

struct Canvas {
    int w, h;
    std::vector<uint8_t> px;

    Canvas(int width, int height) : w(width), h(height), px(static_cast<size_t>(w) * h * 3, 255) {}

    void set(int x, int y, uint8_t r, uint8_t g, uint8_t b) {
        if (x < 0 || y < 0 || x >= w || y >= h) return;
        const size_t i = (static_cast<size_t>(y) * w + x) * 3;
        px[i] = r;
        px[i + 1] = g;
        px[i + 2] = b;
    }

    void fill_rect(int x0, int y0, int x1, int y1, uint8_t r, uint8_t g, uint8_t b) {
        for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) set(x, y, r, g, b);
        }
    }

    void text(int x, int y, const std::string& s, int scale, uint8_t r, uint8_t g, uint8_t b) {
        int cx = x;
        for (char c : s) {
            const chart_font::Glyph* glyph = chart_font::find_glyph(c);
            if (!glyph) glyph = chart_font::find_glyph('_');
            for (int gy = 0; gy < 7; ++gy) {
                for (int gx = 0; gx < 5; ++gx) {
                    if (glyph->rows[static_cast<size_t>(gy)][static_cast<size_t>(gx)] != '#') {
                        continue;
                    }
                    fill_rect(cx + gx * scale, y + gy * scale, cx + (gx + 1) * scale,
                              y + (gy + 1) * scale, r, g, b);
                }
            }
            cx += 6 * scale;
        }
    }
};

struct Rgb {
    uint8_t r, g, b;
};

constexpr Rgb kPalette[] = {{70, 120, 180}, {230, 140, 40}, {80, 160, 80},
                            {200, 70, 70},  {140, 90, 170}, {90, 90, 90}};

}  // namespace

void write_comparison(const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
    if (run_dirs.empty()) throw data_error("report: no run directories given");
    struct Cell {
        double mean, stddev;
    };
    std::vector<std::string> variants;
    std::set<std::string> filter_set;
    std::map<std::string, std::map<std::string, Cell>> table;
    nlohmann::json protocol;

    for (const fs::path& dir : run_dirs) {
        const nlohmann::json rep = load_run_report(dir);
        const nlohmann::json& ep = rep.at("config").at("episodes");
        nlohmann::json proto = {{"k_shots", ep.at("k_shots")},
                                {"q_queries", ep.at("q_queries")},
                                {"n_episodes", ep.at("n_episodes")}};
        if (protocol.is_null()) protocol = proto;
        else if (protocol != proto) {
            throw data_error("report: runs use incompatible episode protocols");
        }
        for (auto vit = rep.at("results").begin(); vit != rep.at("results").end(); ++vit) {
            if (!table.count(vit.key())) variants.push_back(vit.key());
            for (auto fit = vit.value().begin(); fit != vit.value().end(); ++fit) {
                filter_set.insert(fit.key());
                table[vit.key()][fit.key()] = {fit.value().at("mean").get<double>(),
                                               fit.value().at("std").get<double>()};
            }
        }
    }
    const std::vector<std::string> filters(filter_set.begin(), filter_set.end());

    fs::create_directories(out_dir);
    std::ofstream csv(out_dir / "table.csv", std::ios::trunc);
    if (!csv) throw data_error("cannot write comparison table");
    csv << "variant";
    for (const auto& f : filters) csv << "," << f;
    csv << "\n";
    for (const auto& v : variants) {
        csv << v;
        for (const auto& f : filters) {
            csv << ",";
            auto it = table[v].find(f);
            if (it != table[v].end()) csv << format_mean_std(it->second.mean, it->second.stddev);
        }
        csv << "\n";
    }
    csv.close();

    // Grouped bar chart: one group per filter, one bar per variant.
    const int nv = static_cast<int>(variants.size());
    const int nf = static_cast<int>(filters.size());
    const int bar_w = 34, bar_gap = 6, group_gap = 40;
    const int margin_l = 70, margin_r = 20, margin_t = 60, margin_b = 60;
    const int group_w = nv * (bar_w + bar_gap) + group_gap;
    const int width = std::max(480, margin_l + nf * group_w + margin_r);
    const int height = 480;
    const int plot_h = height - margin_t - margin_b;
    Canvas canvas(width, height);

    // Axis, gridlines, tick labels.
    for (int tick = 0; tick <= 10; tick += 2) {
        const int y = margin_t + plot_h - plot_h * tick / 10;
        canvas.fill_rect(margin_l, y, width - margin_r, y + 1, 225, 225, 225);
        char lbl[8];
        std::snprintf(lbl, sizeof(lbl), "%.1f", tick / 10.0);
        canvas.text(margin_l - 42, y - 5, lbl, 1, 60, 60, 60);
    }
    canvas.fill_rect(margin_l - 1, margin_t, margin_l, margin_t + plot_h + 1, 40, 40, 40);
    canvas.fill_rect(margin_l - 1, margin_t + plot_h, width - margin_r, margin_t + plot_h + 1, 40,
                     40, 40);

    for (int fi = 0; fi < nf; ++fi) {
        const int gx = margin_l + fi * group_w + group_gap / 2;
        for (int vi = 0; vi < nv; ++vi) {
            auto it = table[variants[static_cast<size_t>(vi)]].find(
                filters[static_cast<size_t>(fi)]);
            if (it == table[variants[static_cast<size_t>(vi)]].end()) continue;
            const double mean = it->second.mean;
            const double stddev = it->second.stddev;
            const Rgb c = kPalette[static_cast<size_t>(vi) % std::size(kPalette)];
            const int x0 = gx + vi * (bar_w + bar_gap);
            const int bh = static_cast<int>(mean * plot_h);
            const int y0 = margin_t + plot_h - bh;
            canvas.fill_rect(x0, y0, x0 + bar_w, margin_t + plot_h, c.r, c.g, c.b);
            // Error bar over +/- one standard deviation.
            const int ey0 = margin_t + plot_h -
                            static_cast<int>(std::min(1.0, mean + stddev) * plot_h);
            const int ey1 = margin_t + plot_h -
                            static_cast<int>(std::max(0.0, mean - stddev) * plot_h);
            canvas.fill_rect(x0 + bar_w / 2, ey0, x0 + bar_w / 2 + 1, ey1, 30, 30, 30);
            char val[8];
            std::snprintf(val, sizeof(val), "%.2f", mean);
            canvas.text(x0 + 2, y0 - 10, val, 1, 30, 30, 30);
        }
        canvas.text(gx, margin_t + plot_h + 8, filters[static_cast<size_t>(fi)], 2, 30, 30, 30);
    }

    // Legend.
    int lx = margin_l;
    for (int vi = 0; vi < nv; ++vi) {
        const Rgb c = kPalette[static_cast<size_t>(vi) % std::size(kPalette)];
        canvas.fill_rect(lx, 18, lx + 12, 30, c.r, c.g, c.b);
        canvas.text(lx + 16, 20, variants[static_cast<size_t>(vi)], 1, 30, 30, 30);
        lx += 16 + 6 * static_cast<int>(variants[static_cast<size_t>(vi)].size()) + 24;
    }

    write_png_rgb(out_dir / "chart.png", width, height, canvas.px);
}

}  // namespace xvad
