#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "occdepth/harness.hpp"

namespace occdepth {

namespace detail {

inline std::string fmt(const char* pattern, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, pattern, v);
    return buf;
}

inline std::string html_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

struct Series {
    std::string name;
    std::string color;
    std::vector<double> values;
};

/// Line chart of log10(values) against step.
inline std::string loss_chart(const std::vector<Series>& series, int width = 640, int height = 300) {
    const double left = 50, right = 130, top = 20, bottom = 30;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    std::size_t n = 0;
    for (const auto& s : series) {
        n = std::max(n, s.values.size());
        for (double v : s.values)
            if (v > 0) {
                lo = std::min(lo, std::log10(v));
                hi = std::max(hi, std::log10(v));
            }
    }
    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
                      std::to_string(height) + "\">\n";
    if (n < 2 || !std::isfinite(lo)) return svg + "<text x=\"10\" y=\"20\">no loss records</text>\n</svg>\n";
    lo = std::floor(lo);
    hi = std::max(std::ceil(hi), lo + 1);
    const double pw = width - left - right, ph = height - top - bottom;
    auto x_of = [&](std::size_t i) { return left + pw * static_cast<double>(i) / static_cast<double>(n - 1); };
    auto y_of = [&](double v) { return top + ph * (hi - std::log10(std::max(v, 1e-30))) / (hi - lo); };
    svg += "<rect x=\"" + fmt("%.1f", left) + "\" y=\"" + fmt("%.1f", top) + "\" width=\"" + fmt("%.1f", pw) +
           "\" height=\"" + fmt("%.1f", ph) + "\" fill=\"none\" stroke=\"#888\"/>\n";
    for (double e = lo; e <= hi; e += 1.0)
        svg += "<text x=\"4\" y=\"" + fmt("%.1f", y_of(std::pow(10.0, e)) + 4) + "\" font-size=\"11\">1e" +
               fmt("%.0f", e) + "</text>\n";
    svg += "<text x=\"" + fmt("%.1f", left) + "\" y=\"" + std::to_string(height - 8) +
           "\" font-size=\"11\">step 0</text>\n<text x=\"" + fmt("%.1f", left + pw - 40) + "\" y=\"" +
           std::to_string(height - 8) + "\" font-size=\"11\">step " + std::to_string(n - 1) + "</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        std::string points;
        for (std::size_t i = 0; i < s.values.size(); ++i)
            points += fmt("%.1f", x_of(i)) + "," + fmt("%.1f", y_of(s.values[i])) + " ";
        svg += "<polyline fill=\"none\" stroke-width=\"1\" stroke=\"" + s.color + "\" points=\"" + points + "\"/>\n";
        svg += "<text x=\"" + fmt("%.1f", left + pw + 8) + "\" y=\"" + fmt("%.1f", top + 14.0 * (k + 1)) +
               "\" font-size=\"11\" fill=\"" + s.color + "\">" + html_escape(s.name) + "</text>\n";
    }
    return svg + "</svg>\n";
}

inline std::vector<double> moving_average(const std::vector<double>& v, std::size_t window) {
    std::vector<double> out(v.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        sum += v[i];
        if (i >= window) sum -= v[i - window];
        out[i] = sum / static_cast<double>(std::min(i + 1, window));
    }
    return out;
}

inline std::string iou_bars(const MetricReport& r, const std::vector<std::string>& names, int width = 640) {
    const int row = 22, label = 110;
    const int height = row * static_cast<int>(r.per_class_iou.size() + 2) + 10;
    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
                      std::to_string(height) + "\">\n";
    auto bar = [&](int i, const std::string& name, double v, const char* color) {
        const double w = (width - label - 60) * v;
        const int y = 5 + i * row;
        svg += "<text x=\"4\" y=\"" + std::to_string(y + 15) + "\" font-size=\"12\">" + html_escape(name) + "</text>\n";
        svg += "<rect x=\"" + std::to_string(label) + "\" y=\"" + std::to_string(y + 3) + "\" width=\"" +
               fmt("%.1f", w) + "\" height=\"" + std::to_string(row - 6) + "\" fill=\"" + color + "\"/>\n";
        svg += "<text x=\"" + fmt("%.1f", label + w + 4) + "\" y=\"" + std::to_string(y + 15) + "\" font-size=\"12\">" +
               fmt("%.3f", v) + "</text>\n";
    };
    bar(0, "SC IoU", r.sc_iou, "#555");
    bar(1, "SSC mIoU", r.ssc_miou, "#333");
    int i = 2;
    for (const auto& [c, v] : r.per_class_iou)
        bar(i++, static_cast<std::size_t>(c) < names.size() ? names[c] : "class " + std::to_string(c), v, "#4a7fb0");
    return svg + "</svg>\n";
}

/// Heatmap of a w x D probability slice; rows are depth bins (near at top),
/// columns image cells. `marks` holds a target bin per column (-1 = none).
inline std::string depth_heatmap(const std::vector<std::vector<double>>& probs, const std::vector<int>& marks) {
    const int cell = 18;
    const int cols = static_cast<int>(probs.size());
    const int bins = cols ? static_cast<int>(probs[0].size()) : 0;
    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(cols * cell + 60) +
                      "\" height=\"" + std::to_string(bins * cell + 30) + "\">\n";
    for (int x = 0; x < cols; ++x)
        for (int b = 0; b < bins; ++b) {
            const int shade = 255 - static_cast<int>(std::lround(255.0 * std::clamp(probs[x][b], 0.0, 1.0)));
            char color[16];
            std::snprintf(color, sizeof color, "#%02x%02x%02x", shade, shade, 255);
            svg += "<rect x=\"" + std::to_string(50 + x * cell) + "\" y=\"" + std::to_string(5 + b * cell) +
                   "\" width=\"" + std::to_string(cell) + "\" height=\"" + std::to_string(cell) + "\" fill=\"" + color +
                   "\"/>\n";
            if (marks[x] == b)
                svg += "<circle cx=\"" + std::to_string(50 + x * cell + cell / 2) + "\" cy=\"" +
                       std::to_string(5 + b * cell + cell / 2) + "\" r=\"3\" fill=\"#d33\"/>\n";
        }
    svg += "<text x=\"2\" y=\"16\" font-size=\"11\">near</text>\n<text x=\"2\" y=\"" + std::to_string(bins * cell) +
           "\" font-size=\"11\">far</text>\n";
    return svg + "</svg>\n";
}

template <typename T>
std::string depth_section(const RunInfo& info, const Dataset& data, const std::string& split) {
    const auto& ids = data.split(split);
    if (ids.empty()) return "<p>No samples in split " + html_escape(split) + ".</p>\n";
    TrainConfig config = info.config;
    Pipeline<T> pipe = pipeline_from_checkpoint<T>(info.checkpoint, config);
    // The depth head runs whenever OAD or distillation is on; force it for display.
    PipelineOptions options = pipe.options();
    if (!options.oad && !options.distill) return "<p>Depth head inactive (OAD and distillation both off).</p>\n";
    const SceneSample sample = data.load(ids.front());
    const auto out = pipe.forward(sample);
    const auto dist = depth_softmax(out.depth_logits[0], options.depth_spec, kDepthScale);
    const auto target = build_depth_target<T>(sample.left_depth, options.depth_spec, kDepthScale);
    const std::size_t h = dist.probs.dim(0), w = dist.probs.dim(1), d = dist.probs.dim(2);
    std::string html;
    for (const std::size_t row : {h / 2, h - 1}) {
        std::vector<std::vector<double>> slice(w, std::vector<double>(d));
        std::vector<int> marks(w, -1);
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t b = 0; b < d; ++b) slice[x][b] = static_cast<double>(dist.probs.at(row, x, b));
            marks[x] = target.bins[row * w + x];
        }
        html += "<h3>" + html_escape(sample.sample_id) + ", left camera, cell row " + std::to_string(row) + "</h3>\n" +
                depth_heatmap(slice, marks);
    }
    return html + "<p>Columns are image cells along the row, rows are depth bins (" +
           std::string(to_string(options.depth_spec.mode())) + "); red dots mark the ground-truth bin.</p>\n";
}

}  // namespace detail

/// Static HTML report of a run: loss curves, per-class IoU bars, depth
/// distribution heatmaps and a summary table. Sections whose inputs are
/// missing (no metrics yet, dataset moved) are replaced by a note.
inline std::string render_report(const std::filesystem::path& run_dir) {
    const RunInfo info = load_run(run_dir);
    const auto log = read_loss_log(run_dir / "loss_log.jsonl");
    std::string html = "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Run report: " +
                       detail::html_escape(run_dir.filename().string()) +
                       "</title>\n<style>body{font-family:sans-serif;max-width:900px;margin:auto}"
                       "table{border-collapse:collapse}td,th{border:1px solid #ccc;padding:2px 8px;text-align:left}"
                       "</style></head><body>\n<h1>Run report: " +
                       detail::html_escape(run_dir.filename().string()) + "</h1>\n";

    html += "<h2>Loss curves</h2>\n";
    std::vector<detail::Series> series{{"l_total", "#000", {}}, {"l_occ", "#1f77b4", {}},   {"l_sem", "#ff7f0e", {}},
                                       {"l_depth", "#2ca02c", {}}, {"l_scal_sem", "#d62728", {}},
                                       {"l_scal_geo", "#9467bd", {}}};
    for (const auto& r : log) {
        series[0].values.push_back(r.loss.l_total);
        series[1].values.push_back(r.loss.l_occ);
        series[2].values.push_back(r.loss.l_sem);
        series[3].values.push_back(r.loss.l_depth);
        series[4].values.push_back(r.loss.l_scal_sem);
        series[5].values.push_back(r.loss.l_scal_geo);
    }
    for (auto& s : series) s.values = detail::moving_average(s.values, 20);
    html += detail::loss_chart(series) + "<p>20-step moving averages, log scale.</p>\n";

    html += "<h2>Per-class IoU</h2>\n";
    std::optional<Dataset> data;
    try {
        data.emplace(info.dataset);
    } catch (const Error&) {
    }
    const std::vector<std::string> names =
        data ? data->manifest().class_names : class_names(info.checkpoint.config.n_classes);
    std::vector<std::pair<std::string, MetricStream>> metrics;
    for (const std::string split : {"train", "val", "test"}) {
        const auto path = run_dir / ("metrics_" + split + ".json");
        if (!std::filesystem::exists(path)) continue;
        try {
            metrics.emplace_back(split, metric_stream_from_json(nlohmann::json::parse(io::read_file(path))));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path.string() + ": " + e.what());
        }
    }
    if (metrics.empty()) html += "<p>No metrics yet; run <code>occdepth eval</code> first.</p>\n";
    for (const auto& [split, stream] : metrics)
        html += "<h3>Split " + split + " (" + std::to_string(stream.samples.size()) + " scenes)</h3>\n" +
                detail::iou_bars(stream.aggregate, names);

    html += "<h2>Depth distributions</h2>\n";
    if (!data) {
        html += "<p>Dataset " + detail::html_escape(info.dataset.string()) + " not found.</p>\n";
    } else {
        const std::string split = info.config.eval_split;
        html += info.config.double_precision ? detail::depth_section<double>(info, *data, split)
                                             : detail::depth_section<float>(info, *data, split);
    }

    html += "<h2>Summary</h2>\n<table>\n";
    auto row = [&](const std::string& k, const std::string& v) {
        html += "<tr><th>" + detail::html_escape(k) + "</th><td>" + detail::html_escape(v) + "</td></tr>\n";
    };
    row("dataset", info.dataset.string());
    row("steps", std::to_string(log.size()));
    if (!log.empty()) {
        row("l_total (step 0)", detail::fmt("%.6f", log.front().loss.l_total));
        row("l_total (last)", detail::fmt("%.6f", log.back().loss.l_total));
    }
    for (const auto& [split, stream] : metrics) {
        row("SC IoU (" + split + ")", detail::fmt("%.4f", stream.aggregate.sc_iou));
        row("SSC mIoU (" + split + ")", detail::fmt("%.4f", stream.aggregate.ssc_miou));
    }
    const nlohmann::json config = to_json(info.config);
    for (const auto& [key, value] : config.items()) row("config." + key, value.dump());
    html += "</table>\n</body></html>\n";
    return html;
}

inline void write_report(const std::filesystem::path& run_dir, const std::filesystem::path& out) {
    const std::string html = render_report(run_dir);
    if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
    io::write_file_atomic(out, html);
}

}  // namespace occdepth
