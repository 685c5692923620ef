#pragma once

#include <cmath>
#include <cstdio>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "occdepth/labels.hpp"
#include "occdepth/tensor.hpp"

namespace occdepth {

/// Per-voxel argmax over the last axis; ties go to the lowest class index.
template <typename T>
VoxelLabels predict_labels(const Tensor<T>& logits_nclass) {
    require(logits_nclass.rank() == 4 && logits_nclass.dim(3) >= 2, "predict_labels: logits must be X x Y x Z x (N+1)");
    const std::size_t k = logits_nclass.dim(3);
    VoxelLabels out({static_cast<int>(logits_nclass.dim(0)), static_cast<int>(logits_nclass.dim(1)),
                     static_cast<int>(logits_nclass.dim(2))},
                    static_cast<int>(k - 1));
    for (std::size_t v = 0; v < out.size(); ++v) {
        const T* row = logits_nclass.data() + v * k;
        std::size_t best = 0;
        for (std::size_t c = 1; c < k; ++c)
            if (row[c] > row[best]) best = c;
        out.semantic[v] = static_cast<std::uint8_t>(best);
    }
    return out;
}

struct ClassCounts {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;

    [[nodiscard]] double iou() const {
        const std::uint64_t denom = tp + fp + fn;
        return denom == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(denom);
    }
    ClassCounts& operator+=(const ClassCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
    friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

/// Scene-completion (occupancy) IoU and semantic mIoU with the underlying counts.
/// Per-class IoU exists only for classes 1..N that occur in the ground truth;
/// ssc_miou averages those (0 when none occur).
struct MetricReport {
    double sc_iou = 0.0;
    double ssc_miou = 0.0;
    std::map<int, double> per_class_iou;
    ClassCounts occupancy;
    std::vector<ClassCounts> per_class;  ///< index c = class c, entry 0 unused
    std::vector<std::uint64_t> gt_count;  ///< ground-truth voxels per class

    friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

/// Rebuilds the IoU fields from counts (used after summing counts across samples).
inline void finalize_metrics(MetricReport& r) {
    r.sc_iou = r.occupancy.iou();
    r.per_class_iou.clear();
    double sum = 0.0;
    for (std::size_t c = 1; c < r.per_class.size(); ++c) {
        if (r.gt_count[c] == 0) continue;
        const double iou = r.per_class[c].iou();
        r.per_class_iou[static_cast<int>(c)] = iou;
        sum += iou;
    }
    r.ssc_miou = r.per_class_iou.empty() ? 0.0 : sum / static_cast<double>(r.per_class_iou.size());
}

inline MetricReport compute_metrics(const VoxelLabels& pred, const VoxelLabels& gt) {
    require(pred.dims == gt.dims && pred.size() == gt.size(), "compute_metrics: prediction and ground truth shapes differ");
    const int n = std::max(pred.n_classes, gt.n_classes);
    MetricReport r;
    r.per_class.assign(static_cast<std::size_t>(n) + 1, ClassCounts{});
    r.gt_count.assign(static_cast<std::size_t>(n) + 1, 0);
    for (std::size_t v = 0; v < gt.size(); ++v) {
        const std::uint8_t g = gt.semantic[v];
        if (g == kIgnoreLabel) continue;
        const std::uint8_t p = pred.semantic[v];
        require(p <= n, "compute_metrics: predicted label out of range");
        const bool g_occ = g != kEmptyLabel;
        const bool p_occ = p != kEmptyLabel;
        if (g_occ && p_occ) ++r.occupancy.tp;
        else if (p_occ) ++r.occupancy.fp;
        else if (g_occ) ++r.occupancy.fn;
        ++r.gt_count[g];
        if (p == g) {
            if (g != kEmptyLabel) ++r.per_class[g].tp;
        } else {
            if (p != kEmptyLabel) ++r.per_class[p].fp;
            if (g != kEmptyLabel) ++r.per_class[g].fn;
        }
    }
    finalize_metrics(r);
    return r;
}

/// Sum of counts across samples, then IoUs from the pooled counts.
inline MetricReport aggregate_metrics(const std::vector<MetricReport>& reports) {
    MetricReport total;
    for (const auto& r : reports) {
        if (total.per_class.size() < r.per_class.size()) {
            total.per_class.resize(r.per_class.size());
            total.gt_count.resize(r.gt_count.size());
        }
        total.occupancy += r.occupancy;
        for (std::size_t c = 0; c < r.per_class.size(); ++c) {
            total.per_class[c] += r.per_class[c];
            total.gt_count[c] += r.gt_count[c];
        }
    }
    finalize_metrics(total);
    return total;
}

inline nlohmann::json to_json(const ClassCounts& c) { return {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}}; }

inline nlohmann::json to_json(const MetricReport& r) {
    nlohmann::json per_class = nlohmann::json::object();
    for (const auto& [c, iou] : r.per_class_iou) per_class[std::to_string(c)] = iou;
    nlohmann::json counts = nlohmann::json::array();
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
        auto entry = to_json(r.per_class[c]);
        entry["class"] = c;
        entry["gt"] = r.gt_count[c];
        counts.push_back(entry);
    }
    return {{"sc_iou", r.sc_iou},
            {"ssc_miou", r.ssc_miou},
            {"per_class_iou", per_class},
            {"occupancy", to_json(r.occupancy)},
            {"class_counts", counts}};
}

inline MetricReport metric_report_from_json(const nlohmann::json& j) {
    MetricReport r;
    r.occupancy = {j.at("occupancy").at("tp"), j.at("occupancy").at("fp"), j.at("occupancy").at("fn")};
    for (const auto& entry : j.at("class_counts")) {
        r.per_class.push_back({entry.at("tp"), entry.at("fp"), entry.at("fn")});
        r.gt_count.push_back(entry.at("gt"));
    }
    finalize_metrics(r);
    return r;
}

/// Metrics of one evaluated run: one report per sample plus the pooled aggregate.
struct MetricStream {
    std::string split;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, MetricReport>> samples;
    MetricReport aggregate;
};

inline nlohmann::json to_json(const MetricStream& s) {
    nlohmann::json samples = nlohmann::json::object();
    for (const auto& [id, r] : s.samples) samples[id] = to_json(r);
    return {{"split", s.split}, {"seed", s.seed}, {"samples", samples}, {"aggregate", to_json(s.aggregate)}};
}

inline MetricStream metric_stream_from_json(const nlohmann::json& j) {
    MetricStream s;
    s.split = j.at("split").get<std::string>();
    s.seed = j.value("seed", std::uint64_t{0});
    for (const auto& [id, r] : j.at("samples").items()) s.samples.emplace_back(id, metric_report_from_json(r));
    s.aggregate = metric_report_from_json(j.at("aggregate"));
    return s;
}

struct MetricDelta {
    std::string metric;
    std::vector<double> per_seed;  ///< b - a for each paired seed
    double mean = 0.0;
};

/// Signed differences (b - a) of aggregate metrics, paired seed by seed.
struct AblationComparison {
    std::string label_a;
    std::string label_b;
    std::vector<std::uint64_t> seeds;
    std::vector<MetricDelta> deltas;

    [[nodiscard]] const MetricDelta& delta(const std::string& metric) const {
        for (const auto& d : deltas)
            if (d.metric == metric) return d;
        throw ContractError("no delta recorded for metric " + metric);
    }
};

class ComparisonError : public ContractError {
public:
    using ContractError::ContractError;
};

inline AblationComparison ablation_compare(const std::vector<MetricStream>& run_a, const std::vector<MetricStream>& run_b,
                                           std::string label_a = "a", std::string label_b = "b") {
    if (run_a.size() != run_b.size() || run_a.empty())
        throw ComparisonError("ablation_compare: runs must have the same, nonzero number of seeds");
    AblationComparison out{std::move(label_a), std::move(label_b), {}, {}};
    std::map<std::string, MetricDelta> deltas;
    std::vector<std::string> order{"sc_iou", "ssc_miou"};
    for (std::size_t s = 0; s < run_a.size(); ++s) {
        const MetricStream& a = run_a[s];
        const MetricStream& b = run_b[s];
        if (a.split != b.split) throw ComparisonError("ablation_compare: split mismatch (" + a.split + " vs " + b.split + ")");
        std::vector<std::string> ids_a, ids_b;
        for (const auto& [id, r] : a.samples) ids_a.push_back(id);
        for (const auto& [id, r] : b.samples) ids_b.push_back(id);
        if (ids_a != ids_b) throw ComparisonError("ablation_compare: runs were evaluated on different samples");
        out.seeds.push_back(a.seed);
        deltas["sc_iou"].per_seed.push_back(b.aggregate.sc_iou - a.aggregate.sc_iou);
        deltas["ssc_miou"].per_seed.push_back(b.aggregate.ssc_miou - a.aggregate.ssc_miou);
        for (const auto& [c, iou_a] : a.aggregate.per_class_iou) {
            const auto it = b.aggregate.per_class_iou.find(c);
            if (it == b.aggregate.per_class_iou.end()) continue;
            const std::string name = "iou_class_" + std::to_string(c);
            if (!deltas.count(name)) order.push_back(name);
            deltas[name].per_seed.push_back(it->second - iou_a);
        }
    }
    for (const auto& name : order) {
        MetricDelta d = deltas[name];
        d.metric = name;
        double sum = 0.0;
        for (double x : d.per_seed) sum += x;
        d.mean = d.per_seed.empty() ? 0.0 : sum / static_cast<double>(d.per_seed.size());
        out.deltas.push_back(std::move(d));
    }
    return out;
}

inline nlohmann::json to_json(const AblationComparison& c) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& d : c.deltas) rows.push_back({{"metric", d.metric}, {"mean_delta", d.mean}, {"per_seed", d.per_seed}});
    return {{"a", c.label_a}, {"b", c.label_b}, {"seeds", c.seeds}, {"deltas", rows}};
}

/// Tab-separated table: metric, mean delta, then one column per seed.
inline std::string comparison_table(const AblationComparison& c) {
    std::string out = "metric\tmean_delta";
    for (auto s : c.seeds) out += "\tseed_" + std::to_string(s);
    out += '\n';
    char buf[64];
    for (const auto& d : c.deltas) {
        out += d.metric;
        std::snprintf(buf, sizeof buf, "\t%+.6f", d.mean);
        out += buf;
        for (double x : d.per_seed) {
            std::snprintf(buf, sizeof buf, "\t%+.6f", x);
            out += buf;
        }
        out += '\n';
    }
    return out;
}

}  // namespace occdepth
