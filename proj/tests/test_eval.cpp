#include <gtest/gtest.h>

#include <cmath>

#include "occdepth/eval.hpp"
#include "occdepth/rng.hpp"

using namespace occdepth;

namespace {

VoxelLabels labels(std::array<int, 3> dims, int n, std::vector<std::uint8_t> values) {
    VoxelLabels l(dims, n);
    l.semantic = std::move(values);
    return l;
}

VoxelLabels random_labels(Rng& rng, int n, double ignore_rate = 0.0) {
    VoxelLabels l({8, 8, 8}, n);
    for (auto& v : l.semantic) {
        if (rng.uniform() < ignore_rate) v = kIgnoreLabel;
        else v = static_cast<std::uint8_t>(rng.uniform_int(0, n));
    }
    return l;
}

// Counts each class with an explicit triple loop over i, j, k.
struct OracleCounts {
    std::vector<std::uint64_t> tp, fp, fn, gt;
    std::uint64_t otp = 0, ofp = 0, ofn = 0;
};

OracleCounts count_oracle(const VoxelLabels& pred, const VoxelLabels& gt, int n) {
    OracleCounts o;
    o.tp.assign(n + 1, 0);
    o.fp.assign(n + 1, 0);
    o.fn.assign(n + 1, 0);
    o.gt.assign(n + 1, 0);
    for (int i = 0; i < gt.dims[0]; ++i)
        for (int j = 0; j < gt.dims[1]; ++j)
            for (int k = 0; k < gt.dims[2]; ++k) {
                const std::size_t v = (static_cast<std::size_t>(i) * gt.dims[1] + j) * gt.dims[2] + k;
                const int g = gt.semantic[v], p = pred.semantic[v];
                if (g == 255) continue;
                ++o.gt[g];
                if (g > 0 && p > 0) ++o.otp;
                if (g == 0 && p > 0) ++o.ofp;
                if (g > 0 && p == 0) ++o.ofn;
                for (int c = 1; c <= n; ++c) {
                    if (g == c && p == c) ++o.tp[c];
                    if (g != c && p == c) ++o.fp[c];
                    if (g == c && p != c) ++o.fn[c];
                }
            }
    return o;
}

MetricStream stream(const std::string& split, std::uint64_t seed, double sc, std::map<int, double> per_class) {
    MetricStream s;
    s.split = split;
    s.seed = seed;
    s.samples.emplace_back("s0", MetricReport{});
    s.aggregate.sc_iou = sc;
    s.aggregate.per_class_iou = std::move(per_class);
    double sum = 0;
    for (const auto& [c, v] : s.aggregate.per_class_iou) sum += v;
    s.aggregate.ssc_miou = s.aggregate.per_class_iou.empty() ? 0.0 : sum / s.aggregate.per_class_iou.size();
    return s;
}

}  // namespace

TEST(PredictLabels, ArgmaxAndTies) {
    Tensor<double> logits(Shape{1, 1, 3, 6});
    logits.at(0, 0, 0, 4) = 3.0;
    logits.at(0, 0, 1, 2) = 1.0;
    logits.at(0, 0, 1, 5) = 1.0;
    const auto pred = predict_labels(logits);
    EXPECT_EQ(pred.n_classes, 5);
    EXPECT_EQ(pred.semantic[0], 4);
    EXPECT_EQ(pred.semantic[1], 2);
    EXPECT_EQ(pred.semantic[2], 0);  // all equal: lowest index
}

TEST(PredictLabels, MatchesArgmaxLoop) {
    Rng rng(1);
    Tensor<float> logits(Shape{4, 3, 5, 7});
    for (auto& x : logits.storage()) x = static_cast<float>(rng.uniform_int(0, 3));  // many ties
    const auto pred = predict_labels(logits);
    for (std::size_t v = 0; v < pred.size(); ++v) {
        int best = 0;
        for (int c = 0; c < 7; ++c)
            if (logits[v * 7 + c] > logits[v * 7 + best]) best = c;
        EXPECT_EQ(pred.semantic[v], best);
    }
}

TEST(Metrics, PerfectPrediction) {
    Rng rng(2);
    const auto gt = random_labels(rng, 4);
    const auto r = compute_metrics(gt, gt);
    EXPECT_DOUBLE_EQ(r.sc_iou, 1.0);
    EXPECT_DOUBLE_EQ(r.ssc_miou, 1.0);
}

TEST(Metrics, AllEmptyPrediction) {
    const auto gt = labels({1, 1, 4}, 2, {1, 2, 0, 1});
    const auto r = compute_metrics(VoxelLabels({1, 1, 4}, 2), gt);
    EXPECT_DOUBLE_EQ(r.sc_iou, 0.0);
    EXPECT_DOUBLE_EQ(r.ssc_miou, 0.0);
    EXPECT_EQ(r.occupancy.fn, 3u);
}

TEST(Metrics, FourVoxelHandCase) {
    // occupied in gt: voxels 0,1,3; occupied in pred: voxels 0,1,2.
    const auto gt = labels({1, 1, 4}, 1, {1, 1, 0, 1});
    const auto pred = labels({1, 1, 4}, 1, {1, 1, 1, 0});
    const auto r = compute_metrics(pred, gt);
    EXPECT_EQ(r.occupancy, (ClassCounts{2, 1, 1}));
    EXPECT_DOUBLE_EQ(r.sc_iou, 0.5);
    EXPECT_DOUBLE_EQ(r.ssc_miou, 0.5);
}

TEST(Metrics, SemanticConfusionHandCase) {
    // class 1: tp 1, fn 1 (predicted 2); class 2: tp 1, fp 1 -> both 0.5
    const auto gt = labels({1, 1, 3}, 2, {1, 1, 2});
    const auto pred = labels({1, 1, 3}, 2, {1, 2, 2});
    const auto r = compute_metrics(pred, gt);
    EXPECT_DOUBLE_EQ(r.sc_iou, 1.0);
    EXPECT_DOUBLE_EQ(r.per_class_iou.at(1), 0.5);
    EXPECT_DOUBLE_EQ(r.per_class_iou.at(2), 0.5);
    EXPECT_DOUBLE_EQ(r.ssc_miou, 0.5);
}

TEST(Metrics, AbsentClassesExcludedFromMean) {
    const auto gt = labels({1, 1, 2}, 3, {1, 0});
    const auto pred = labels({1, 1, 2}, 3, {1, 3});
    const auto r = compute_metrics(pred, gt);
    EXPECT_EQ(r.per_class_iou.size(), 1u);
    EXPECT_DOUBLE_EQ(r.ssc_miou, 1.0);
    EXPECT_DOUBLE_EQ(r.sc_iou, 0.5);
}

TEST(Metrics, IgnoredVoxelsExcluded) {
    Rng rng(3);
    const auto gt = random_labels(rng, 3, 0.3);
    auto pred = random_labels(rng, 3);
    const auto base = compute_metrics(pred, gt);
    for (std::size_t v = 0; v < gt.size(); ++v)
        if (gt.ignored(v)) pred.semantic[v] = static_cast<std::uint8_t>((pred.semantic[v] + 1) % 4);
    EXPECT_EQ(compute_metrics(pred, gt), base);
}

TEST(Metrics, MatchesTripleLoopOracle) {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = rng.uniform_int(1, 6);
        const auto gt = random_labels(rng, n, 0.1);
        const auto pred = random_labels(rng, n);
        const auto r = compute_metrics(pred, gt);
        const auto o = count_oracle(pred, gt, n);
        EXPECT_EQ(r.occupancy, (ClassCounts{o.otp, o.ofp, o.ofn}));
        double sum = 0;
        int present = 0;
        for (int c = 1; c <= n; ++c) {
            EXPECT_EQ(r.per_class[c], (ClassCounts{o.tp[c], o.fp[c], o.fn[c]}));
            EXPECT_EQ(r.gt_count[c], o.gt[c]);
            if (o.gt[c] == 0) {
                EXPECT_EQ(r.per_class_iou.count(c), 0u);
                continue;
            }
            const double iou = double(o.tp[c]) / double(o.tp[c] + o.fp[c] + o.fn[c]);
            EXPECT_DOUBLE_EQ(r.per_class_iou.at(c), iou);
            sum += iou;
            ++present;
        }
        EXPECT_NEAR(r.ssc_miou, present ? sum / present : 0.0, 1e-15);
        EXPECT_DOUBLE_EQ(r.sc_iou, double(o.otp) / double(o.otp + o.ofp + o.ofn));
    }
}

TEST(Metrics, RelabelingInvariance) {
    Rng rng(5);
    const std::array<std::uint8_t, 5> perm{0, 3, 1, 4, 2};
    for (int trial = 0; trial < 20; ++trial) {
        auto gt = random_labels(rng, 4, 0.1);
        auto pred = random_labels(rng, 4);
        const auto r = compute_metrics(pred, gt);
        for (auto& v : gt.semantic)
            if (v != kIgnoreLabel) v = perm[v];
        for (auto& v : pred.semantic) v = perm[v];
        const auto q = compute_metrics(pred, gt);
        EXPECT_DOUBLE_EQ(q.sc_iou, r.sc_iou);
        EXPECT_NEAR(q.ssc_miou, r.ssc_miou, 1e-12);
        for (const auto& [c, iou] : r.per_class_iou) EXPECT_DOUBLE_EQ(q.per_class_iou.at(perm[c]), iou);
    }
}

TEST(Metrics, SceneCompletionDependsOnlyOnOccupancy) {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const auto gt = random_labels(rng, 4, 0.1);
        const auto pred = random_labels(rng, 4);
        auto shuffled = pred;
        for (auto& v : shuffled.semantic)
            if (v != 0) v = static_cast<std::uint8_t>(rng.uniform_int(1, 4));
        EXPECT_DOUBLE_EQ(compute_metrics(shuffled, gt).sc_iou, compute_metrics(pred, gt).sc_iou);
    }
}

TEST(Metrics, RangeAndErrors) {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const auto r = compute_metrics(random_labels(rng, 3), random_labels(rng, 3, 0.2));
        EXPECT_GE(r.sc_iou, 0.0);
        EXPECT_LE(r.sc_iou, 1.0);
        EXPECT_GE(r.ssc_miou, 0.0);
        EXPECT_LE(r.ssc_miou, 1.0);
    }
    EXPECT_THROW(compute_metrics(VoxelLabels({2, 2, 2}, 3), VoxelLabels({2, 2, 3}, 3)), ContractError);
}

TEST(Metrics, AggregatePoolsCounts) {
    const auto gt_a = labels({1, 1, 2}, 1, {1, 1});
    const auto pred_a = labels({1, 1, 2}, 1, {1, 1});
    const auto gt_b = labels({1, 1, 2}, 1, {1, 0});
    const auto pred_b = labels({1, 1, 2}, 1, {0, 1});
    const auto total = aggregate_metrics({compute_metrics(pred_a, gt_a), compute_metrics(pred_b, gt_b)});
    EXPECT_EQ(total.occupancy, (ClassCounts{2, 1, 1}));
    EXPECT_DOUBLE_EQ(total.sc_iou, 0.5);  // pooled, not the mean of 1.0 and 0.0
}

TEST(Metrics, JsonRoundTrip) {
    Rng rng(8);
    const auto r = compute_metrics(random_labels(rng, 4), random_labels(rng, 4, 0.1));
    EXPECT_EQ(metric_report_from_json(nlohmann::json::parse(to_json(r).dump())), r);

    MetricStream s;
    s.split = "val";
    s.seed = 3;
    s.samples.emplace_back("scene_00001", r);
    s.aggregate = aggregate_metrics({r});
    const auto back = metric_stream_from_json(nlohmann::json::parse(to_json(s).dump()));
    EXPECT_EQ(back.split, "val");
    EXPECT_EQ(back.seed, 3u);
    EXPECT_EQ(back.samples.at(0).second, r);
    EXPECT_EQ(back.aggregate, s.aggregate);
}

TEST(Ablation, IdenticalRunsGiveZeroDeltas) {
    const std::vector<MetricStream> runs{stream("val", 0, 0.7, {{1, 0.5}, {2, 0.3}})};
    const auto c = ablation_compare(runs, runs);
    for (const auto& d : c.deltas) EXPECT_EQ(d.mean, 0.0) << d.metric;
    EXPECT_EQ(c.deltas.size(), 4u);
}

TEST(Ablation, HandDeltasAndSeedMean) {
    const std::vector<MetricStream> a{stream("val", 0, 0.6, {{1, 0.4}}), stream("val", 1, 0.5, {{1, 0.2}}),
                                      stream("val", 2, 0.4, {{1, 0.3}})};
    const std::vector<MetricStream> b{stream("val", 0, 0.7, {{1, 0.5}}), stream("val", 1, 0.5, {{1, 0.5}}),
                                      stream("val", 2, 0.7, {{1, 0.3}})};
    const auto c = ablation_compare(a, b, "without", "with");
    EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{0, 1, 2}));
    const auto& sc = c.delta("sc_iou");
    ASSERT_EQ(sc.per_seed.size(), 3u);
    EXPECT_NEAR(sc.per_seed[0], 0.1, 1e-12);
    EXPECT_NEAR(sc.per_seed[1], 0.0, 1e-12);
    EXPECT_NEAR(sc.per_seed[2], 0.3, 1e-12);
    EXPECT_NEAR(sc.mean, 0.4 / 3, 1e-12);
    EXPECT_NEAR(c.delta("ssc_miou").mean, 0.4 / 3, 1e-12);
    EXPECT_NEAR(c.delta("iou_class_1").mean, 0.4 / 3, 1e-12);
    EXPECT_THROW(static_cast<void>(c.delta("iou_class_9")), ContractError);

    const std::string table = comparison_table(c);
    EXPECT_EQ(table.substr(0, table.find('\n')), "metric\tmean_delta\tseed_0\tseed_1\tseed_2");
    EXPECT_NE(table.find("sc_iou\t+0.133333\t+0.100000\t+0.000000\t+0.300000"), std::string::npos);
}

TEST(Ablation, MismatchedRunsRejected) {
    const std::vector<MetricStream> a{stream("val", 0, 0.6, {})};
    const std::vector<MetricStream> b{stream("test", 0, 0.6, {})};
    EXPECT_THROW(ablation_compare(a, b), ComparisonError);
    EXPECT_THROW(ablation_compare(a, {}), ComparisonError);
    auto c = a;
    c[0].samples[0].first = "other";
    EXPECT_THROW(ablation_compare(a, c), ComparisonError);
}
