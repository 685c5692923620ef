#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "occdepth/losses.hpp"
#include "occdepth/rng.hpp"

using namespace occdepth;

namespace {

VoxelLabels labels_of(std::vector<std::uint8_t> values, int n_classes) {
    VoxelLabels l({static_cast<int>(values.size()), 1, 1}, n_classes);
    l.semantic = std::move(values);
    return l;
}

Tensor<double> voxel_tensor(std::size_t voxels, std::size_t k, std::vector<double> values = {}) {
    if (values.empty()) values.assign(voxels * k, 0.0);
    return Tensor<double>(Shape{voxels, 1, 1, k}, std::move(values));
}

Tensor<double> softmax_rows(const Tensor<double>& logits) {
    const std::size_t k = logits.shape().back();
    Tensor<double> p(logits.shape());
    for (std::size_t r = 0; r < logits.size() / k; ++r) {
        double z = 0;
        for (std::size_t c = 0; c < k; ++c) z += std::exp(logits[r * k + c]);
        for (std::size_t c = 0; c < k; ++c) p[r * k + c] = std::exp(logits[r * k + c]) / z;
    }
    return p;
}

double max_rel_error(Tensor<double>& x, const Tensor<double>& analytic, const std::function<double()>& f) {
    double worst = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + 1e-6;
        const double up = f();
        x[i] = keep - 1e-6;
        const double down = f();
        x[i] = keep;
        const double num = (up - down) / 2e-6;
        worst = std::max(worst, std::abs(num - analytic[i]) / std::max(1.0, std::abs(num)));
    }
    return worst;
}

}  // namespace

TEST(LossOcc, PerfectUniformAndHandCase) {
    const auto labels = labels_of({0, 3, 255}, 3);
    EXPECT_LT(loss_occ(voxel_tensor(3, 2, {30, -30, -30, 30, 0, 0}), labels).value, 1e-6);
    EXPECT_NEAR(loss_occ(voxel_tensor(3, 2), labels).value, std::log(2.0), 1e-9);

    // CE_0 = log(1 + e^{-2}) for target 0 with logits (1, -1); CE_1 = log(1 + e^{0.5}) for target 1 with (0.5, 0).
    const auto hand = loss_occ(voxel_tensor(3, 2, {1, -1, 0.5, 0, 9, 9}), labels).value;
    EXPECT_NEAR(hand, 0.5 * (std::log1p(std::exp(-2.0)) + std::log1p(std::exp(0.5))), 1e-12);
}

TEST(LossOcc, AllIgnoredIsDegenerate) {
    EXPECT_THROW(loss_occ(voxel_tensor(2, 2), labels_of({255, 255}, 2)), DegenerateBatchError);
    EXPECT_THROW(loss_occ(voxel_tensor(3, 2), labels_of({0, 1}, 2)), ContractError);
}

TEST(LossSem, PerfectUniformAndHandCase) {
    const auto labels = labels_of({0, 1, 2}, 2);
    std::vector<double> sat(9, -30.0);
    sat[0] = sat[4] = sat[8] = 30.0;
    EXPECT_LT(loss_sem(voxel_tensor(3, 3, sat), labels).value, 1e-6);
    EXPECT_NEAR(loss_sem(voxel_tensor(3, 3), labels).value, std::log(3.0), 1e-9);

    const std::vector<double> logits{1, 0, 0, 0, 2, 0, 0, 0, std::log(2.0)};
    auto ce = [](double a, double b, double c, double target) { return std::log(std::exp(a) + std::exp(b) + std::exp(c)) - target; };
    const double expect = (ce(1, 0, 0, 1) + ce(0, 2, 0, 2) + ce(0, 0, std::log(2.0), std::log(2.0))) / 3.0;
    EXPECT_NEAR(loss_sem(voxel_tensor(3, 3, logits), labels).value, expect, 1e-12);
}

TEST(LossSem, MaskEmptyAndClassWeights) {
    const auto labels = labels_of({0, 1, 2, 255}, 2);
    Rng rng(1);
    auto logits = voxel_tensor(4, 3);
    for (auto& x : logits.storage()) x = rng.uniform(-2, 2);
    const auto p = softmax_rows(logits);
    const double ce0 = -std::log(p[0]), ce1 = -std::log(p[4]), ce2 = -std::log(p[8]);
    EXPECT_NEAR(loss_sem(logits, labels, {{}, true}).value, (ce1 + ce2) / 2, 1e-12);
    EXPECT_NEAR(loss_sem(logits, labels, {{1.0, 2.0, 3.0}, false}).value, (ce0 + 2 * ce1 + 3 * ce2) / 6, 1e-12);
    EXPECT_THROW(loss_sem(logits, labels_of({0, 0, 255, 255}, 2), {{}, true}), DegenerateBatchError);
}

TEST(LossDepth, PerfectUniformHandAndDegenerate) {
    DepthTarget<double> t{Tensor<double>(Shape{1, 2, 4}), {1, 0}, {2, -1}};
    t.one_hot[2] = 1.0;
    Tensor<double> sat(Shape{1, 2, 4}, -30.0);
    sat[2] = 30.0;
    EXPECT_LT(loss_depth(DepthLogits<double>{sat}, t).value, 1e-6);
    EXPECT_NEAR(loss_depth(DepthLogits<double>{Tensor<double>(Shape{1, 2, 4})}, t).value, std::log(4.0), 1e-9);

    Tensor<double> hand(Shape{1, 2, 4}, std::vector<double>{0, 1, 2, 3, 5, 5, 5, 5});
    const double z = 1 + std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    EXPECT_NEAR(loss_depth(DepthLogits<double>{hand}, t).value, std::log(z) - 2.0, 1e-12);

    t.valid = {0, 0};
    EXPECT_THROW(loss_depth(DepthLogits<double>{hand}, t), DegenerateBatchError);
}

TEST(LossScal, PerfectPredictionIsZero) {
    const auto labels = labels_of({0, 1, 2, 1, 255}, 2);
    std::vector<double> probs(15, 0.0);
    for (std::size_t v = 0; v < 4; ++v) probs[v * 3 + labels.semantic[v]] = 1.0;
    probs[12] = 1.0;
    const auto p = voxel_tensor(5, 3, probs);
    EXPECT_NEAR(loss_scal(p, labels, ScalMode::sem).value, 0.0, 1e-12);
    EXPECT_NEAR(loss_scal(p, labels, ScalMode::geo).value, 0.0, 1e-12);
}

TEST(LossScal, UniformFourVoxelHandCase) {
    // Labels {0, 1, 1, 2}, every voxel predicts 1/3 per class.
    const auto labels = labels_of({0, 1, 1, 2}, 2);
    const auto p = voxel_tensor(4, 3, std::vector<double>(12, 1.0 / 3.0));
    // class 0: P = (1/3)/(4/3) = 1/4, R = 1/3, S = 3 * (2/3) / 3 = 2/3
    // class 1: P = 1/2, R = 1/3, S = 2/3; class 2 mirrors class 0
    const double t0 = -(std::log(0.25) + std::log(1.0 / 3) + std::log(2.0 / 3)) / 3;
    const double t1 = -(std::log(0.5) + std::log(1.0 / 3) + std::log(2.0 / 3)) / 3;
    EXPECT_NEAR(loss_scal(p, labels, ScalMode::sem).value, (2 * t0 + t1) / 3, 1e-12);
    // geo: p_occ = 2/3 everywhere, 3 occupied of 4: P = 3/4, R = 2/3, S = 1/3
    const double geo = -(std::log(0.75) + std::log(2.0 / 3) + std::log(1.0 / 3)) / 3;
    EXPECT_NEAR(loss_scal(p, labels, ScalMode::geo).value, geo, 1e-12);
}

TEST(LossScal, PerfectRecallHalfPrecision) {
    // Occupied voxel predicted occupied, one empty voxel falsely occupied and
    // one empty voxel correct: P = 1/2, R = 1, S = 1/2.
    const auto labels = labels_of({1, 0, 0}, 1);
    const auto p = voxel_tensor(3, 2, {0, 1, 0, 1, 1, 0});
    EXPECT_NEAR(loss_scal(p, labels, ScalMode::geo).value, -2.0 * std::log(0.5) / 3.0, 1e-12);

    // Only one class present and no negatives: specificity is skipped, so a
    // prediction spread over an absent class lowers recall but not precision.
    const auto single = labels_of({1, 1}, 1);
    const auto q = voxel_tensor(2, 2, {0.5, 0.5, 0, 1});
    EXPECT_NEAR(loss_scal(q, single, ScalMode::sem).value, -std::log(0.75) / 3.0, 1e-12);
}

TEST(LossScal, AbsentClassesSkippedAndAllIgnoredIsZero) {
    const auto p = voxel_tensor(2, 4, std::vector<double>(8, 0.25));
    EXPECT_EQ(loss_scal(p, labels_of({255, 255}, 3), ScalMode::sem).value, 0.0);
    EXPECT_EQ(loss_scal(p, labels_of({0, 0}, 3), ScalMode::geo).value, 0.0);
}

TEST(Gamma, Schedule) {
    EXPECT_EQ(gamma(0, 100), 1.0);
    EXPECT_NEAR(gamma(50, 100), 0.5, 1e-15);
    EXPECT_EQ(gamma(100, 100), 0.2);
    EXPECT_EQ(gamma(1000, 100), 0.2);
    double prev = 1.0;
    for (long long s = 0; s <= 150; ++s) {
        const double g = gamma(s, 97);
        EXPECT_LE(g, prev);
        EXPECT_GE(g, 0.2);
        EXPECT_LE(g, 1.0);
        prev = g;
    }
    EXPECT_THROW(gamma(0, 0), DomainError);
    EXPECT_THROW(gamma(-1, 10), DomainError);
}

TEST(LossTotal, Composition) {
    EXPECT_EQ(loss_total({}, 3, 10).l_total, 0.0);
    EXPECT_NEAR(loss_total({1, 1, 1, 1, 1}, 0, 10).l_total, 5.0, 1e-12);
    EXPECT_NEAR(loss_total({1, 1, 1, 1, 1}, 10, 10).l_total, 4.2, 1e-12);
    const auto r = loss_total({0.3, 0.7, 1.1, 2.0, 0.4}, 4, 10);
    EXPECT_NEAR(r.l_total, r.l_occ + r.l_sem + r.l_depth + r.gamma * r.l_scal_sem + r.l_scal_geo, 1e-9);
    EXPECT_EQ(r.gamma, 0.6);
    EXPECT_THROW(loss_total({std::nan(""), 0, 0, 0, 0}, 0, 1), NumericError);
}

TEST(Losses, NonNegativeOnRandomInputs) {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::uint8_t> y(12);
        for (auto& v : y) v = rng.bernoulli(0.1) ? 255 : static_cast<std::uint8_t>(rng.uniform_int(0, 3));
        y[0] = 1;
        const auto labels = labels_of(y, 3);
        auto l2 = voxel_tensor(12, 2), l4 = voxel_tensor(12, 4);
        for (auto& x : l2.storage()) x = rng.uniform(-5, 5);
        for (auto& x : l4.storage()) x = rng.uniform(-5, 5);
        EXPECT_GE(loss_occ(l2, labels).value, 0.0);
        EXPECT_GE(loss_sem(l4, labels).value, 0.0);
        EXPECT_GE(loss_scal(softmax_rows(l4), labels, ScalMode::sem).value, 0.0);
        EXPECT_GE(loss_scal(softmax_rows(l4), labels, ScalMode::geo).value, 0.0);
    }
}

TEST(Losses, GradientsMatchFiniteDifferences) {
    Rng rng(3);
    const auto labels = labels_of({0, 1, 2, 3, 255, 1, 0, 2, 2, 0, 3, 1}, 3);
    auto l2 = voxel_tensor(12, 2), l4 = voxel_tensor(12, 4);
    for (auto& x : l2.storage()) x = rng.uniform(-2, 2);
    for (auto& x : l4.storage()) x = rng.uniform(-2, 2);

    EXPECT_LT(max_rel_error(l2, loss_occ(l2, labels).grad, [&] { return loss_occ(l2, labels).value; }), 1e-4);
    EXPECT_LT(max_rel_error(l4, loss_sem(l4, labels).grad, [&] { return loss_sem(l4, labels).value; }), 1e-4);
    const SemanticLossOptions opts{{0.5, 1.0, 2.0, 1.5}, true};
    EXPECT_LT(max_rel_error(l4, loss_sem(l4, labels, opts).grad, [&] { return loss_sem(l4, labels, opts).value; }), 1e-4);

    for (const auto mode : {ScalMode::sem, ScalMode::geo}) {
        const auto p = softmax_rows(l4);
        const auto grad_logits = softmax_backward(p, loss_scal(p, labels, mode).grad);
        EXPECT_LT(max_rel_error(l4, grad_logits, [&] { return loss_scal(softmax_rows(l4), labels, mode).value; }), 1e-4);
    }

    DepthTarget<double> t{Tensor<double>(Shape{2, 2, 5}), {1, 1, 0, 1}, {0, 4, -1, 2}};
    Tensor<double> dl(Shape{2, 2, 5});
    for (auto& x : dl.storage()) x = rng.uniform(-2, 2);
    const auto dg = loss_depth(DepthLogits<double>{dl}, t).grad;
    EXPECT_LT(max_rel_error(dl, dg, [&] { return loss_depth(DepthLogits<double>{dl}, t).value; }), 1e-4);
}

TEST(Losses, IgnoredVoxelsHaveNoInfluence) {
    Rng rng(4);
    const auto labels = labels_of({0, 255, 2, 1, 255, 3}, 3);
    auto l2 = voxel_tensor(6, 2), l4 = voxel_tensor(6, 4);
    for (auto& x : l2.storage()) x = rng.uniform(-2, 2);
    for (auto& x : l4.storage()) x = rng.uniform(-2, 2);
    const double occ = loss_occ(l2, labels).value, sem = loss_sem(l4, labels).value;
    const double ss = loss_scal(softmax_rows(l4), labels, ScalMode::sem).value;
    const double sg = loss_scal(softmax_rows(l4), labels, ScalMode::geo).value;
    const auto g2 = loss_occ(l2, labels).grad;
    const auto g4 = loss_sem(l4, labels).grad;
    for (std::size_t v : {1u, 4u}) {
        for (int c = 0; c < 2; ++c) EXPECT_EQ(g2[v * 2 + c], 0.0);
        for (int c = 0; c < 4; ++c) EXPECT_EQ(g4[v * 4 + c], 0.0);
        for (int c = 0; c < 2; ++c) l2[v * 2 + c] = rng.uniform(-9, 9);
        for (int c = 0; c < 4; ++c) l4[v * 4 + c] = rng.uniform(-9, 9);
    }
    EXPECT_EQ(loss_occ(l2, labels).value, occ);
    EXPECT_EQ(loss_sem(l4, labels).value, sem);
    EXPECT_EQ(loss_scal(softmax_rows(l4), labels, ScalMode::sem).value, ss);
    EXPECT_EQ(loss_scal(softmax_rows(l4), labels, ScalMode::geo).value, sg);
}
