#include <gtest/gtest.h>

#include <cmath>

#include "occdepth/oad.hpp"
#include "occdepth/rng.hpp"
#include "test_support.hpp"

using namespace occdepth;

namespace {

const DepthBinSpec kSpec(0.5, 8.0, 6, DepthBinning::linear_increasing);

CameraModel front_camera() {
    return CameraModel(test::intrinsics(16.0, 16.0, 16.0), Eigen::Matrix4d::Identity(), 32, 32);
}

Tensor<double> random_probs(Rng& rng, std::size_t h, std::size_t w, std::size_t d) {
    Tensor<double> logits(Shape{h, w, d});
    for (auto& x : logits.storage()) x = rng.uniform(-2, 2);
    return depth_softmax(DepthLogits<double>{logits}, DepthBinSpec(0.5, 8.0, static_cast<int>(d),
                                                                    DepthBinning::linear_increasing))
        .probs;
}

// Zero-padded trilinear lookup written directly from the lattice convention.
double trilinear_oracle(const Tensor<double>& p, double y, double x, double z) {
    const int dims[3] = {static_cast<int>(p.dim(0)), static_cast<int>(p.dim(1)), static_cast<int>(p.dim(2))};
    const double c[3] = {y, x, z};
    double acc = 0.0;
    for (int dy = 0; dy <= 1; ++dy)
        for (int dx = 0; dx <= 1; ++dx)
            for (int dz = 0; dz <= 1; ++dz) {
                const int off[3] = {dy, dx, dz};
                double w = 1.0;
                int idx[3];
                bool inside = true;
                for (int a = 0; a < 3; ++a) {
                    const double f = std::floor(c[a]);
                    idx[a] = static_cast<int>(f) + off[a];
                    w *= off[a] ? c[a] - f : 1.0 - (c[a] - f);
                    inside = inside && idx[a] >= 0 && idx[a] < dims[a];
                }
                if (inside) acc += w * p.at(idx[0], idx[1], idx[2]);
            }
    return acc;
}

}  // namespace

TEST(DepthSoftmax, HandValues) {
    const DepthBinSpec spec(0.5, 8.0, 3, DepthBinning::uniform);
    Tensor<double> logits(Shape{1, 2, 3});
    logits.at(0, 1, 0) = std::log(1.0);
    logits.at(0, 1, 1) = std::log(2.0);
    logits.at(0, 1, 2) = std::log(3.0);
    const auto p = depth_softmax(DepthLogits<double>{logits}, spec).probs;
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(p.at(0, 0, k), 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(p.at(0, 1, 0), 1.0 / 6.0, 1e-15);
    EXPECT_NEAR(p.at(0, 1, 1), 2.0 / 6.0, 1e-15);
    EXPECT_NEAR(p.at(0, 1, 2), 3.0 / 6.0, 1e-15);

    Tensor<double> sat(Shape{1, 1, 3});
    sat[1] = 30.0;
    EXPECT_NEAR(depth_softmax(DepthLogits<double>{sat}, spec).probs[1], 1.0, 1e-9);
}

TEST(DepthSoftmax, RowsSumToOne) {
    Rng rng(1);
    Tensor<double> logits(Shape{4, 5, 6});
    for (auto& x : logits.storage()) x = rng.uniform(-50, 50);
    const auto p = depth_softmax(DepthLogits<double>{logits}, kSpec).probs;
    for (std::size_t px = 0; px < 20; ++px) {
        double s = 0;
        for (int k = 0; k < 6; ++k) {
            EXPECT_GE(p[px * 6 + k], 0.0);
            s += p[px * 6 + k];
        }
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(FrustumToVoxel, BehindCameraIsZeroAndUniformInteriorIsOneOverD) {
    const FrustumDistribution<double> uniform{Tensor<double>(Shape{4, 4, 6}, 1.0 / 6.0), kSpec, 8};
    const VoxelGridSpec behind(Eigen::Vector3d(-1, -1, -4), {2, 2, 2}, 0.5);
    const auto back = frustum_to_voxel(uniform, behind, front_camera());
    for (double x : back.values.storage()) EXPECT_EQ(x, 0.0);

    // Centroids within the central pixel span and between the first and last bin centers.
    const VoxelGridSpec interior(Eigen::Vector3d(-0.5, -0.5, 2.0), {2, 2, 2}, 0.5);
    const auto inside = frustum_to_voxel(uniform, interior, front_camera());
    for (double x : inside.values.storage()) EXPECT_NEAR(x, 1.0 / 6.0, 1e-9);
}

TEST(FrustumToVoxel, LatticeAlignedOneHotGivesOne) {
    // Camera with f = 8 on a 16x16 image, S = 8: pixel (1, 1) of the 2x2 map is
    // centered at full-res (12, 12). A voxel at depth c_3 through that point hits
    // lattice point (1, 1, 3) exactly.
    const CameraModel cam(test::intrinsics(8.0, 8.0, 8.0), Eigen::Matrix4d::Identity(), 16, 16);
    const DepthBinSpec spec(1.0, 7.0, 6, DepthBinning::uniform);
    const double depth = bin_centers(spec)[3];
    const double size = 0.1;
    const Eigen::Vector3d center(4.0 * depth / 8.0, 4.0 * depth / 8.0, depth);
    const VoxelGridSpec g(center - Eigen::Vector3d::Constant(size / 2), {1, 1, 1}, size);
    Tensor<double> probs(Shape{2, 2, 6});
    probs.at(1, 1, 3) = 1.0;
    const auto prior = frustum_to_voxel(FrustumDistribution<double>{probs, spec, 8}, g, cam);
    EXPECT_NEAR(prior.values[0], 1.0, 1e-9);
}

TEST(FrustumToVoxel, MatchesTrilinearOracleBoundedAndLinear) {
    Rng rng(2);
    const CameraModel cam = front_camera();
    const VoxelGridSpec g(Eigen::Vector3d(-3, -3, 0.2), {8, 8, 10}, 0.75);
    const auto p = random_probs(rng, 4, 4, 6);
    const auto q = random_probs(rng, 4, 4, 6);
    const auto fp = frustum_to_voxel(FrustumDistribution<double>{p, kSpec, 8}, g, cam);
    const auto fq = frustum_to_voxel(FrustumDistribution<double>{q, kSpec, 8}, g, cam);
    Tensor<double> mix(p.shape());
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = 0.3 * p[i] + 1.7 * q[i];
    const auto fm = frustum_to_voxel(FrustumDistribution<double>{mix, kSpec, 8}, g, cam);
    int sampled = 0;
    for (std::size_t v = 0; v < g.count(); ++v) {
        const auto pr = project_point(cam, g.centroid(v));
        double expect = 0.0;
        if (pr.valid && pr.depth >= kSpec.d_min() && pr.depth <= kSpec.d_max()) {
            expect = trilinear_oracle(p, pr.v / 8 - 0.5, pr.u / 8 - 0.5, lid_inverse(kSpec, pr.depth) - 0.5);
            ++sampled;
        }
        EXPECT_NEAR(fp.values[v], expect, 1e-12);
        EXPECT_GE(fp.values[v], -1e-12);
        EXPECT_LE(fp.values[v], 1.0 + 1e-6);
        EXPECT_NEAR(fm.values[v], 0.3 * fp.values[v] + 1.7 * fq.values[v], 1e-9);
    }
    EXPECT_GT(sampled, 20);
}

TEST(OverlapMask, IdenticalDisjointAndBruteForce) {
    const VoxelGridSpec g(Eigen::Vector3d(-4, -4, -4), {8, 8, 8}, 1.0);
    const CameraModel cam = front_camera();
    const auto same = overlap_mask(g, CameraRig(cam, cam));
    for (std::size_t v = 0; v < g.count(); ++v)
        EXPECT_EQ(same.values[v], project_point(cam, g.centroid(v)).valid ? 0.5 : 1.0);

    Eigen::Matrix4d back = Eigen::Matrix4d::Identity();
    back(0, 0) = -1;
    back(2, 2) = -1;  // rotation by pi about y: looks down -z
    const auto disjoint = overlap_mask(g, CameraRig(cam, CameraModel(test::intrinsics(16, 16, 16), back, 32, 32)));
    for (double x : disjoint.values.storage()) EXPECT_EQ(x, 1.0);

    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const CameraRig rig(test::random_camera(rng, 32, 24), test::random_camera(rng, 32, 24));
        const auto mask = overlap_mask(g, rig);
        for (std::size_t v = 0; v < g.count(); ++v) {
            const bool both = project_point(rig.left, g.centroid(v)).valid && project_point(rig.right, g.centroid(v)).valid;
            ASSERT_EQ(mask.values[v], both ? 0.5 : 1.0);
        }
    }
}

TEST(OccupancyWeight, HandCasesAndLinearity) {
    const VoxelGridSpec g(Eigen::Vector3d::Zero(), {3, 1, 1}, 1.0);
    OverlapMask mask{Tensor<double>(Shape{3, 1, 1}, 1.0)};
    mask.values[0] = 0.5;
    std::vector<OccupancyPrior<double>> priors{{Tensor<double>(Shape{3, 1, 1}, 0.0)}, {Tensor<double>(Shape{3, 1, 1}, 0.0)}};
    FeatureVolume<double> feat(g, 2);
    for (std::size_t i = 0; i < 6; ++i) feat.values[i] = 1.0 + static_cast<double>(i);

    const auto zero = occupancy_weight<double>(priors, mask, feat);
    for (double x : zero.values.storage()) EXPECT_EQ(x, 0.0);

    priors[0].values[0] = priors[1].values[0] = 0.4;  // overlap voxel
    priors[0].values[1] = 0.3;                        // left-only voxel
    priors[1].values[2] = 0.8;                        // right-only voxel
    const auto out = occupancy_weight<double>(priors, mask, feat);
    EXPECT_NEAR(out.values[0], 0.4 * 1.0, 1e-15);
    EXPECT_NEAR(out.values[1], 0.4 * 2.0, 1e-15);
    EXPECT_NEAR(out.values[2], 0.3 * 3.0, 1e-15);
    EXPECT_NEAR(out.values[5], 0.8 * 6.0, 1e-15);

    FeatureVolume<double> feat2 = feat;
    for (auto& x : feat2.values.storage()) x *= -2.5;
    const auto out2 = occupancy_weight<double>(priors, mask, feat2);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(out2.values[i], -2.5 * out.values[i], 1e-12);

    EXPECT_THROW(occupancy_weight<double>(priors, OverlapMask{Tensor<double>(Shape{2, 1, 1}, 1.0)}, feat), ContractError);
}

TEST(DepthTarget, ConstantMinPoolAndHoles) {
    const DepthBinSpec spec(0.5, 8.0, 6, DepthBinning::uniform);
    const double c2 = bin_centers(spec)[2];
    Tensor<float> depth(Shape{16, 16}, static_cast<float>(c2));
    auto t = build_depth_target<double>(depth, spec);
    for (int cell = 0; cell < 4; ++cell) {
        EXPECT_EQ(t.bins[cell], 2);
        EXPECT_EQ(t.one_hot[cell * 6 + 2], 1.0);
    }

    Tensor<double> mixed(Shape{16, 16}, 9.0);
    mixed.at(3, 4) = 5.0;
    for (int y = 8; y < 16; ++y)
        for (int x = 0; x < 8; ++x) mixed.at(y, x) = 0.0;  // hole cell
    mixed.at(12, 12) = 0.0;                                  // one hole pixel in a valid cell
    const auto m = build_depth_target<double>(mixed, spec);
    EXPECT_EQ(m.bins[0], depth_to_bin(spec, 5.0));
    EXPECT_EQ(m.valid[2], 0);
    EXPECT_EQ(m.bins[2], -1);
    for (int k = 0; k < 6; ++k) EXPECT_EQ(m.one_hot[2 * 6 + k], 0.0);
    EXPECT_EQ(m.bins[3], depth_to_bin(spec, 9.0));
    EXPECT_EQ(m.valid_count(), 3u);
}

TEST(DepthTarget, MatchesMaskedPoolOracle) {
    Rng rng(4);
    const DepthBinSpec spec(0.5, 12.0, 16, DepthBinning::linear_increasing);
    Tensor<double> depth(Shape{32, 24});
    for (auto& x : depth.storage()) x = rng.bernoulli(0.3) ? 0.0 : rng.uniform(0.3, 14.0);
    for (int y = 16; y < 24; ++y)
        for (int x = 8; x < 16; ++x) depth.at(y, x) = 0.0;
    const auto t = build_depth_target<double>(depth, spec);
    for (int cy = 0; cy < 4; ++cy)
        for (int cx = 0; cx < 3; ++cx) {
            std::vector<double> valid;
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x)
                    if (depth.at(cy * 8 + y, cx * 8 + x) > 0) valid.push_back(depth.at(cy * 8 + y, cx * 8 + x));
            const std::size_t cell = static_cast<std::size_t>(cy) * 3 + cx;
            if (valid.empty()) {
                EXPECT_EQ(t.valid[cell], 0);
                continue;
            }
            EXPECT_EQ(t.bins[cell], depth_to_bin(spec, *std::min_element(valid.begin(), valid.end())));
        }
    EXPECT_EQ(t.valid[2 * 3 + 1], 0);
}

TEST(OadComposite, GradientMatchesFiniteDifferences) {
    Rng rng(5);
    Eigen::Matrix4d right = Eigen::Matrix4d::Identity();
    right(0, 3) = -0.3;
    const CameraRig rig(front_camera(), CameraModel(test::intrinsics(16, 16, 16), right, 32, 32));
    const VoxelGridSpec g(Eigen::Vector3d(-1.5, -1.5, 0.8), {4, 4, 4}, 0.75);
    Tensor<double> logits[2] = {Tensor<double>(Shape{4, 4, 6}), Tensor<double>(Shape{4, 4, 6})};
    for (auto& l : logits)
        for (auto& x : l.storage()) x = rng.uniform(-1, 1);
    FeatureVolume<double> feat(g, 3);
    for (auto& x : feat.values.storage()) x = rng.uniform(-1, 1);
    Tensor<double> probe(feat.values.shape());
    for (auto& x : probe.storage()) x = rng.uniform(-1, 1);
    const OverlapMask mask = overlap_mask(g, rig);

    auto forward = [&](std::vector<OccupancyPrior<double>>& priors, std::vector<FrustumDistribution<double>>& dists) {
        priors.clear();
        dists.clear();
        for (int c = 0; c < 2; ++c) {
            dists.push_back(depth_softmax(DepthLogits<double>{logits[c]}, kSpec));
            priors.push_back(frustum_to_voxel(dists.back(), g, rig[c]));
        }
        const auto out = occupancy_weight<double>(priors, mask, feat);
        double s = 0;
        for (std::size_t i = 0; i < out.values.size(); ++i) s += out.values[i] * probe[i];
        return s;
    };
    std::vector<OccupancyPrior<double>> priors;
    std::vector<FrustumDistribution<double>> dists;
    forward(priors, dists);
    Tensor<double> grad_prior;
    occupancy_weight_backward<double>(priors, mask, feat, probe, grad_prior);

    double worst = 0;
    for (int c = 0; c < 2; ++c) {
        Tensor<double> grad_probs(dists[c].probs.shape());
        frustum_plan_backward(grad_prior, make_frustum_plan(g, rig[c], kSpec), grad_probs);
        const auto grad_logits = softmax_backward(dists[c].probs, grad_probs);
        for (std::size_t i = 0; i < logits[c].size(); ++i) {
            const double keep = logits[c][i];
            logits[c][i] = keep + 1e-6;
            const double up = forward(priors, dists);
            logits[c][i] = keep - 1e-6;
            const double down = forward(priors, dists);
            logits[c][i] = keep;
            const double num = (up - down) / 2e-6;
            worst = std::max(worst, std::abs(num - grad_logits[i]) / std::max(1.0, std::abs(num)));
        }
    }
    EXPECT_LT(worst, 1e-4);
}
