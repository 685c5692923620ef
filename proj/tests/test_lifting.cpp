#include <gtest/gtest.h>

#include <cmath>

#include "occdepth/lifting.hpp"
#include "occdepth/rng.hpp"
#include "test_support.hpp"

using namespace occdepth;

namespace {

// 32x32 camera at the origin looking down +z.
CameraModel front_camera(int size = 32, double f = 16.0) {
    return CameraModel(test::intrinsics(f, size / 2.0, size / 2.0), Eigen::Matrix4d::Identity(), size, size);
}

CameraRig shifted_rig(double baseline = 0.2) {
    Eigen::Matrix4d right = Eigen::Matrix4d::Identity();
    right(0, 3) = -baseline;
    return CameraRig(front_camera(), CameraModel(test::intrinsics(16.0, 16.0, 16.0), right, 32, 32));
}

Tensor<double> random_map(Rng& rng, int h, int w, int c, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(Shape{static_cast<std::size_t>(h), static_cast<std::size_t>(w), static_cast<std::size_t>(c)});
    for (auto& x : t.storage()) x = rng.uniform(lo, hi);
    return t;
}

FeaturePyramid<double> random_pyramid(Rng& rng, int size, int c, double lo = -1.0, double hi = 1.0) {
    FeaturePyramid<double> p;
    for (std::size_t l = 0; l < 4; ++l) p.levels[l] = random_map(rng, size / kPyramidScales[l], size / kPyramidScales[l], c, lo, hi);
    return p;
}

FeaturePyramid<double> constant_pyramid(int size, int c, double value) {
    FeaturePyramid<double> p;
    for (std::size_t l = 0; l < 4; ++l) {
        const auto s = static_cast<std::size_t>(size / kPyramidScales[l]);
        p.levels[l] = Tensor<double>(Shape{s, s, static_cast<std::size_t>(c)}, value);
    }
    return p;
}

// Hand-written bilinear sample with pixel centers at integer + 0.5.
std::vector<double> bilinear_oracle(const Tensor<double>& map, double u, double v) {
    const int h = static_cast<int>(map.dim(0)), w = static_cast<int>(map.dim(1)), c = static_cast<int>(map.dim(2));
    std::vector<double> out(c, 0.0);
    const double x = u - 0.5, y = v - 0.5;
    const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
    const double ax = x - x0, ay = y - y0;
    const int xs[2] = {x0, x0 + 1}, ys[2] = {y0, y0 + 1};
    const double wx[2] = {1 - ax, ax}, wy[2] = {1 - ay, ay};
    for (int b = 0; b < 2; ++b)
        for (int a = 0; a < 2; ++a) {
            const double wt = wx[a] * wy[b];
            if (wt == 0.0) continue;
            if (xs[a] < 0 || ys[b] < 0 || xs[a] >= w || ys[b] >= h) return std::vector<double>(c, 0.0);
            for (int ch = 0; ch < c; ++ch) out[ch] += wt * map.at(ys[b], xs[a], ch);
        }
    return out;
}

FeatureVolume<double> volume_from(const VoxelGridSpec& g, const std::vector<std::vector<double>>& rows) {
    FeatureVolume<double> v(g, static_cast<int>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), v.voxel(i));
    return v;
}

}  // namespace

TEST(LiftSingle, AllBehindCameraIsZero) {
    Rng rng(1);
    const VoxelGridSpec g(Eigen::Vector3d(-1, -1, -5), {3, 3, 3}, 0.5);
    const auto vol = lift_single(random_map(rng, 16, 16, 4), 2, g, front_camera());
    for (double x : vol.values.storage()) EXPECT_EQ(x, 0.0);
}

TEST(LiftSingle, ConstantMapFillsVisibleVoxels) {
    const VoxelGridSpec g(Eigen::Vector3d(-0.5, -0.5, 2.0), {4, 4, 4}, 0.25);
    const Tensor<double> map(Shape{8, 8, 3}, 0.7);
    const auto vol = lift_single(map, 4, g, front_camera());
    for (double x : vol.values.storage()) EXPECT_NEAR(x, 0.7, 1e-12);
}

TEST(LiftSingle, TwoVoxelGridMatchesProjectThenSampleOracle) {
    Rng rng(2);
    const CameraModel cam(test::intrinsics(3.0, 2.1, 1.8), Eigen::Matrix4d::Identity(), 4, 4);
    const Tensor<double> map = random_map(rng, 4, 4, 2);
    const VoxelGridSpec g(Eigen::Vector3d(-0.3, -0.1, 2.0), {2, 1, 1}, 0.4);
    const auto vol = lift_single(map, 1, g, cam);
    for (std::size_t i = 0; i < 2; ++i) {
        const Eigen::Vector3d c = g.centroid(i);
        const double u = 3.0 * c.x() / c.z() + 2.1, v = 3.0 * c.y() / c.z() + 1.8;
        const auto expect = bilinear_oracle(map, u, v);
        for (int ch = 0; ch < 2; ++ch) EXPECT_NEAR(vol.voxel(i)[ch], expect[ch], 1e-12);
    }
}

TEST(LiftSingle, ScaleDividesPixelCoordinates) {
    Rng rng(3);
    const CameraModel cam = front_camera();
    const Tensor<double> map = random_map(rng, 4, 4, 3);
    const VoxelGridSpec g(Eigen::Vector3d(-1, -1, 1.5), {5, 5, 3}, 0.4);
    const auto vol = lift_single(map, 8, g, cam);
    for (std::size_t i = 0; i < g.count(); ++i) {
        const auto p = project_point(cam, g.centroid(i));
        const auto expect = p.valid ? bilinear_oracle(map, p.u / 8, p.v / 8) : std::vector<double>(3, 0.0);
        for (int ch = 0; ch < 3; ++ch) EXPECT_NEAR(vol.voxel(i)[ch], expect[ch], 1e-12);
    }
}

TEST(LiftSingle, RejectsInconsistentScale) {
    EXPECT_THROW(lift_single(Tensor<double>(Shape{8, 8, 1}), 2, VoxelGridSpec({0, 0, 1}, {1, 1, 1}, 1), front_camera()),
                 ContractError);
}

TEST(FuseStereo, OutOfViewCasesAndHandCases) {
    const VoxelGridSpec g(Eigen::Vector3d::Zero(), {4, 1, 1}, 1.0);
    const auto left = volume_from(g, {{1, 2}, {0, 0}, {3, -1}, {1, 0}});
    const auto right = volume_from(g, {{0, 0}, {4, 5}, {3, -1}, {0, 2}});
    const auto out = fuse_stereo(left, right);
    EXPECT_EQ(out.voxel(0)[0], 1.0);  // right out of view
    EXPECT_EQ(out.voxel(0)[1], 2.0);
    EXPECT_EQ(out.voxel(1)[0], 4.0);  // left out of view
    EXPECT_EQ(out.voxel(1)[1], 5.0);
    EXPECT_NEAR(out.voxel(2)[0], 3.0, 1e-12);  // identical, w = 1
    EXPECT_NEAR(out.voxel(2)[1], -1.0, 1e-12);
    EXPECT_EQ(out.voxel(3)[0], 0.0);  // orthogonal, w = 0
    EXPECT_EQ(out.voxel(3)[1], 0.0);
}

TEST(FuseStereo, NegativeCosineClampsToZero) {
    const VoxelGridSpec g(Eigen::Vector3d::Zero(), {1, 1, 1}, 1.0);
    const auto out = fuse_stereo(volume_from(g, {{1, 0}}), volume_from(g, {{-1, 0.5}}));
    EXPECT_EQ(out.voxel(0)[0], 0.0);
    EXPECT_EQ(out.voxel(0)[1], 0.0);
}

TEST(FuseStereo, PlainMeanKeepsVisibilityCases) {
    const VoxelGridSpec g(Eigen::Vector3d::Zero(), {2, 1, 1}, 1.0);
    const auto out = fuse_stereo(volume_from(g, {{1, 0}, {2, 2}}), volume_from(g, {{0, 1}, {0, 0}}), FusionMode::plain_mean);
    EXPECT_EQ(out.voxel(0)[0], 0.5);
    EXPECT_EQ(out.voxel(0)[1], 0.5);
    EXPECT_EQ(out.voxel(1)[0], 2.0);
}

TEST(FuseStereo, SymmetryIdempotenceAndScaleInvariance) {
    Rng rng(4);
    const VoxelGridSpec g(Eigen::Vector3d::Zero(), {5, 4, 3}, 1.0);
    FeatureVolume<double> a(g, 6), b(g, 6);
    for (auto& x : a.values.storage()) x = rng.uniform(-1, 1);
    for (auto& x : b.values.storage()) x = rng.uniform(-1, 1);
    std::fill(a.voxel(3), a.voxel(3) + 6, 0.0);
    std::fill(b.voxel(7), b.voxel(7) + 6, 0.0);

    EXPECT_EQ(fuse_stereo(a, b).values, fuse_stereo(b, a).values);

    const auto self = fuse_stereo(a, a);
    for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(self.values[i], a.values[i], 1e-12);

    FeatureVolume<double> a2 = a, b2 = b;
    for (auto& x : a2.values.storage()) x *= 3.5;
    for (auto& x : b2.values.storage()) x *= 3.5;
    const auto base = fuse_stereo(a, b);
    const auto scaled = fuse_stereo(a2, b2);
    for (std::size_t i = 0; i < base.values.size(); ++i) EXPECT_NEAR(scaled.values[i], 3.5 * base.values[i], 1e-9);

    for (std::size_t v = 0; v < g.count(); ++v) {
        const double c = feature_cosine<double>({a.voxel(v), 6}, {b.voxel(v), 6});
        EXPECT_LE(std::abs(c), 1.0 + 1e-6);
    }
}

TEST(LiftAndFuse, ConstantPyramidsGiveFourTimesValue) {
    const CameraRig rig = shifted_rig();
    const VoxelGridSpec g(Eigen::Vector3d(-0.3, -0.3, 2.0), {3, 3, 3}, 0.2);
    const auto vol = lift_and_fuse(constant_pyramid(32, 2, 0.25), constant_pyramid(32, 2, 0.25), g, rig);
    for (double x : vol.values.storage()) EXPECT_NEAR(x, 1.0, 1e-12);
}

TEST(LiftAndFuse, SingleScaleEqualsThatScalesFusion) {
    Rng rng(5);
    const CameraRig rig = shifted_rig();
    const VoxelGridSpec g(Eigen::Vector3d(-1, -1, 1.0), {4, 4, 4}, 0.5);
    auto left = constant_pyramid(32, 3, 0.0), right = constant_pyramid(32, 3, 0.0);
    left.levels[1] = random_map(rng, 16, 16, 3);
    right.levels[1] = random_map(rng, 16, 16, 3);
    const auto vol = lift_and_fuse(left, right, g, rig);
    const auto expect = fuse_stereo(lift_single(left.levels[1], 2, g, rig.left), lift_single(right.levels[1], 2, g, rig.right));
    for (std::size_t i = 0; i < vol.values.size(); ++i) EXPECT_NEAR(vol.values[i], expect.values[i], 1e-12);
}

TEST(LiftAndFuse, DoublingInputsDoublesOutput) {
    Rng rng(6);
    const CameraRig rig = shifted_rig();
    const VoxelGridSpec g(Eigen::Vector3d(-1, -1, 1.0), {4, 4, 4}, 0.5);
    const auto left = random_pyramid(rng, 32, 3), right = random_pyramid(rng, 32, 3);
    auto left2 = left, right2 = right;
    for (auto& l : left2.levels) for (auto& x : l.storage()) x *= 2;
    for (auto& l : right2.levels) for (auto& x : l.storage()) x *= 2;
    const auto a = lift_and_fuse(left, right, g, rig), b = lift_and_fuse(left2, right2, g, rig);
    for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(b.values[i], 2 * a.values[i], 1e-9);
}

TEST(LiftAndFuse, RejectsMismatchedPyramid) {
    Rng rng(7);
    auto left = random_pyramid(rng, 32, 3);
    left.levels[2] = random_map(rng, 5, 8, 3);
    EXPECT_THROW(lift_and_fuse(left, random_pyramid(rng, 32, 3), VoxelGridSpec({0, 0, 1}, {1, 1, 1}, 1), shifted_rig()),
                 ContractError);
}

TEST(LiftAndFuse, BackwardMatchesFiniteDifferences) {
    Rng rng(8);
    const CameraRig rig = shifted_rig();
    const VoxelGridSpec g(Eigen::Vector3d(-0.4, -0.4, 1.5), {3, 3, 3}, 0.3);
    auto left = random_pyramid(rng, 32, 2, 0.1, 1.0), right = random_pyramid(rng, 32, 2, 0.1, 1.0);
    Tensor<double> probe(Shape{3, 3, 3, 2});
    for (auto& x : probe.storage()) x = rng.uniform(-1, 1);
    auto objective = [&] {
        const auto v = lift_and_fuse(left, right, g, rig);
        double s = 0;
        for (std::size_t i = 0; i < v.values.size(); ++i) s += v.values[i] * probe[i];
        return s;
    };
    StereoLifter<double> lifter(g, rig);
    lifter.forward(left, right);
    const auto [gl, gr] = lifter.backward(probe);
    double worst = 0;
    for (std::size_t l = 0; l < 4; ++l) {
        for (std::size_t i = 0; i < left.levels[l].size(); i += 7) {
            const double keep = left.levels[l][i];
            left.levels[l][i] = keep + 1e-6;
            const double up = objective();
            left.levels[l][i] = keep - 1e-6;
            const double down = objective();
            left.levels[l][i] = keep;
            const double num = (up - down) / 2e-6;
            worst = std::max(worst, std::abs(num - gl.levels[l][i]) / std::max(1.0, std::abs(num)));
        }
        for (std::size_t i = 3; i < right.levels[l].size(); i += 7) {
            const double keep = right.levels[l][i];
            right.levels[l][i] = keep + 1e-6;
            const double up = objective();
            right.levels[l][i] = keep - 1e-6;
            const double down = objective();
            right.levels[l][i] = keep;
            const double num = (up - down) / 2e-6;
            worst = std::max(worst, std::abs(num - gr.levels[l][i]) / std::max(1.0, std::abs(num)));
        }
    }
    EXPECT_LT(worst, 1e-4);
}
