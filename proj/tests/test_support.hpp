#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include <Eigen/Geometry>

#include "occdepth/camera_geometry.hpp"
#include "occdepth/rng.hpp"

namespace occdepth::test {

inline Eigen::Matrix3d random_rotation(Rng& rng) {
    Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    q.normalize();
    return q.toRotationMatrix();
}

/// Random pinhole camera looking roughly at the origin from a few meters away.
inline CameraModel random_camera(Rng& rng, int width, int height) {
    Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
    k(0, 0) = rng.uniform(0.5, 1.5) * width;
    k(1, 1) = rng.uniform(0.5, 1.5) * width;
    k(0, 2) = rng.uniform(0.3, 0.7) * width;
    k(1, 2) = rng.uniform(0.3, 0.7) * height;
    const Eigen::Matrix3d r = random_rotation(rng);
    Eigen::Matrix4d e = Eigen::Matrix4d::Identity();
    e.topLeftCorner<3, 3>() = r;
    e.topRightCorner<3, 1>() = Eigen::Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(2, 6));
    return CameraModel(k, e, width, height);
}

inline CameraModel camera_at(const Eigen::Matrix3d& k, const Eigen::Matrix3d& r, const Eigen::Vector3d& center,
                             int width, int height) {
    Eigen::Matrix4d e = Eigen::Matrix4d::Identity();
    e.topLeftCorner<3, 3>() = r;
    e.topRightCorner<3, 1>() = -r * center;
    return CameraModel(k, e, width, height);
}

inline Eigen::Matrix3d intrinsics(double f, double cx, double cy) {
    Eigen::Matrix3d k;
    k << f, 0, cx, 0, f, cy, 0, 0, 1;
    return k;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("occdepth_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace occdepth::test
