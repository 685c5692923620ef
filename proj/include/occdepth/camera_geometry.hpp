#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "occdepth/error.hpp"

namespace occdepth {

// Pixel convention used throughout: pixel (x, y) covers [x, x+1) x [y, y+1)
// and its center sits at (x + 0.5, y + 0.5). Projections emit continuous
// coordinates in this frame.

/// Pinhole camera: zero-skew intrinsics plus a rigid world-to-camera transform.
/// Camera frame is x right, y down, z forward.
class CameraModel {
public:
    CameraModel(const Eigen::Matrix3d& intrinsics, const Eigen::Matrix4d& cam_from_world, int image_width,
                int image_height)
        : intrinsics_(intrinsics), cam_from_world_(cam_from_world), width_(image_width), height_(image_height) {
        require(image_width > 0 && image_height > 0, "CameraModel: image dimensions must be positive");
        require(intrinsics(0, 0) > 0.0 && intrinsics(1, 1) > 0.0, "CameraModel: focal lengths must be positive");
        require(intrinsics(0, 1) == 0.0, "CameraModel: intrinsics must have zero skew");
        require(intrinsics(1, 0) == 0.0 && intrinsics(2, 0) == 0.0 && intrinsics(2, 1) == 0.0 &&
                    intrinsics(2, 2) == 1.0,
                "CameraModel: intrinsics must be upper triangular with K(2,2) = 1");
        const Eigen::Matrix3d rotation = cam_from_world.topLeftCorner<3, 3>();
        const double ortho_err = (rotation * rotation.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
        require(ortho_err <= 1e-9, "CameraModel: cam_from_world rotation is not orthonormal");
        require(rotation.determinant() > 0.0, "CameraModel: cam_from_world rotation must be proper (det = +1)");
        require(cam_from_world(3, 0) == 0.0 && cam_from_world(3, 1) == 0.0 && cam_from_world(3, 2) == 0.0 &&
                    cam_from_world(3, 3) == 1.0,
                "CameraModel: cam_from_world must be an affine rigid transform");
    }

    [[nodiscard]] const Eigen::Matrix3d& intrinsics() const noexcept { return intrinsics_; }
    [[nodiscard]] const Eigen::Matrix4d& cam_from_world() const noexcept { return cam_from_world_; }
    [[nodiscard]] int width() const noexcept { return width_; }
    [[nodiscard]] int height() const noexcept { return height_; }
    [[nodiscard]] double fx() const noexcept { return intrinsics_(0, 0); }
    [[nodiscard]] double fy() const noexcept { return intrinsics_(1, 1); }
    [[nodiscard]] double cx() const noexcept { return intrinsics_(0, 2); }
    [[nodiscard]] double cy() const noexcept { return intrinsics_(1, 2); }

    [[nodiscard]] Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const {
        return cam_from_world_.topLeftCorner<3, 3>() * world + cam_from_world_.topRightCorner<3, 1>();
    }

    [[nodiscard]] Eigen::Vector3d camera_center() const {
        const Eigen::Matrix3d r = cam_from_world_.topLeftCorner<3, 3>();
        return -r.transpose() * cam_from_world_.topRightCorner<3, 1>();
    }

    /// World-frame direction of the ray through continuous pixel (u, v),
    /// scaled so that its camera-frame z component is 1 (ray parameter = depth).
    [[nodiscard]] Eigen::Vector3d ray_direction(double u, double v) const {
        const Eigen::Vector3d cam_dir((u - cx()) / fx(), (v - cy()) / fy(), 1.0);
        return cam_from_world_.topLeftCorner<3, 3>().transpose() * cam_dir;
    }

private:
    Eigen::Matrix3d intrinsics_;
    Eigen::Matrix4d cam_from_world_;
    int width_;
    int height_;
};

struct CameraRig {
    CameraModel left;
    CameraModel right;

    CameraRig(CameraModel l, CameraModel r) : left(std::move(l)), right(std::move(r)) {
        require(left.width() == right.width() && left.height() == right.height(),
                "CameraRig: both cameras must share image dimensions");
    }

    [[nodiscard]] const CameraModel& operator[](int index) const { return index == 0 ? left : right; }
};

/// Axis-aligned voxel lattice. Linear voxel index is (i * Y + j) * Z + k.
class VoxelGridSpec {
public:
    VoxelGridSpec(Eigen::Vector3d origin, std::array<int, 3> dims, double voxel_size)
        : origin_(std::move(origin)), dims_(dims), voxel_size_(voxel_size) {
        require(dims[0] >= 1 && dims[1] >= 1 && dims[2] >= 1, "VoxelGridSpec: dims must all be >= 1");
        require(voxel_size > 0.0 && std::isfinite(voxel_size), "VoxelGridSpec: voxel_size must be positive");
    }

    [[nodiscard]] const Eigen::Vector3d& origin() const noexcept { return origin_; }
    [[nodiscard]] const std::array<int, 3>& dims() const noexcept { return dims_; }
    [[nodiscard]] double voxel_size() const noexcept { return voxel_size_; }
    [[nodiscard]] std::size_t count() const noexcept {
        return static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
    }
    [[nodiscard]] std::size_t index(int i, int j, int k) const noexcept {
        return (static_cast<std::size_t>(i) * dims_[1] + j) * dims_[2] + k;
    }
    [[nodiscard]] std::array<int, 3> coords(std::size_t index) const noexcept {
        const int k = static_cast<int>(index % dims_[2]);
        const std::size_t ij = index / dims_[2];
        return {static_cast<int>(ij / dims_[1]), static_cast<int>(ij % dims_[1]), k};
    }
    [[nodiscard]] Eigen::Vector3d centroid(int i, int j, int k) const {
        return origin_ + Eigen::Vector3d(i + 0.5, j + 0.5, k + 0.5) * voxel_size_;
    }
    [[nodiscard]] Eigen::Vector3d centroid(std::size_t index) const {
        const auto c = coords(index);
        return centroid(c[0], c[1], c[2]);
    }

    friend bool operator==(const VoxelGridSpec& a, const VoxelGridSpec& b) {
        return a.origin_ == b.origin_ && a.dims_ == b.dims_ && a.voxel_size_ == b.voxel_size_;
    }

private:
    Eigen::Vector3d origin_;
    std::array<int, 3> dims_;
    double voxel_size_;
};

/// Projection of one point. Invalid projections carry u = v = kInvalidCoordinate;
/// depth keeps the camera-frame z either way.
struct Projection {
    static constexpr double kInvalidCoordinate = -1.0;
    double u = kInvalidCoordinate;
    double v = kInvalidCoordinate;
    double depth = 0.0;
    bool valid = false;
};

inline Projection project_point(const CameraModel& cam, const Eigen::Vector3d& world) {
    const Eigen::Vector3d p = cam.to_camera(world);
    Projection out;
    out.depth = p.z();
    if (!(p.z() > 0.0)) return out;
    const double u = cam.fx() * p.x() / p.z() + cam.cx();
    const double v = cam.fy() * p.y() / p.z() + cam.cy();
    if (u >= 0.0 && u < cam.width() && v >= 0.0 && v < cam.height()) {
        out.u = u;
        out.v = v;
        out.valid = true;
    }
    return out;
}

/// Projects every voxel centroid, in linear voxel order.
inline std::vector<Projection> project_voxels(const VoxelGridSpec& grid, const CameraModel& cam) {
    std::vector<Projection> out(grid.count());
    for (std::size_t idx = 0; idx < out.size(); ++idx) out[idx] = project_point(cam, grid.centroid(idx));
    return out;
}

/// Four-corner bilinear footprint in a row-major H x W lattice. Corners with a
/// zero weight are dropped (index -1), so a sample exactly on a border pixel
/// center stays inside the image.
struct BilinearTap {
    std::array<std::int32_t, 4> index{-1, -1, -1, -1};
    std::array<double, 4> weight{0.0, 0.0, 0.0, 0.0};
    bool valid = false;
};

inline BilinearTap bilinear_tap(int height, int width, double u, double v, bool valid) {
    BilinearTap tap;
    if (!valid || !std::isfinite(u) || !std::isfinite(v)) return tap;
    const double fx = u - 0.5;
    const double fy = v - 0.5;
    const double x0 = std::floor(fx);
    const double y0 = std::floor(fy);
    const double ax = fx - x0;
    const double ay = fy - y0;
    const std::array<double, 4> weights{(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
    const std::array<std::array<double, 2>, 4> corners{{{x0, y0}, {x0 + 1, y0}, {x0, y0 + 1}, {x0 + 1, y0 + 1}}};
    for (int c = 0; c < 4; ++c) {
        if (weights[c] == 0.0) continue;
        const double cx = corners[c][0];
        const double cy = corners[c][1];
        if (cx < 0 || cy < 0 || cx > width - 1 || cy > height - 1) return BilinearTap{};
        tap.index[c] = static_cast<std::int32_t>(cy) * width + static_cast<std::int32_t>(cx);
        tap.weight[c] = weights[c];
    }
    tap.valid = true;
    return tap;
}

/// Bilinear sample of an H x W x C map (channels innermost). Zero vector when
/// the projection is invalid or the footprint leaves the image.
template <typename T>
std::vector<T> sample_bilinear(std::span<const T> map, int height, int width, int channels, double u, double v,
                               bool valid) {
    require(map.size() == static_cast<std::size_t>(height) * width * channels, "sample_bilinear: map size mismatch");
    std::vector<T> out(channels, T{0});
    const BilinearTap tap = bilinear_tap(height, width, u, v, valid);
    if (!tap.valid) return out;
    for (int c = 0; c < 4; ++c) {
        if (tap.index[c] < 0) continue;
        const T w = static_cast<T>(tap.weight[c]);
        const T* px = map.data() + static_cast<std::size_t>(tap.index[c]) * channels;
        for (int ch = 0; ch < channels; ++ch) out[ch] += w * px[ch];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Depth discretisation

enum class DepthBinning { uniform, linear_increasing, spacing_increasing };

inline std::string_view to_string(DepthBinning mode) {
    switch (mode) {
        case DepthBinning::uniform: return "UD";
        case DepthBinning::linear_increasing: return "LID";
        case DepthBinning::spacing_increasing: return "SID";
    }
    return "?";
}

inline DepthBinning parse_depth_binning(std::string_view name) {
    if (name == "UD") return DepthBinning::uniform;
    if (name == "LID") return DepthBinning::linear_increasing;
    if (name == "SID") return DepthBinning::spacing_increasing;
    throw ContractError("unknown depth discretisation '" + std::string(name) + "' (expected UD, LID or SID)");
}

class DepthBinSpec {
public:
    DepthBinSpec(double d_min, double d_max, int bins, DepthBinning mode)
        : d_min_(d_min), d_max_(d_max), bins_(bins), mode_(mode) {
        require(d_min >= 0.0 && d_min < d_max && std::isfinite(d_max), "DepthBinSpec: need 0 <= d_min < d_max");
        require(mode != DepthBinning::spacing_increasing || d_min > 0.0, "DepthBinSpec: SID needs d_min > 0");
        require(bins >= 2, "DepthBinSpec: need at least 2 bins");
    }

    [[nodiscard]] double d_min() const noexcept { return d_min_; }
    [[nodiscard]] double d_max() const noexcept { return d_max_; }
    [[nodiscard]] int bins() const noexcept { return bins_; }
    [[nodiscard]] DepthBinning mode() const noexcept { return mode_; }

    friend bool operator==(const DepthBinSpec&, const DepthBinSpec&) = default;

private:
    double d_min_;
    double d_max_;
    int bins_;
    DepthBinning mode_;
};

/// Linear-increasing discretisation: depth at (possibly fractional) bin coordinate.
inline double lid_center(const DepthBinSpec& spec, double bin_coordinate) {
    const double d = spec.bins();
    // convex form so that x = 0 and x = D give d_min and d_max exactly
    const double r = bin_coordinate * (bin_coordinate + 1.0) / (d * (d + 1.0));
    return (1.0 - r) * spec.d_min() + r * spec.d_max();
}

/// Nonnegative root of lid_center(spec, x) = depth.
inline double lid_inverse(const DepthBinSpec& spec, double depth) {
    if (!(depth >= spec.d_min() && depth <= spec.d_max()))
        throw RangeError("lid_inverse: depth " + std::to_string(depth) + " outside [d_min, d_max]");
    const double d = spec.bins();
    const double t = (depth - spec.d_min()) * d * (d + 1.0) / (spec.d_max() - spec.d_min());
    return (-1.0 + std::sqrt(1.0 + 4.0 * t)) / 2.0;
}

/// Depth at continuous bin coordinate x in [0, D]; bin k spans [k, k+1).
inline double depth_at(const DepthBinSpec& spec, double bin_coordinate) {
    switch (spec.mode()) {
        case DepthBinning::uniform:
            return (1.0 - bin_coordinate / spec.bins()) * spec.d_min() + bin_coordinate / spec.bins() * spec.d_max();
        case DepthBinning::linear_increasing: return lid_center(spec, bin_coordinate);
        case DepthBinning::spacing_increasing:
            return std::exp(std::log(spec.d_min()) +
                            (std::log(spec.d_max()) - std::log(spec.d_min())) * bin_coordinate / spec.bins());
    }
    return 0.0;
}

/// Inverse of depth_at for depth in [d_min, d_max]; RangeError outside.
inline double bin_coordinate(const DepthBinSpec& spec, double depth) {
    if (!(depth >= spec.d_min() && depth <= spec.d_max()))
        throw RangeError("bin_coordinate: depth outside [d_min, d_max]");
    switch (spec.mode()) {
        case DepthBinning::uniform: return (depth - spec.d_min()) / (spec.d_max() - spec.d_min()) * spec.bins();
        case DepthBinning::linear_increasing: return lid_inverse(spec, depth);
        case DepthBinning::spacing_increasing:
            return (std::log(depth) - std::log(spec.d_min())) / (std::log(spec.d_max()) - std::log(spec.d_min())) *
                   spec.bins();
    }
    return 0.0;
}

/// Bin centers at interval midpoints k + 0.5 of the bin coordinate.
inline std::vector<double> bin_centers(const DepthBinSpec& spec) {
    std::vector<double> centers(spec.bins());
    for (int k = 0; k < spec.bins(); ++k) centers[k] = depth_at(spec, k + 0.5);
    return centers;
}

/// Nearest bin center, clamped to [0, D-1]; ties go to the lower index.
inline int depth_to_bin(const DepthBinSpec& spec, double depth) {
    if (!(depth > 0.0) || !std::isfinite(depth)) throw DomainError("depth_to_bin: depth must be finite and positive");
    const std::vector<double> centers = bin_centers(spec);
    const auto upper = std::lower_bound(centers.begin(), centers.end(), depth);
    if (upper == centers.begin()) return 0;
    if (upper == centers.end()) return spec.bins() - 1;
    const int hi = static_cast<int>(upper - centers.begin());
    const int lo = hi - 1;
    return (depth - centers[lo] <= centers[hi] - depth) ? lo : hi;
}

}  // namespace occdepth
