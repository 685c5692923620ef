#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "occdepth/camera_geometry.hpp"
#include "occdepth/labels.hpp"
#include "occdepth/rng.hpp"
#include "occdepth/tensor.hpp"

namespace occdepth {

// Fixed semantic classes of the synthetic rooms; ids >= kFirstObjectClass are
// free-standing objects.
inline constexpr std::uint8_t kFloorClass = 1;
inline constexpr std::uint8_t kCeilingClass = 2;
inline constexpr std::uint8_t kWallClass = 3;
inline constexpr std::uint8_t kFirstObjectClass = 4;

inline std::vector<std::string> class_names(int n_classes) {
    std::vector<std::string> names{"empty", "floor", "ceiling", "wall"};
    const char* objects[] = {"table", "chair", "sofa", "cabinet", "bed", "shelf", "desk", "box"};
    for (int c = kFirstObjectClass; c <= n_classes; ++c) {
        const int o = c - kFirstObjectClass;
        names.emplace_back(o < 8 ? std::string(objects[o]) : "object_" + std::to_string(o));
    }
    names.resize(static_cast<std::size_t>(n_classes) + 1);
    return names;
}

/// Procedural room parameters. World frame: x across, y up, z away from the
/// rig. The room fills the voxel grid; walls, floor and ceiling are one voxel thick.
struct SceneParams {
    std::array<int, 3> grid_dims{32, 16, 32};
    double voxel_size = 0.2;
    int image_width = 64;
    int image_height = 64;
    double horizontal_fov_deg = 90.0;
    double baseline = 0.3;          ///< meters between the two cameras
    double camera_height = 1.6;     ///< meters above the grid origin
    double camera_z = 0.3;          ///< meters from the front face of the grid
    double pitch_deg = 15.0;        ///< downward tilt
    int n_classes = 8;
    int min_objects = 2;
    int max_objects = 5;
    int min_object_extent = 2;      ///< voxels per axis
    int max_object_extent = 5;
    double texture_amplitude = 0.0; ///< checkerboard brightness modulation on surfaces
    double texture_cell = 0.2;      ///< meters per checker cell
    double color_noise = 0.0;       ///< per-pixel Gaussian noise std

    void validate() const {
        require(grid_dims[0] >= 3 && grid_dims[1] >= 3 && grid_dims[2] >= 3, "SceneParams: grid must be at least 3^3");
        require(voxel_size > 0.0 && baseline >= 0.0, "SceneParams: voxel_size must be positive, baseline nonnegative");
        require(image_width > 0 && image_height > 0 && image_width % 8 == 0 && image_height % 8 == 0,
                "SceneParams: image size must be a positive multiple of 8");
        require(horizontal_fov_deg > 0.0 && horizontal_fov_deg < 180.0, "SceneParams: fov must be in (0, 180)");
        require(n_classes >= kWallClass && n_classes < kIgnoreLabel, "SceneParams: need n_classes >= 3");
        require(min_objects >= 0 && min_objects <= max_objects, "SceneParams: bad object count range");
        if (max_objects > 0 && n_classes < kFirstObjectClass)
            throw GenerationError("SceneParams: objects requested but no object classes (n_classes < 4)");
        require(min_object_extent >= 1 && min_object_extent <= max_object_extent, "SceneParams: bad object extent range");
        if (max_objects > 0 && (max_object_extent > grid_dims[0] - 2 || max_object_extent > grid_dims[1] - 2 ||
                                max_object_extent > grid_dims[2] - 2))
            throw GenerationError("SceneParams: objects larger than the room interior");
        // both cameras must sit inside the hollow of the one-voxel room shell
        const double lo = voxel_size;
        const bool inside = camera_z > lo && camera_z < (grid_dims[2] - 1) * voxel_size && camera_height > lo &&
                            camera_height < (grid_dims[1] - 1) * voxel_size &&
                            baseline / 2.0 < grid_dims[0] * voxel_size / 2.0 - lo;
        if (!inside) throw GenerationError("SceneParams: cameras must be inside the room interior");
    }
};

/// Axis-aligned box in voxel units: occupies [min, min + extent) on each axis.
struct Box {
    std::array<int, 3> min{};
    std::array<int, 3> extent{1, 1, 1};
    std::uint8_t label = kFirstObjectClass;

    friend bool operator==(const Box&, const Box&) = default;
};

struct SceneLayout {
    std::vector<Box> objects;
};

struct SceneSample {
    std::string sample_id;
    Tensor<float> left_image;   ///< H x W x 3 in [0, 1]
    Tensor<float> right_image;
    Tensor<float> left_depth;   ///< H x W camera z in meters, 0 = invalid
    Tensor<float> right_depth;
    VoxelLabels labels;
    CameraRig rig;
    VoxelGridSpec grid;

    [[nodiscard]] const Tensor<float>& image(int camera) const { return camera == 0 ? left_image : right_image; }
    [[nodiscard]] const Tensor<float>& depth(int camera) const { return camera == 0 ? left_depth : right_depth; }

    friend bool operator==(const SceneSample& a, const SceneSample& b) {
        return a.sample_id == b.sample_id && a.left_image == b.left_image && a.right_image == b.right_image &&
               a.left_depth == b.left_depth && a.right_depth == b.right_depth && a.labels == b.labels &&
               a.grid == b.grid && a.rig.left.intrinsics() == b.rig.left.intrinsics() &&
               a.rig.right.intrinsics() == b.rig.right.intrinsics() &&
               a.rig.left.cam_from_world() == b.rig.left.cam_from_world() &&
               a.rig.right.cam_from_world() == b.rig.right.cam_from_world() &&
               a.rig.left.width() == b.rig.left.width() && a.rig.left.height() == b.rig.left.height();
    }
};

inline VoxelGridSpec make_grid(const SceneParams& p) {
    return VoxelGridSpec(Eigen::Vector3d::Zero(), p.grid_dims, p.voxel_size);
}

/// Rectified pair looking along +z, pitched down; the right camera sits
/// `baseline` meters along the left camera's +x axis.
inline CameraRig make_rig(const SceneParams& p) {
    const double f = (p.image_width / 2.0) / std::tan(p.horizontal_fov_deg * std::numbers::pi / 360.0);
    Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
    k(0, 0) = f;
    k(1, 1) = f;
    k(0, 2) = p.image_width / 2.0;
    k(1, 2) = p.image_height / 2.0;
    const double pitch = p.pitch_deg * std::numbers::pi / 180.0;
    const Eigen::Vector3d forward(0.0, -std::sin(pitch), std::cos(pitch));
    const Eigen::Vector3d down(0.0, -std::cos(pitch), -std::sin(pitch));
    const Eigen::Vector3d right = down.cross(forward);
    Eigen::Matrix3d r;
    r.row(0) = right.transpose();
    r.row(1) = down.transpose();
    r.row(2) = forward.transpose();
    const double room_x = p.grid_dims[0] * p.voxel_size;
    const Eigen::Vector3d center(room_x / 2.0, p.camera_height, p.camera_z);
    auto make = [&](const Eigen::Vector3d& position) {
        Eigen::Matrix4d t = Eigen::Matrix4d::Identity();
        t.topLeftCorner<3, 3>() = r;
        t.topRightCorner<3, 1>() = -r * position;
        return CameraModel(k, t, p.image_width, p.image_height);
    };
    return CameraRig(make(center - right * (p.baseline / 2.0)), make(center + right * (p.baseline / 2.0)));
}

namespace detail {

struct Aabb {
    Eigen::Vector3d lo;
    Eigen::Vector3d hi;
};

inline Aabb box_bounds(const Box& b, const VoxelGridSpec& grid) {
    Eigen::Vector3d lo, hi;
    for (int a = 0; a < 3; ++a) {
        lo[a] = grid.origin()[a] + b.min[a] * grid.voxel_size();
        hi[a] = grid.origin()[a] + (b.min[a] + b.extent[a]) * grid.voxel_size();
    }
    return {lo, hi};
}

/// Entry parameter and entry axis of a ray into a box, if it enters at t > 0.
inline std::optional<std::pair<double, int>> ray_enter(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Aabb& box) {
    double t0 = -std::numeric_limits<double>::infinity();
    double t1 = std::numeric_limits<double>::infinity();
    int axis = 0;
    for (int a = 0; a < 3; ++a) {
        if (d[a] == 0.0) {
            if (o[a] < box.lo[a] || o[a] > box.hi[a]) return std::nullopt;
            continue;
        }
        double ta = (box.lo[a] - o[a]) / d[a];
        double tb = (box.hi[a] - o[a]) / d[a];
        if (ta > tb) std::swap(ta, tb);
        if (ta > t0) {
            t0 = ta;
            axis = a;
        }
        t1 = std::min(t1, tb);
    }
    if (t0 > t1 || !(t0 > 0.0)) return std::nullopt;
    return std::make_pair(t0, axis);
}

/// Exit parameter, axis and side (0 low, 1 high) of a ray leaving a box it starts inside.
inline std::tuple<double, int, int> ray_exit(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Aabb& box) {
    double best = std::numeric_limits<double>::infinity();
    int axis = -1, side = 0;
    for (int a = 0; a < 3; ++a) {
        if (d[a] > 0.0) {
            const double t = (box.hi[a] - o[a]) / d[a];
            if (t < best) best = t, axis = a, side = 1;
        } else if (d[a] < 0.0) {
            const double t = (box.lo[a] - o[a]) / d[a];
            if (t < best) best = t, axis = a, side = 0;
        }
    }
    return {best, axis, side};
}

inline std::array<float, 3> class_color(std::uint8_t label) {
    static constexpr std::array<std::array<float, 3>, 12> palette{{{0.0f, 0.0f, 0.0f},
                                                                   {0.55f, 0.45f, 0.35f},
                                                                   {0.9f, 0.9f, 0.85f},
                                                                   {0.7f, 0.75f, 0.8f},
                                                                   {0.85f, 0.25f, 0.2f},
                                                                   {0.2f, 0.6f, 0.25f},
                                                                   {0.2f, 0.3f, 0.8f},
                                                                   {0.9f, 0.75f, 0.15f},
                                                                   {0.6f, 0.2f, 0.7f},
                                                                   {0.1f, 0.7f, 0.75f},
                                                                   {0.95f, 0.5f, 0.1f},
                                                                   {0.4f, 0.4f, 0.4f}}};
    if (label < palette.size()) return palette[label];
    Rng rng(derive_seed(label, "class-color"));
    return {static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform())};
}

struct Hit {
    double depth = 0.0;
    std::uint8_t label = kEmptyLabel;
    Eigen::Vector3d point = Eigen::Vector3d::Zero();
    int axis = -1;
};

inline Hit cast_ray(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir, const VoxelGridSpec& grid,
                    const SceneLayout& layout) {
    Hit hit;
    const Box interior{{1, 1, 1}, {grid.dims()[0] - 2, grid.dims()[1] - 2, grid.dims()[2] - 2}, kEmptyLabel};
    const Aabb room = box_bounds(interior, grid);
    const bool inside = (origin.array() > room.lo.array()).all() && (origin.array() < room.hi.array()).all();
    double best = std::numeric_limits<double>::infinity();
    if (inside) {
        const auto [t, axis, side] = ray_exit(origin, dir, room);
        if (axis >= 0 && std::isfinite(t)) {
            best = t;
            hit.axis = axis;
            hit.label = axis == 1 ? (side == 0 ? kFloorClass : kCeilingClass) : kWallClass;
        }
    }
    for (const Box& b : layout.objects) {
        const auto e = ray_enter(origin, dir, box_bounds(b, grid));
        if (e && e->first < best) {
            best = e->first;
            hit.axis = e->second;
            hit.label = b.label;
        }
    }
    if (!std::isfinite(best)) return Hit{};
    hit.depth = best;
    hit.point = origin + best * dir;
    return hit;
}

}  // namespace detail

/// Ground-truth labels: boxes, then the one-voxel room shell (floor wins over
/// ceiling over walls); free voxels are empty when either camera sees their
/// centroid and ignored (255) otherwise.
inline VoxelLabels voxelize_layout(const SceneLayout& layout, const VoxelGridSpec& grid, const CameraRig& rig,
                                   int n_classes) {
    const auto& d = grid.dims();
    VoxelLabels labels(d, n_classes, kEmptyLabel);
    const std::vector<Projection> left = project_voxels(grid, rig.left);
    const std::vector<Projection> right = project_voxels(grid, rig.right);
    for (int i = 0; i < d[0]; ++i)
        for (int j = 0; j < d[1]; ++j)
            for (int k = 0; k < d[2]; ++k) {
                const std::size_t v = grid.index(i, j, k);
                std::uint8_t label = kEmptyLabel;
                if (j == 0) label = kFloorClass;
                else if (j == d[1] - 1) label = kCeilingClass;
                else if (i == 0 || i == d[0] - 1 || k == 0 || k == d[2] - 1) label = kWallClass;
                for (const Box& b : layout.objects)
                    if (i >= b.min[0] && i < b.min[0] + b.extent[0] && j >= b.min[1] && j < b.min[1] + b.extent[1] &&
                        k >= b.min[2] && k < b.min[2] + b.extent[2])
                        label = b.label;
                if (label == kEmptyLabel && !left[v].valid && !right[v].valid) label = kIgnoreLabel;
                labels.semantic[v] = label;
            }
    return labels;
}

/// Renders depth (camera z, 0 where no surface is hit) and flat-shaded colors.
inline std::pair<Tensor<float>, Tensor<float>> render_view(const CameraModel& cam, const VoxelGridSpec& grid,
                                                           const SceneLayout& layout, const SceneParams& params,
                                                           Rng* noise) {
    const auto h = static_cast<std::size_t>(cam.height());
    const auto w = static_cast<std::size_t>(cam.width());
    Tensor<float> image(Shape{h, w, 3});
    Tensor<float> depth(Shape{h, w});
    const Eigen::Vector3d origin = cam.camera_center();
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const Eigen::Vector3d dir = cam.ray_direction(x + 0.5, y + 0.5);
            const detail::Hit hit = detail::cast_ray(origin, dir, grid, layout);
            if (hit.label == kEmptyLabel) continue;
            depth.at(y, x) = static_cast<float>(hit.depth);
            auto color = detail::class_color(hit.label);
            if (params.texture_amplitude > 0.0) {
                int parity = 0;
                for (int a = 0; a < 3; ++a)
                    if (a != hit.axis) parity += static_cast<int>(std::floor(hit.point[a] / params.texture_cell));
                if (parity & 1)
                    for (auto& ch : color) ch *= static_cast<float>(1.0 - params.texture_amplitude);
            }
            for (int ch = 0; ch < 3; ++ch) {
                double value = color[ch];
                if (noise && params.color_noise > 0.0) value += params.color_noise * noise->normal();
                image.at(y, x, ch) = static_cast<float>(std::clamp(value, 0.0, 1.0));
            }
        }
    return {std::move(image), std::move(depth)};
}

inline SceneSample render_scene(const SceneLayout& layout, const SceneParams& params, std::string sample_id,
                                std::uint64_t seed = 0) {
    params.validate();
    const VoxelGridSpec grid = make_grid(params);
    const CameraRig rig = make_rig(params);
    Rng noise(derive_seed(seed, "image-noise"));
    auto [li, ld] = render_view(rig.left, grid, layout, params, &noise);
    auto [ri, rd] = render_view(rig.right, grid, layout, params, &noise);
    VoxelLabels labels = voxelize_layout(layout, grid, rig, params.n_classes);
    return SceneSample{std::move(sample_id), std::move(li), std::move(ri), std::move(ld), std::move(rd),
                       std::move(labels), rig, grid};
}

/// Random non-overlapping boxes resting on the floor, each fully inside both
/// camera images.
inline SceneLayout random_layout(std::uint64_t seed, const SceneParams& params) {
    params.validate();
    const VoxelGridSpec grid = make_grid(params);
    const CameraRig rig = make_rig(params);
    Rng rng(derive_seed(seed, "layout"));
    SceneLayout layout;
    const int count = rng.uniform_int(params.min_objects, params.max_objects);
    const auto& d = params.grid_dims;
    for (int n = 0; n < count; ++n) {
        bool placed = false;
        for (int attempt = 0; attempt < 500 && !placed; ++attempt) {
            Box b;
            for (int a = 0; a < 3; ++a) b.extent[a] = rng.uniform_int(params.min_object_extent, params.max_object_extent);
            b.extent[1] = std::min(b.extent[1], d[1] - 2);
            b.min[0] = rng.uniform_int(1, d[0] - 1 - b.extent[0]);
            b.min[1] = 1;
            b.min[2] = rng.uniform_int(1, d[2] - 1 - b.extent[2]);
            b.label = static_cast<std::uint8_t>(rng.uniform_int(kFirstObjectClass, params.n_classes));
            const detail::Aabb box = detail::box_bounds(b, grid);
            bool ok = true;
            for (int corner = 0; corner < 8 && ok; ++corner) {
                const Eigen::Vector3d p((corner & 1) ? box.hi.x() : box.lo.x(), (corner & 2) ? box.hi.y() : box.lo.y(),
                                        (corner & 4) ? box.hi.z() : box.lo.z());
                ok = project_point(rig.left, p).valid && project_point(rig.right, p).valid;
            }
            for (const Box& o : layout.objects) {
                bool overlap = true;
                for (int a = 0; a < 3; ++a)
                    overlap = overlap && b.min[a] < o.min[a] + o.extent[a] && o.min[a] < b.min[a] + b.extent[a];
                ok = ok && !overlap;
            }
            if (ok) {
                layout.objects.push_back(b);
                placed = true;
            }
        }
        if (!placed) throw GenerationError("generate_scene: could not place object " + std::to_string(n) +
                                           " inside the camera view; shrink objects or reduce their count");
    }
    return layout;
}

inline SceneSample generate_scene(std::uint64_t seed, const SceneParams& params, std::string sample_id = "scene") {
    return render_scene(random_layout(seed, params), params, std::move(sample_id), seed);
}

/// First non-empty label along the ray through pixel center (x, y), found by
/// voxel traversal (Amanatides-Woo). Ignored voxels count as free space.
/// Returns the camera depth of the entry point, or 0 if nothing is hit.
inline double raycast_labels(const VoxelLabels& labels, const VoxelGridSpec& grid, const CameraModel& cam, int x,
                             int y) {
    const Eigen::Vector3d o = cam.camera_center();
    const Eigen::Vector3d dir = cam.ray_direction(x + 0.5, y + 0.5);
    const auto& dims = grid.dims();
    const double s = grid.voxel_size();
    // Clip the ray to the grid bounds.
    double t_enter = 0.0, t_exit = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        const double lo = grid.origin()[a], hi = lo + dims[a] * s;
        if (dir[a] == 0.0) {
            if (o[a] < lo || o[a] > hi) return 0.0;
            continue;
        }
        double ta = (lo - o[a]) / dir[a], tb = (hi - o[a]) / dir[a];
        if (ta > tb) std::swap(ta, tb);
        t_enter = std::max(t_enter, ta);
        t_exit = std::min(t_exit, tb);
    }
    if (t_enter > t_exit) return 0.0;
    const Eigen::Vector3d start = o + dir * (t_enter + 1e-9);
    std::array<int, 3> cell{}, step{};
    std::array<double, 3> t_max{}, t_delta{};
    for (int a = 0; a < 3; ++a) {
        cell[a] = std::clamp(static_cast<int>(std::floor((start[a] - grid.origin()[a]) / s)), 0, dims[a] - 1);
        if (dir[a] > 0) {
            step[a] = 1;
            t_max[a] = (grid.origin()[a] + (cell[a] + 1) * s - o[a]) / dir[a];
            t_delta[a] = s / dir[a];
        } else if (dir[a] < 0) {
            step[a] = -1;
            t_max[a] = (grid.origin()[a] + cell[a] * s - o[a]) / dir[a];
            t_delta[a] = -s / dir[a];
        } else {
            step[a] = 0;
            t_max[a] = t_delta[a] = std::numeric_limits<double>::infinity();
        }
    }
    double t = t_enter;
    while (true) {
        const std::uint8_t l = labels.semantic[grid.index(cell[0], cell[1], cell[2])];
        if (l != kEmptyLabel && l != kIgnoreLabel) return t;
        const int a = (t_max[0] < t_max[1]) ? (t_max[0] < t_max[2] ? 0 : 2) : (t_max[1] < t_max[2] ? 1 : 2);
        t = t_max[a];
        cell[a] += step[a];
        if (cell[a] < 0 || cell[a] >= dims[a]) return 0.0;
        t_max[a] += t_delta[a];
    }
}

/// Fraction of valid rendered pixels (both views) whose depth matches the
/// label-grid ray cast within one voxel size.
inline double depth_label_agreement(const SceneSample& sample) {
    std::size_t valid = 0, agree = 0;
    for (int cam = 0; cam < 2; ++cam) {
        const Tensor<float>& depth = sample.depth(cam);
        for (int y = 0; y < static_cast<int>(depth.dim(0)); ++y)
            for (int x = 0; x < static_cast<int>(depth.dim(1)); ++x) {
                const double d = depth.at(y, x);
                if (!(d > 0.0)) continue;
                ++valid;
                const double r = raycast_labels(sample.labels, sample.grid, sample.rig[cam], x, y);
                if (r > 0.0 && std::abs(r - d) <= sample.grid.voxel_size()) ++agree;
            }
    }
    return valid == 0 ? 1.0 : static_cast<double>(agree) / static_cast<double>(valid);
}

// ---------------------------------------------------------------------------
// Virtual stereo

struct VirtualStereoView {
    Tensor<float> image;               ///< H x W x 3
    Tensor<float> depth;               ///< warped depth, 0 where invalid
    std::vector<std::uint8_t> valid;   ///< 1 where some source pixel landed
};

/// Forward-warps a left view into a right camera displaced by `baseline`
/// along +x: disparity f * b / d, nearest depth wins collisions, pixels nobody
/// lands on are left invalid (zero).
inline VirtualStereoView virtual_stereo(const Tensor<float>& image, const Tensor<float>& depth, const CameraModel& cam,
                                        double baseline) {
    require(image.rank() == 3 && depth.rank() == 2 && image.dim(0) == depth.dim(0) && image.dim(1) == depth.dim(1),
            "virtual_stereo: image and depth sizes differ");
    require(baseline >= 0.0, "virtual_stereo: baseline must be nonnegative");
    const std::size_t h = depth.dim(0), w = depth.dim(1), c = image.dim(2);
    VirtualStereoView out{Tensor<float>(image.shape()), Tensor<float>(depth.shape()), std::vector<std::uint8_t>(h * w, 0)};
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double d = depth.at(y, x);
            if (!(d > 0.0)) continue;
            const double target_u = (x + 0.5) - cam.fx() * baseline / d;
            const double tx = std::floor(target_u);
            if (tx < 0 || tx >= static_cast<double>(w)) continue;
            const auto ti = static_cast<std::size_t>(tx);
            const std::size_t dst = y * w + ti;
            if (out.valid[dst] && out.depth[dst] <= static_cast<float>(d)) continue;
            out.valid[dst] = 1;
            out.depth[dst] = static_cast<float>(d);
            for (std::size_t ch = 0; ch < c; ++ch) out.image[dst * c + ch] = image.at(y, x, ch);
        }
    return out;
}

// ---------------------------------------------------------------------------
// Photometric augmentation

struct AugmentParams {
    double probability = 0.5;   ///< chance of each of blur / grayscale / hue
    double max_blur_sigma = 1.2;
    double max_hue_shift_deg = 30.0;
};

namespace detail {

inline void gaussian_blur(Tensor<float>& image, double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(2.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) sum += kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& k : kernel) k /= sum;
    const int h = static_cast<int>(image.dim(0)), w = static_cast<int>(image.dim(1)), c = static_cast<int>(image.dim(2));
    for (int pass = 0; pass < 2; ++pass) {
        Tensor<float> tmp(image.shape());
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int ch = 0; ch < c; ++ch) {
                    double acc = 0.0;
                    for (int i = -radius; i <= radius; ++i) {
                        const int yy = pass == 0 ? y : std::clamp(y + i, 0, h - 1);
                        const int xx = pass == 0 ? std::clamp(x + i, 0, w - 1) : x;
                        acc += kernel[i + radius] * image.at(yy, xx, ch);
                    }
                    tmp.at(y, x, ch) = static_cast<float>(acc);
                }
        image = std::move(tmp);
    }
}

inline void grayscale(Tensor<float>& image) {
    for (std::size_t p = 0; p < image.size() / 3; ++p) {
        const float g = 0.299f * image[3 * p] + 0.587f * image[3 * p + 1] + 0.114f * image[3 * p + 2];
        image[3 * p] = image[3 * p + 1] = image[3 * p + 2] = g;
    }
}

/// Rotates chroma in YIQ space by `degrees`, clamping back to [0, 1].
inline void hue_rotate(Tensor<float>& image, double degrees) {
    const double a = degrees * std::numbers::pi / 180.0, cs = std::cos(a), sn = std::sin(a);
    for (std::size_t p = 0; p < image.size() / 3; ++p) {
        const double r = image[3 * p], g = image[3 * p + 1], b = image[3 * p + 2];
        const double yy = 0.299 * r + 0.587 * g + 0.114 * b;
        const double i0 = 0.596 * r - 0.274 * g - 0.322 * b;
        const double q0 = 0.211 * r - 0.523 * g + 0.312 * b;
        const double i1 = cs * i0 - sn * q0, q1 = sn * i0 + cs * q0;
        const double out[3] = {yy + 0.956 * i1 + 0.621 * q1, yy - 0.272 * i1 - 0.647 * q1, yy - 1.106 * i1 + 1.703 * q1};
        for (int ch = 0; ch < 3; ++ch) image[3 * p + ch] = static_cast<float>(std::clamp(out[ch], 0.0, 1.0));
    }
}

}  // namespace detail

/// Photometric-only augmentation with one random draw shared by both views.
inline SceneSample augment(const SceneSample& sample, std::uint64_t seed, const AugmentParams& params = {}) {
    SceneSample out = sample;
    Rng rng(derive_seed(seed, "augment"));
    const bool blur = rng.bernoulli(params.probability);
    const double sigma = rng.uniform(0.3, std::max(0.3, params.max_blur_sigma));
    const bool gray = rng.bernoulli(params.probability);
    const bool hue = rng.bernoulli(params.probability);
    const double shift = rng.uniform(-params.max_hue_shift_deg, params.max_hue_shift_deg);
    for (Tensor<float>* image : {&out.left_image, &out.right_image}) {
        if (blur) detail::gaussian_blur(*image, sigma);
        if (hue) detail::hue_rotate(*image, shift);
        if (gray) detail::grayscale(*image);
    }
    return out;
}

}  // namespace occdepth
