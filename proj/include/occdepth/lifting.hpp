#pragma once

#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "occdepth/camera_geometry.hpp"
#include "occdepth/tensor.hpp"

namespace occdepth {

inline constexpr std::array<int, 4> kPyramidScales{1, 2, 4, 8};

/// 2D features at downsampling scales {1, 2, 4, 8}; level l is (H/s) x (W/s) x C.
template <typename T>
struct FeaturePyramid {
    std::array<Tensor<T>, 4> levels;

    [[nodiscard]] int channels() const { return static_cast<int>(levels[0].dim(2)); }
    [[nodiscard]] int height() const { return static_cast<int>(levels[0].dim(0)); }
    [[nodiscard]] int width() const { return static_cast<int>(levels[0].dim(1)); }

    void validate(int image_height, int image_width) const {
        for (std::size_t l = 0; l < levels.size(); ++l) {
            const int s = kPyramidScales[l];
            const Tensor<T>& m = levels[l];
            require(m.rank() == 3, "FeaturePyramid: every level must be H x W x C");
            require(static_cast<int>(m.dim(0)) * s == image_height && static_cast<int>(m.dim(1)) * s == image_width,
                    "FeaturePyramid: level " + std::to_string(s) + " has shape " + shape_string(m.shape()) +
                        ", inconsistent with the camera image size");
            require(m.dim(2) == levels[0].dim(2), "FeaturePyramid: channel count differs across scales");
        }
    }

    static FeaturePyramid zeros_like(const FeaturePyramid& other) {
        FeaturePyramid out;
        for (std::size_t l = 0; l < 4; ++l) out.levels[l] = Tensor<T>(other.levels[l].shape());
        return out;
    }
};

/// Per-voxel C-channel features over a voxel grid; values are X x Y x Z x C.
template <typename T>
struct FeatureVolume {
    VoxelGridSpec grid;
    Tensor<T> values;

    FeatureVolume(VoxelGridSpec g, int channels)
        : grid(std::move(g)),
          values(Shape{static_cast<std::size_t>(grid.dims()[0]), static_cast<std::size_t>(grid.dims()[1]),
                       static_cast<std::size_t>(grid.dims()[2]), static_cast<std::size_t>(channels)}) {}
    FeatureVolume(VoxelGridSpec g, Tensor<T> v) : grid(std::move(g)), values(std::move(v)) {
        require(values.rank() == 4 && static_cast<int>(values.dim(0)) == grid.dims()[0] &&
                    static_cast<int>(values.dim(1)) == grid.dims()[1] &&
                    static_cast<int>(values.dim(2)) == grid.dims()[2],
                "FeatureVolume: values must be X x Y x Z x C for the grid");
    }

    [[nodiscard]] int channels() const { return static_cast<int>(values.dim(3)); }
    [[nodiscard]] std::size_t voxels() const { return grid.count(); }
    [[nodiscard]] T* voxel(std::size_t index) { return values.data() + index * channels(); }
    [[nodiscard]] const T* voxel(std::size_t index) const { return values.data() + index * channels(); }
};

/// Precomputed bilinear footprints of every voxel centroid in one feature map.
struct SamplingPlan {
    int height = 0;
    int width = 0;
    std::vector<BilinearTap> taps;
};

/// Footprints at all pyramid scales from a single projection pass. Pixel
/// coordinates at scale s are the full-resolution ones divided by s.
inline std::array<SamplingPlan, 4> make_sampling_plans(const VoxelGridSpec& grid, const CameraModel& cam) {
    const std::vector<Projection> proj = project_voxels(grid, cam);
    std::array<SamplingPlan, 4> plans;
    for (std::size_t l = 0; l < 4; ++l) {
        const int s = kPyramidScales[l];
        require(cam.width() % s == 0 && cam.height() % s == 0, "image size must be divisible by 8");
        plans[l].height = cam.height() / s;
        plans[l].width = cam.width() / s;
        plans[l].taps.resize(proj.size());
        for (std::size_t v = 0; v < proj.size(); ++v)
            plans[l].taps[v] = bilinear_tap(plans[l].height, plans[l].width, proj[v].u / s, proj[v].v / s, proj[v].valid);
    }
    return plans;
}

template <typename T>
void gather_features(const Tensor<T>& map, const SamplingPlan& plan, T* out, std::size_t channels) {
    require(static_cast<int>(map.dim(0)) == plan.height && static_cast<int>(map.dim(1)) == plan.width &&
                map.dim(2) == channels,
            "feature map shape " + shape_string(map.shape()) + " does not match its sampling plan");
    std::fill(out, out + plan.taps.size() * channels, T{0});
    for (std::size_t v = 0; v < plan.taps.size(); ++v) {
        const BilinearTap& tap = plan.taps[v];
        if (!tap.valid) continue;
        T* dst = out + v * channels;
        for (int c = 0; c < 4; ++c) {
            if (tap.index[c] < 0) continue;
            const T w = static_cast<T>(tap.weight[c]);
            const T* src = map.data() + static_cast<std::size_t>(tap.index[c]) * channels;
            for (std::size_t ch = 0; ch < channels; ++ch) dst[ch] += w * src[ch];
        }
    }
}

/// Adjoint of gather_features: accumulates voxel gradients into the map gradient.
template <typename T>
void scatter_features(const T* grad_voxels, const SamplingPlan& plan, Tensor<T>& grad_map) {
    const std::size_t channels = grad_map.dim(2);
    for (std::size_t v = 0; v < plan.taps.size(); ++v) {
        const BilinearTap& tap = plan.taps[v];
        if (!tap.valid) continue;
        const T* g = grad_voxels + v * channels;
        for (int c = 0; c < 4; ++c) {
            if (tap.index[c] < 0) continue;
            const T w = static_cast<T>(tap.weight[c]);
            T* dst = grad_map.data() + static_cast<std::size_t>(tap.index[c]) * channels;
            for (std::size_t ch = 0; ch < channels; ++ch) dst[ch] += w * g[ch];
        }
    }
}

/// Samples one 2D map (at downsampling `scale`) into the voxel grid.
template <typename T>
FeatureVolume<T> lift_single(const Tensor<T>& map, int scale, const VoxelGridSpec& grid, const CameraModel& cam) {
    require(map.rank() == 3, "lift_single: map must be H x W x C");
    require(scale > 0 && cam.width() % scale == 0 && cam.height() % scale == 0,
            "lift_single: image size not divisible by scale");
    require(static_cast<int>(map.dim(0)) * scale == cam.height() && static_cast<int>(map.dim(1)) * scale == cam.width(),
            "lift_single: map shape inconsistent with scale");
    const std::vector<Projection> proj = project_voxels(grid, cam);
    SamplingPlan plan{cam.height() / scale, cam.width() / scale, {}};
    plan.taps.resize(proj.size());
    for (std::size_t v = 0; v < proj.size(); ++v)
        plan.taps[v] = bilinear_tap(plan.height, plan.width, proj[v].u / scale, proj[v].v / scale, proj[v].valid);
    FeatureVolume<T> out(grid, static_cast<int>(map.dim(2)));
    gather_features(map, plan, out.values.data(), map.dim(2));
    return out;
}

// ---------------------------------------------------------------------------
// Stereo fusion

enum class FusionMode {
    cosine_weighted,  ///< weighted mean gated by max(0, cosine(left, right))
    plain_mean,       ///< weight fixed to 1 (naive average of the two views)
};

inline constexpr double kCosineNormFloor = 1e-8;

namespace detail {

template <typename T>
bool is_zero_vector(const T* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (x[i] != T{0}) return false;
    return true;
}

template <typename T>
struct CosineTerms {
    T dot{0};
    T norm_a{0};
    T norm_b{0};
    T cosine{0};
};

template <typename T>
CosineTerms<T> cosine_terms(const T* a, const T* b, std::size_t n) {
    CosineTerms<T> t;
    T aa{0}, bb{0};
    for (std::size_t i = 0; i < n; ++i) {
        t.dot += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    t.norm_a = std::sqrt(aa);
    t.norm_b = std::sqrt(bb);
    const T floor = static_cast<T>(kCosineNormFloor);
    t.cosine = t.dot / (std::max(t.norm_a, floor) * std::max(t.norm_b, floor));
    return t;
}

}  // namespace detail

/// Cosine similarity of two C-vectors with the 1e-8 norm floor.
template <typename T>
T feature_cosine(std::span<const T> a, std::span<const T> b) {
    require(a.size() == b.size(), "feature_cosine: length mismatch");
    return detail::cosine_terms(a.data(), b.data(), a.size()).cosine;
}

/// Per-voxel fusion of left/right volumes: a view whose sample is exactly the
/// zero vector (out of view) defers to the other; otherwise w * (l + r) / 2.
template <typename T>
FeatureVolume<T> fuse_stereo(const FeatureVolume<T>& left, const FeatureVolume<T>& right,
                             FusionMode mode = FusionMode::cosine_weighted) {
    require(left.grid == right.grid && left.values.shape() == right.values.shape(),
            "fuse_stereo: volumes must share grid and channel count");
    const std::size_t c = left.channels();
    FeatureVolume<T> out(left.grid, static_cast<int>(c));
    for (std::size_t v = 0; v < left.voxels(); ++v) {
        const T* a = left.voxel(v);
        const T* b = right.voxel(v);
        T* o = out.voxel(v);
        if (detail::is_zero_vector(b, c)) {
            std::copy(a, a + c, o);
        } else if (detail::is_zero_vector(a, c)) {
            std::copy(b, b + c, o);
        } else {
            T w{1};
            if (mode == FusionMode::cosine_weighted) w = std::max(T{0}, detail::cosine_terms(a, b, c).cosine);
            for (std::size_t i = 0; i < c; ++i) o[i] = w * (a[i] + b[i]) / T{2};
        }
    }
    return out;
}

/// Adjoint of fuse_stereo. The zero-detection cases are treated as locally
/// constant (their derivative across the case boundary is undefined).
template <typename T>
void fuse_stereo_backward(const FeatureVolume<T>& left, const FeatureVolume<T>& right, const Tensor<T>& grad_out,
                          Tensor<T>& grad_left, Tensor<T>& grad_right, FusionMode mode = FusionMode::cosine_weighted) {
    const std::size_t c = left.channels();
    require(grad_out.shape() == left.values.shape(), "fuse_stereo_backward: gradient shape mismatch");
    grad_left = Tensor<T>(left.values.shape());
    grad_right = Tensor<T>(left.values.shape());
    const T floor = static_cast<T>(kCosineNormFloor);
    for (std::size_t v = 0; v < left.voxels(); ++v) {
        const T* a = left.voxel(v);
        const T* b = right.voxel(v);
        const T* g = grad_out.data() + v * c;
        T* ga = grad_left.data() + v * c;
        T* gb = grad_right.data() + v * c;
        if (detail::is_zero_vector(b, c)) {
            std::copy(g, g + c, ga);
            continue;
        }
        if (detail::is_zero_vector(a, c)) {
            std::copy(g, g + c, gb);
            continue;
        }
        if (mode == FusionMode::plain_mean) {
            for (std::size_t i = 0; i < c; ++i) ga[i] = gb[i] = g[i] / T{2};
            continue;
        }
        const auto t = detail::cosine_terms(a, b, c);
        const T w = std::max(T{0}, t.cosine);
        for (std::size_t i = 0; i < c; ++i) ga[i] = gb[i] = w * g[i] / T{2};
        if (!(t.cosine > T{0})) continue;
        // d/dw of the output contracted with g
        T g_dot_mean{0};
        for (std::size_t i = 0; i < c; ++i) g_dot_mean += g[i] * (a[i] + b[i]) / T{2};
        const T na = std::max(t.norm_a, floor);
        const T nb = std::max(t.norm_b, floor);
        const T inv = T{1} / (na * nb);
        const T a_term = t.norm_a > floor ? t.dot / (na * na * na * nb) : T{0};
        const T b_term = t.norm_b > floor ? t.dot / (na * nb * nb * nb) : T{0};
        for (std::size_t i = 0; i < c; ++i) {
            ga[i] += g_dot_mean * (b[i] * inv - a_term * a[i]);
            gb[i] += g_dot_mean * (a[i] * inv - b_term * b[i]);
        }
    }
}

/// Lifts both pyramids at every scale, fuses each scale and sums the results.
/// Keeps the sampled volumes so `backward` can return pyramid gradients.
template <typename T>
class StereoLifter {
public:
    StereoLifter(const VoxelGridSpec& grid, const CameraRig& rig, FusionMode mode = FusionMode::cosine_weighted)
        : grid_(grid), mode_(mode), plans_{make_sampling_plans(grid, rig.left), make_sampling_plans(grid, rig.right)} {}

    FeatureVolume<T> forward(const FeaturePyramid<T>& left, const FeaturePyramid<T>& right) {
        require(left.channels() == right.channels(), "lift_and_fuse: pyramids differ in channel count");
        const int c = left.channels();
        sampled_.clear();
        FeatureVolume<T> total(grid_, c);
        for (std::size_t l = 0; l < 4; ++l) {
            FeatureVolume<T> vl(grid_, c);
            FeatureVolume<T> vr(grid_, c);
            gather_features(left.levels[l], plans_[0][l], vl.values.data(), c);
            gather_features(right.levels[l], plans_[1][l], vr.values.data(), c);
            add_into(total.values, fuse_stereo(vl, vr, mode_).values);
            sampled_.emplace_back(std::move(vl), std::move(vr));
        }
        return total;
    }

    /// Gradients with respect to the left and right pyramids of the last forward.
    std::pair<FeaturePyramid<T>, FeaturePyramid<T>> backward(const Tensor<T>& grad_volume) const {
        require(sampled_.size() == 4, "StereoLifter::backward called before forward");
        std::pair<FeaturePyramid<T>, FeaturePyramid<T>> grads;
        for (std::size_t l = 0; l < 4; ++l) {
            const auto& [vl, vr] = sampled_[l];
            Tensor<T> gl, gr;
            fuse_stereo_backward(vl, vr, grad_volume, gl, gr, mode_);
            const int c = vl.channels();
            grads.first.levels[l] = Tensor<T>(Shape{static_cast<std::size_t>(plans_[0][l].height),
                                                    static_cast<std::size_t>(plans_[0][l].width),
                                                    static_cast<std::size_t>(c)});
            grads.second.levels[l] = Tensor<T>(grads.first.levels[l].shape());
            scatter_features(gl.data(), plans_[0][l], grads.first.levels[l]);
            scatter_features(gr.data(), plans_[1][l], grads.second.levels[l]);
        }
        return grads;
    }

    [[nodiscard]] FusionMode mode() const noexcept { return mode_; }

private:
    VoxelGridSpec grid_;
    FusionMode mode_;
    std::array<std::array<SamplingPlan, 4>, 2> plans_;
    std::vector<std::pair<FeatureVolume<T>, FeatureVolume<T>>> sampled_;
};

template <typename T>
FeatureVolume<T> lift_and_fuse(const FeaturePyramid<T>& left, const FeaturePyramid<T>& right,
                               const VoxelGridSpec& grid, const CameraRig& rig,
                               FusionMode mode = FusionMode::cosine_weighted) {
    left.validate(rig.left.height(), rig.left.width());
    right.validate(rig.right.height(), rig.right.width());
    StereoLifter<T> lifter(grid, rig, mode);
    return lifter.forward(left, right);
}

}  // namespace occdepth
