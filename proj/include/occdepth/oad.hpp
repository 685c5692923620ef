#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "occdepth/camera_geometry.hpp"
#include "occdepth/lifting.hpp"
#include "occdepth/tensor.hpp"

namespace occdepth {

inline constexpr int kDepthScale = 8;

/// Raw per-pixel depth scores, (H/S) x (W/S) x D.
template <typename T>
struct DepthLogits {
    Tensor<T> logits;
};

/// Per-pixel categorical distribution over depth bins, (H/S) x (W/S) x D.
template <typename T>
struct FrustumDistribution {
    Tensor<T> probs;
    DepthBinSpec spec;
    int scale = kDepthScale;
};

/// Voxel-space occupancy probability, X x Y x Z, entries in [0, 1].
template <typename T>
struct OccupancyPrior {
    Tensor<T> values;
};

/// 0.5 where both cameras see the voxel centroid, 1.0 elsewhere.
struct OverlapMask {
    Tensor<double> values;
};

template <typename T>
FrustumDistribution<T> depth_softmax(const DepthLogits<T>& logits, const DepthBinSpec& spec, int scale = kDepthScale) {
    const Tensor<T>& x = logits.logits;
    require(x.rank() == 3 && static_cast<int>(x.dim(2)) == spec.bins(), "depth_softmax: logits must be h x w x D");
    FrustumDistribution<T> out{Tensor<T>(x.shape()), spec, scale};
    const std::size_t d = x.dim(2);
    for (std::size_t p = 0; p < x.size() / d; ++p) {
        const T* in = x.data() + p * d;
        T* o = out.probs.data() + p * d;
        const T m = *std::max_element(in, in + d);
        T sum{0};
        for (std::size_t k = 0; k < d; ++k) sum += (o[k] = std::exp(in[k] - m));
        for (std::size_t k = 0; k < d; ++k) o[k] /= sum;
    }
    return out;
}

/// Vector-Jacobian product of the per-pixel softmax along the last axis.
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& probs, const Tensor<T>& grad_probs) {
    require(probs.shape() == grad_probs.shape(), "softmax_backward: shape mismatch");
    const std::size_t d = probs.shape().back();
    Tensor<T> grad(probs.shape());
    for (std::size_t p = 0; p < probs.size() / d; ++p) {
        const T* pr = probs.data() + p * d;
        const T* g = grad_probs.data() + p * d;
        T inner{0};
        for (std::size_t k = 0; k < d; ++k) inner += pr[k] * g[k];
        for (std::size_t k = 0; k < d; ++k) grad[p * d + k] = pr[k] * (g[k] - inner);
    }
    return grad;
}

/// Eight-corner trilinear footprint into an h x w x D lattice (zero padded).
struct TrilinearTap {
    std::array<std::int32_t, 8> index{};
    std::array<double, 8> weight{};
    bool valid = false;
};

/// Sample points of every voxel in one camera's frustum distribution. The
/// lattice coordinate of voxel depth d is (u/S - 0.5, v/S - 0.5, bin(d) - 0.5),
/// so pixel centers and bin midpoints sit on integer lattice points.
inline std::vector<TrilinearTap> make_frustum_plan(const VoxelGridSpec& grid, const CameraModel& cam,
                                                   const DepthBinSpec& spec, int scale = kDepthScale) {
    require(cam.width() % scale == 0 && cam.height() % scale == 0, "frustum_to_voxel: image not divisible by scale");
    const int h = cam.height() / scale;
    const int w = cam.width() / scale;
    const int d = spec.bins();
    const std::vector<Projection> proj = project_voxels(grid, cam);
    std::vector<TrilinearTap> plan(proj.size());
    for (std::size_t v = 0; v < proj.size(); ++v) {
        const Projection& p = proj[v];
        if (!p.valid || !(p.depth >= spec.d_min() && p.depth <= spec.d_max())) continue;
        const double coord[3] = {p.v / scale - 0.5, p.u / scale - 0.5, bin_coordinate(spec, p.depth) - 0.5};
        const int limits[3] = {h, w, d};
        double base[3], frac[3];
        for (int a = 0; a < 3; ++a) {
            base[a] = std::floor(coord[a]);
            frac[a] = coord[a] - base[a];
        }
        TrilinearTap tap;
        tap.valid = true;
        for (int corner = 0; corner < 8; ++corner) {
            double weight = 1.0;
            int idx[3];
            bool inside = true;
            for (int a = 0; a < 3; ++a) {
                const int bit = (corner >> (2 - a)) & 1;
                weight *= bit ? frac[a] : 1.0 - frac[a];
                idx[a] = static_cast<int>(base[a]) + bit;
                inside = inside && idx[a] >= 0 && idx[a] < limits[a];
            }
            if (!inside || weight == 0.0) {
                tap.index[corner] = -1;
                tap.weight[corner] = 0.0;
                continue;
            }
            tap.index[corner] = (idx[0] * w + idx[1]) * d + idx[2];
            tap.weight[corner] = weight;
        }
        plan[v] = tap;
    }
    return plan;
}

template <typename T>
OccupancyPrior<T> apply_frustum_plan(const Tensor<T>& probs, const std::vector<TrilinearTap>& plan,
                                     const VoxelGridSpec& grid) {
    const auto& dims = grid.dims();
    OccupancyPrior<T> out{Tensor<T>(Shape{static_cast<std::size_t>(dims[0]), static_cast<std::size_t>(dims[1]),
                                          static_cast<std::size_t>(dims[2])})};
    for (std::size_t v = 0; v < plan.size(); ++v) {
        const TrilinearTap& tap = plan[v];
        if (!tap.valid) continue;
        T acc{0};
        for (int c = 0; c < 8; ++c)
            if (tap.index[c] >= 0) acc += static_cast<T>(tap.weight[c]) * probs[static_cast<std::size_t>(tap.index[c])];
        out.values[v] = acc;
    }
    return out;
}

template <typename T>
void frustum_plan_backward(const Tensor<T>& grad_prior, const std::vector<TrilinearTap>& plan, Tensor<T>& grad_probs) {
    for (std::size_t v = 0; v < plan.size(); ++v) {
        const TrilinearTap& tap = plan[v];
        if (!tap.valid) continue;
        for (int c = 0; c < 8; ++c)
            if (tap.index[c] >= 0)
                grad_probs[static_cast<std::size_t>(tap.index[c])] += static_cast<T>(tap.weight[c]) * grad_prior[v];
    }
}

/// Resamples a frustum depth distribution into the voxel grid; voxels outside
/// the camera frustum or the [d_min, d_max] range get 0.
template <typename T>
OccupancyPrior<T> frustum_to_voxel(const FrustumDistribution<T>& dist, const VoxelGridSpec& grid,
                                   const CameraModel& cam) {
    require(dist.probs.rank() == 3 && static_cast<int>(dist.probs.dim(0)) * dist.scale == cam.height() &&
                static_cast<int>(dist.probs.dim(1)) * dist.scale == cam.width() &&
                static_cast<int>(dist.probs.dim(2)) == dist.spec.bins(),
            "frustum_to_voxel: distribution shape inconsistent with camera and bins");
    return apply_frustum_plan(dist.probs, make_frustum_plan(grid, cam, dist.spec, dist.scale), grid);
}

inline OverlapMask overlap_mask(const VoxelGridSpec& grid, const CameraRig& rig) {
    const std::vector<Projection> left = project_voxels(grid, rig.left);
    const std::vector<Projection> right = project_voxels(grid, rig.right);
    const auto& dims = grid.dims();
    OverlapMask mask{Tensor<double>(
        Shape{static_cast<std::size_t>(dims[0]), static_cast<std::size_t>(dims[1]), static_cast<std::size_t>(dims[2])},
        1.0)};
    for (std::size_t v = 0; v < left.size(); ++v)
        if (left[v].valid && right[v].valid) mask.values[v] = 0.5;
    return mask;
}

/// Per-voxel scalar weight mask * sum_i prior_i, broadcast over channels.
template <typename T>
Tensor<T> occupancy_weights(std::span<const OccupancyPrior<T>> priors, const OverlapMask& mask) {
    require(!priors.empty(), "occupancy_weight: need at least one prior");
    Tensor<T> weight(mask.values.shape());
    for (const auto& prior : priors) {
        require(prior.values.shape() == mask.values.shape(), "occupancy_weight: prior/mask shape mismatch");
        for (std::size_t v = 0; v < weight.size(); ++v) weight[v] += prior.values[v];
    }
    for (std::size_t v = 0; v < weight.size(); ++v) weight[v] *= static_cast<T>(mask.values[v]);
    return weight;
}

template <typename T>
FeatureVolume<T> occupancy_weight(std::span<const OccupancyPrior<T>> priors, const OverlapMask& mask,
                                  const FeatureVolume<T>& features) {
    require(static_cast<int>(mask.values.dim(0)) == features.grid.dims()[0] &&
                static_cast<int>(mask.values.dim(1)) == features.grid.dims()[1] &&
                static_cast<int>(mask.values.dim(2)) == features.grid.dims()[2],
            "occupancy_weight: mask/feature shape mismatch");
    const Tensor<T> weight = occupancy_weights(priors, mask);
    FeatureVolume<T> out(features.grid, features.channels());
    const std::size_t c = features.channels();
    for (std::size_t v = 0; v < weight.size(); ++v)
        for (std::size_t i = 0; i < c; ++i) out.values[v * c + i] = weight[v] * features.values[v * c + i];
    return out;
}

/// Adjoint of occupancy_weight: returns the feature gradient and writes the
/// (shared) gradient of each prior.
template <typename T>
Tensor<T> occupancy_weight_backward(std::span<const OccupancyPrior<T>> priors, const OverlapMask& mask,
                                    const FeatureVolume<T>& features, const Tensor<T>& grad_out,
                                    Tensor<T>& grad_prior) {
    const Tensor<T> weight = occupancy_weights(priors, mask);
    const std::size_t c = features.channels();
    Tensor<T> grad_features(features.values.shape());
    grad_prior = Tensor<T>(weight.shape());
    for (std::size_t v = 0; v < weight.size(); ++v) {
        T dot{0};
        for (std::size_t i = 0; i < c; ++i) {
            grad_features[v * c + i] = weight[v] * grad_out[v * c + i];
            dot += grad_out[v * c + i] * features.values[v * c + i];
        }
        grad_prior[v] = static_cast<T>(mask.values[v]) * dot;
    }
    return grad_features;
}

/// One-hot depth-bin targets at scale S with a per-cell validity flag.
template <typename T>
struct DepthTarget {
    Tensor<T> one_hot;           ///< (H/S) x (W/S) x D
    std::vector<std::uint8_t> valid;  ///< per cell
    std::vector<int> bins;       ///< per cell, -1 where invalid

    [[nodiscard]] std::size_t valid_count() const {
        return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
    }
};

/// Min-pools each S x S cell over valid (> 0) depths, then one-hot encodes the
/// nearest bin. Cells without a valid pixel are flagged invalid.
template <typename T, typename DepthT>
DepthTarget<T> build_depth_target(const Tensor<DepthT>& gt_depth, const DepthBinSpec& spec, int scale = kDepthScale) {
    require(gt_depth.rank() == 2, "build_depth_target: depth map must be H x W");
    const int height = static_cast<int>(gt_depth.dim(0));
    const int width = static_cast<int>(gt_depth.dim(1));
    require(scale > 0 && height % scale == 0 && width % scale == 0, "build_depth_target: size not divisible by scale");
    const int h = height / scale;
    const int w = width / scale;
    const int d = spec.bins();
    DepthTarget<T> target{Tensor<T>(Shape{static_cast<std::size_t>(h), static_cast<std::size_t>(w),
                                          static_cast<std::size_t>(d)}),
                          std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w, 0),
                          std::vector<int>(static_cast<std::size_t>(h) * w, -1)};
    for (int cy = 0; cy < h; ++cy) {
        for (int cx = 0; cx < w; ++cx) {
            double best = std::numeric_limits<double>::infinity();
            for (int y = cy * scale; y < (cy + 1) * scale; ++y)
                for (int x = cx * scale; x < (cx + 1) * scale; ++x) {
                    const double z = static_cast<double>(gt_depth.at(y, x));
                    require(z >= 0.0, "build_depth_target: depth must be nonnegative");
                    if (z > 0.0 && std::isfinite(z)) best = std::min(best, z);
                }
            if (!std::isfinite(best)) continue;
            const std::size_t cell = static_cast<std::size_t>(cy) * w + cx;
            const int bin = depth_to_bin(spec, best);
            target.valid[cell] = 1;
            target.bins[cell] = bin;
            target.one_hot[cell * d + bin] = T{1};
        }
    }
    return target;
}

}  // namespace occdepth
