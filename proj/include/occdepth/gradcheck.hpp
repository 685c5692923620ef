#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "occdepth/lifting.hpp"
#include "occdepth/losses.hpp"
#include "occdepth/oad.hpp"
#include "occdepth/pipeline.hpp"
#include "occdepth/rng.hpp"
#include "occdepth/scenes.hpp"

namespace occdepth {

inline constexpr double kGradcheckTolerance = 1e-4;
inline constexpr double kGradcheckStep = 1e-6;

struct GradcheckResult {
    std::string module;
    std::string operation;
    double max_rel_error = 0.0;
    std::size_t entries = 0;
    bool passed = false;
};

/// max|a - n| / max(|a|_inf, |n|_inf, 1e-12).
inline double gradient_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
    require(analytic.size() == numeric.size(), "gradient_relative_error: size mismatch");
    double diff = 0.0, scale = 1e-12;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
        scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
    }
    return diff / scale;
}

/// Central differences of `f` with respect to each entry pointed to by `inputs`.
inline std::vector<double> numeric_gradient(const std::function<double()>& f, const std::vector<double*>& inputs,
                                            double h = kGradcheckStep) {
    std::vector<double> out;
    out.reserve(inputs.size());
    for (double* x : inputs) {
        const double saved = *x;
        *x = saved + h;
        const double up = f();
        *x = saved - h;
        const double down = f();
        *x = saved;
        out.push_back((up - down) / (2.0 * h));
    }
    return out;
}

inline GradcheckResult make_gradcheck_result(std::string module, std::string operation,
                                             const std::vector<double>& analytic, const std::vector<double>& numeric) {
    const double err = gradient_relative_error(analytic, numeric);
    return {std::move(module), std::move(operation), err, analytic.size(),
            std::isfinite(err) && err <= kGradcheckTolerance};
}

namespace detail {

inline void fill_uniform(Tensor<double>& t, Rng& rng, double lo, double hi) {
    for (auto& x : t.storage()) x = rng.uniform(lo, hi);
}

inline std::vector<double*> pointers(Tensor<double>& t) {
    std::vector<double*> out;
    for (auto& x : t.storage()) out.push_back(&x);
    return out;
}

inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// 16 x 16 rectified pair (f = 8) looking down +z with a 0.3 m baseline, and a
/// 4 x 4 x 4 grid of 0.5 m voxels in front of it.
struct SmallRig {
    CameraRig rig;
    VoxelGridSpec grid;
};

inline SmallRig small_rig() {
    Eigen::Matrix3d k;
    k << 8, 0, 8, 0, 8, 8, 0, 0, 1;
    Eigen::Matrix4d left = Eigen::Matrix4d::Identity();
    Eigen::Matrix4d right = Eigen::Matrix4d::Identity();
    right(0, 3) = -0.3;
    return {CameraRig(CameraModel(k, left, 16, 16), CameraModel(k, right, 16, 16)),
            VoxelGridSpec(Eigen::Vector3d(-1.0, -1.0, 0.9), {4, 4, 4}, 0.5)};
}

inline VoxelLabels random_labels(const std::array<int, 3>& dims, int n_classes, Rng& rng, bool with_ignored) {
    VoxelLabels labels(dims, n_classes);
    for (auto& l : labels.semantic) {
        l = static_cast<std::uint8_t>(rng.uniform_int(0, n_classes));
        if (with_ignored && rng.bernoulli(0.1)) l = kIgnoreLabel;
    }
    // every class present at least once so each scal term is exercised
    for (int c = 0; c <= n_classes; ++c) labels.semantic[static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(c);
    return labels;
}

}  // namespace detail

inline std::vector<GradcheckResult> gradcheck_lifting(std::uint64_t seed = 1) {
    std::vector<GradcheckResult> results;
    Rng rng(derive_seed(seed, "gradcheck-lifting"));
    const auto [rig, grid] = detail::small_rig();
    const int c = 3;
    for (const FusionMode mode : {FusionMode::cosine_weighted, FusionMode::plain_mean}) {
        // Strictly positive features keep every cosine away from the clamp at 0
        // and every sample away from the zero-vector cases.
        FeatureVolume<double> a(grid, c), b(grid, c);
        detail::fill_uniform(a.values, rng, 0.1, 1.0);
        detail::fill_uniform(b.values, rng, 0.1, 1.0);
        Tensor<double> r(a.values.shape());
        detail::fill_uniform(r, rng, -1.0, 1.0);
        Tensor<double> ga, gb;
        fuse_stereo_backward(a, b, r, ga, gb, mode);
        auto f = [&] { return detail::dot(fuse_stereo(a, b, mode).values, r); };
        std::vector<double*> inputs = detail::pointers(a.values);
        for (double* p : detail::pointers(b.values)) inputs.push_back(p);
        std::vector<double> analytic(ga.storage());
        analytic.insert(analytic.end(), gb.storage().begin(), gb.storage().end());
        results.push_back(make_gradcheck_result(
            "lifting", mode == FusionMode::cosine_weighted ? "fuse_stereo" : "fuse_stereo[plain_mean]", analytic,
            numeric_gradient(f, inputs)));
    }
    {
        FeaturePyramid<double> left, right;
        for (std::size_t l = 0; l < 4; ++l) {
            const auto s = static_cast<std::size_t>(kPyramidScales[l]);
            left.levels[l] = Tensor<double>(Shape{16 / s, 16 / s, static_cast<std::size_t>(c)});
            right.levels[l] = Tensor<double>(left.levels[l].shape());
            detail::fill_uniform(left.levels[l], rng, 0.1, 1.0);
            detail::fill_uniform(right.levels[l], rng, 0.1, 1.0);
        }
        StereoLifter<double> lifter(grid, rig);
        const FeatureVolume<double> probe = lifter.forward(left, right);
        Tensor<double> r(probe.values.shape());
        detail::fill_uniform(r, rng, -1.0, 1.0);
        const auto [gl, gr] = lifter.backward(r);
        auto f = [&] { return detail::dot(lift_and_fuse(left, right, grid, rig).values, r); };
        std::vector<double*> inputs;
        std::vector<double> analytic;
        for (std::size_t l = 0; l < 4; ++l) {
            for (double* p : detail::pointers(left.levels[l])) inputs.push_back(p);
            analytic.insert(analytic.end(), gl.levels[l].storage().begin(), gl.levels[l].storage().end());
            for (double* p : detail::pointers(right.levels[l])) inputs.push_back(p);
            analytic.insert(analytic.end(), gr.levels[l].storage().begin(), gr.levels[l].storage().end());
        }
        results.push_back(make_gradcheck_result("lifting", "lift_and_fuse", analytic, numeric_gradient(f, inputs)));
    }
    return results;
}

inline std::vector<GradcheckResult> gradcheck_oad(std::uint64_t seed = 1) {
    std::vector<GradcheckResult> results;
    Rng rng(derive_seed(seed, "gradcheck-oad"));
    const auto [rig, grid] = detail::small_rig();
    const DepthBinSpec spec(0.5, 4.0, 6, DepthBinning::linear_increasing);
    const int scale = 4;
    const int c = 3;
    std::array<DepthLogits<double>, 2> logits;
    for (auto& l : logits) {
        l.logits = Tensor<double>(Shape{4, 4, static_cast<std::size_t>(spec.bins())});
        detail::fill_uniform(l.logits, rng, -2.0, 2.0);
    }
    FeatureVolume<double> features(grid, c);
    detail::fill_uniform(features.values, rng, -1.0, 1.0);
    const OverlapMask mask = overlap_mask(grid, rig);
    const std::array<std::vector<TrilinearTap>, 2> plans{make_frustum_plan(grid, rig.left, spec, scale),
                                                         make_frustum_plan(grid, rig.right, spec, scale)};
    Tensor<double> r(features.values.shape());
    detail::fill_uniform(r, rng, -1.0, 1.0);

    auto forward = [&](std::vector<OccupancyPrior<double>>& priors, std::array<FrustumDistribution<double>, 2>* dists) {
        priors.clear();
        for (int cam = 0; cam < 2; ++cam) {
            auto dist = depth_softmax(logits[cam], spec, scale);
            priors.push_back(frustum_to_voxel(dist, grid, rig[cam]));
            if (dists) (*dists)[cam] = std::move(dist);
        }
        return occupancy_weight(std::span<const OccupancyPrior<double>>(priors), mask, features);
    };
    std::vector<OccupancyPrior<double>> priors;
    std::array<FrustumDistribution<double>, 2> dists{FrustumDistribution<double>{{}, spec, scale},
                                                     FrustumDistribution<double>{{}, spec, scale}};
    (void)forward(priors, &dists);
    Tensor<double> grad_prior;
    const Tensor<double> grad_features =
        occupancy_weight_backward(std::span<const OccupancyPrior<double>>(priors), mask, features, r, grad_prior);
    std::vector<double> analytic(grad_features.storage());
    std::vector<double*> inputs = detail::pointers(features.values);
    for (int cam = 0; cam < 2; ++cam) {
        Tensor<double> grad_probs(dists[cam].probs.shape());
        frustum_plan_backward(grad_prior, plans[cam], grad_probs);
        const Tensor<double> g = softmax_backward(dists[cam].probs, grad_probs);
        analytic.insert(analytic.end(), g.storage().begin(), g.storage().end());
        for (double* p : detail::pointers(logits[cam].logits)) inputs.push_back(p);
    }
    auto f = [&] {
        std::vector<OccupancyPrior<double>> p;
        return detail::dot(forward(p, nullptr).values, r);
    };
    results.push_back(make_gradcheck_result("oad", "depth_softmax>frustum_to_voxel>occupancy_weight", analytic,
                                            numeric_gradient(f, inputs)));
    return results;
}

inline std::vector<GradcheckResult> gradcheck_losses(std::uint64_t seed = 1) {
    std::vector<GradcheckResult> results;
    Rng rng(derive_seed(seed, "gradcheck-losses"));
    const std::array<int, 3> dims{3, 3, 3};
    const int n = 4;
    const std::size_t k = n + 1;
    const VoxelLabels labels = detail::random_labels(dims, n, rng, true);
    const Shape shape2{3, 3, 3, 2};
    const Shape shapen{3, 3, 3, k};

    {
        Tensor<double> x(shape2);
        detail::fill_uniform(x, rng, -2.0, 2.0);
        const auto a = loss_occ(x, labels);
        results.push_back(make_gradcheck_result("losses", "loss_occ", a.grad.storage(),
                                                numeric_gradient([&] { return loss_occ(x, labels).value; },
                                                                 detail::pointers(x))));
    }
    for (const bool weighted : {false, true}) {
        Tensor<double> x(shapen);
        detail::fill_uniform(x, rng, -2.0, 2.0);
        SemanticLossOptions options;
        if (weighted) {
            options.class_weights = {0.5, 1.0, 2.0, 1.5, 0.75};
            options.mask_empty = true;
        }
        const auto a = loss_sem(x, labels, options);
        results.push_back(make_gradcheck_result(
            "losses", weighted ? "loss_sem[weighted,mask_empty]" : "loss_sem", a.grad.storage(),
            numeric_gradient([&] { return loss_sem(x, labels, options).value; }, detail::pointers(x))));
    }
    {
        DepthLogits<double> x{Tensor<double>(Shape{2, 3, 6})};
        detail::fill_uniform(x.logits, rng, -2.0, 2.0);
        Tensor<float> depth(Shape{16, 24});
        for (auto& d : depth.storage()) d = static_cast<float>(rng.bernoulli(0.2) ? 0.0 : rng.uniform(0.5, 4.0));
        const auto target = build_depth_target<double>(depth, DepthBinSpec(0.5, 4.0, 6, DepthBinning::linear_increasing));
        const auto a = loss_depth(x, target);
        results.push_back(make_gradcheck_result("losses", "loss_depth", a.grad.storage(),
                                                numeric_gradient([&] { return loss_depth(x, target).value; },
                                                                 detail::pointers(x.logits))));
    }
    for (const ScalMode mode : {ScalMode::sem, ScalMode::geo}) {
        Tensor<double> logits(shapen);
        detail::fill_uniform(logits, rng, -2.0, 2.0);
        Tensor<double> p = Pipeline<double>::class_softmax(logits);
        const auto a = loss_scal(p, labels, mode);
        results.push_back(make_gradcheck_result(
            "losses", mode == ScalMode::sem ? "loss_scal[sem]" : "loss_scal[geo]", a.grad.storage(),
            numeric_gradient([&] { return loss_scal(p, labels, mode).value; }, detail::pointers(p))));
    }
    {
        // l_total is linear in its components with weights (1, 1, 1, gamma, 1).
        LossComponents comp{rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
        const long long step = 37, total = 100;
        const double g = gamma(step, total);
        double* fields[5] = {&comp.l_occ, &comp.l_sem, &comp.l_depth, &comp.l_scal_sem, &comp.l_scal_geo};
        results.push_back(make_gradcheck_result(
            "losses", "loss_total", {1.0, 1.0, 1.0, g, 1.0},
            numeric_gradient([&] { return loss_total(comp, step, total).l_total; }, {fields, fields + 5})));
    }
    return results;
}

/// Scene parameters for a small end-to-end check: 16 x 16 images, 8 x 6 x 8 grid.
inline SceneParams tiny_scene_params() {
    SceneParams p;
    p.grid_dims = {8, 6, 8};
    p.voxel_size = 0.5;
    p.image_width = 16;
    p.image_height = 16;
    p.camera_height = 1.5;
    p.camera_z = 0.75;
    p.n_classes = 5;
    p.min_objects = 1;
    p.max_objects = 2;
    p.min_object_extent = 1;
    p.max_object_extent = 2;
    return p;
}

/// Whole network in double precision: l_total against central differences
/// for a random subset of entries of every parameter tensor.
inline std::vector<GradcheckResult> gradcheck_pipeline(std::uint64_t seed = 1, std::size_t entries_per_param = 4) {
    const SceneParams params = tiny_scene_params();
    const SceneSample sample = generate_scene(seed, params, "gradcheck");
    ModelConfig mc;
    mc.channels = 3;
    mc.depth_bins = 6;
    mc.n_classes = params.n_classes;
    mc.encoder_width = 4;
    mc.refiner_width = 4;
    mc.refiner_depth = 1;
    mc.seed = seed;
    PipelineOptions options;
    options.depth_spec = DepthBinSpec(0.5, 6.0, 6, DepthBinning::linear_increasing);
    Pipeline<double> pipe(Model<double>(mc), options);
    // Zero-initialised biases can make a whole pyramid level exactly zero
    // (dead ReLUs), which lands on the out-of-view case of stereo fusion.
    Rng bias_rng(derive_seed(seed, "gradcheck-bias"));
    for (auto& p : pipe.model().params().all())
        if (p.name.ends_with(".bias"))
            for (auto& b : p.value.storage()) b = bias_rng.uniform(0.05, 0.3);
    const long long step = 3, total = 10;
    const std::array<const Tensor<float>*, 2> teacher{&sample.left_depth, &sample.right_depth};
    auto loss_value = [&] {
        const auto out = pipe.forward(sample);
        return pipe.loss(out, sample, teacher, step, total).report.l_total;
    };
    const auto out = pipe.forward(sample);
    const auto loss = pipe.loss(out, sample, teacher, step, total);
    pipe.model().params().zero_grad();
    pipe.backward(out, loss);

    Rng rng(derive_seed(seed, "gradcheck-pipeline"));
    std::vector<double*> inputs;
    std::vector<double> analytic;
    for (auto& p : pipe.model().params().all()) {
        for (std::size_t e = 0; e < std::min(entries_per_param, p.value.size()); ++e) {
            const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(p.value.size()) - 1));
            inputs.push_back(&p.value[i]);
            analytic.push_back(p.grad[i]);
        }
    }
    return {make_gradcheck_result("pipeline", "l_total(parameters)", analytic, numeric_gradient(loss_value, inputs))};
}

inline const std::vector<std::string>& gradcheck_modules() {
    static const std::vector<std::string> names{"lifting", "oad", "losses", "pipeline"};
    return names;
}

inline std::vector<GradcheckResult> run_gradcheck(const std::string& module, std::uint64_t seed = 1) {
    if (module == "lifting") return gradcheck_lifting(seed);
    if (module == "oad") return gradcheck_oad(seed);
    if (module == "losses") return gradcheck_losses(seed);
    if (module == "pipeline") return gradcheck_pipeline(seed);
    if (module == "all") {
        std::vector<GradcheckResult> all;
        for (const auto& m : gradcheck_modules()) {
            auto part = run_gradcheck(m, seed);
            all.insert(all.end(), part.begin(), part.end());
        }
        return all;
    }
    throw ContractError("unknown gradcheck module '" + module + "' (expected all, lifting, oad, losses or pipeline)");
}

}  // namespace occdepth
