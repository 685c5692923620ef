#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "occdepth/config.hpp"
#include "occdepth/lifting.hpp"
#include "occdepth/losses.hpp"
#include "occdepth/oad.hpp"
#include "occdepth/rng.hpp"
#include "occdepth/scenes.hpp"
#include "occdepth/toynet.hpp"

namespace occdepth {

/// Which parts of the network are active.
struct PipelineOptions {
    FusionMode fusion = FusionMode::cosine_weighted;
    bool oad = true;
    bool distill = true;
    bool sem_mask_empty = false;
    DepthBinSpec depth_spec{0.5, 12.0, 16, DepthBinning::linear_increasing};

    static PipelineOptions from_config(const TrainConfig& c) {
        return {c.stereo_sfa ? FusionMode::cosine_weighted : FusionMode::plain_mean, c.oad, c.distill, c.sem_mask_empty,
                c.depth_spec()};
    }
};

/// Geometry-only state shared by every sample captured with the same rig and grid.
struct RigPlans {
    VoxelGridSpec grid;
    CameraRig rig;
    std::array<std::vector<TrilinearTap>, 2> frustum;
    OverlapMask mask;

    RigPlans(const VoxelGridSpec& g, const CameraRig& r, const DepthBinSpec& spec)
        : grid(g),
          rig(r),
          frustum{make_frustum_plan(g, r.left, spec, kDepthScale), make_frustum_plan(g, r.right, spec, kDepthScale)},
          mask(overlap_mask(g, r)) {}

    [[nodiscard]] bool matches(const VoxelGridSpec& g, const CameraRig& r) const {
        return g == grid && r.left.intrinsics() == rig.left.intrinsics() &&
               r.right.intrinsics() == rig.right.intrinsics() &&
               r.left.cam_from_world() == rig.left.cam_from_world() &&
               r.right.cam_from_world() == rig.right.cam_from_world() && r.left.width() == rig.left.width() &&
               r.left.height() == rig.left.height();
    }
};

template <typename T>
struct PipelineOutput {
    Tensor<T> logits_2class;  ///< X x Y x Z x 2
    Tensor<T> logits_nclass;  ///< X x Y x Z x (N+1)
    std::array<DepthLogits<T>, 2> depth_logits;
    std::array<std::optional<FrustumDistribution<T>>, 2> depth_probs;
};

/// Per-step loss values plus the gradients needed for the backward pass.
template <typename T>
struct PipelineLoss {
    LossReport report;
    Tensor<T> grad_2class;
    Tensor<T> grad_nclass;
    std::array<Tensor<T>, 2> grad_depth_logits;  ///< empty when distillation is off
};

/// Ground-truth depth degraded into a teacher signal: multiplicative noise of
/// relative std `noise` on every valid pixel.
template <typename DepthT>
Tensor<DepthT> teacher_depth(const Tensor<DepthT>& depth, double noise, std::uint64_t seed) {
    if (noise <= 0.0) return depth;
    Rng rng(seed);
    Tensor<DepthT> out = depth;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (out[i] > 0) out[i] = static_cast<DepthT>(std::max(1e-3, out[i] * (1.0 + noise * rng.normal())));
    return out;
}

/// The full stereo network: two encoder passes, stereo lifting, depth heads,
/// occupancy-aware weighting and the 3D refiner with its two heads.
template <typename T>
class Pipeline {
public:
    Pipeline(Model<T> model, PipelineOptions options) : model_(std::move(model)), options_(std::move(options)) {
        require(options_.depth_spec.bins() == model_.config().depth_bins,
                "Pipeline: depth bin count differs between model and options");
    }

    [[nodiscard]] Model<T>& model() noexcept { return model_; }
    [[nodiscard]] const Model<T>& model() const noexcept { return model_; }
    [[nodiscard]] const PipelineOptions& options() const noexcept { return options_; }

    PipelineOutput<T> forward(const SceneSample& sample) {
        prepare(sample);
        const Tensor<T> images[2] = {sample.left_image.template cast<T>(), sample.right_image.template cast<T>()};
        for (int cam = 0; cam < 2; ++cam) {
            pyramids_[cam] = model_.encode_2d(images[cam], &encoder_cache_[cam]);
            pyramids_[cam].validate(sample.rig[cam].height(), sample.rig[cam].width());
        }
        lifted_ = lifter_->forward(pyramids_[0], pyramids_[1]);
        PipelineOutput<T> out;
        const bool need_depth = options_.oad || options_.distill;
        if (need_depth)
            for (int cam = 0; cam < 2; ++cam)
                out.depth_logits[cam] = model_.depth_head(pyramids_[cam].levels[3], &depth_cache_[cam]);
        const FeatureVolume<T>* refine_input = &*lifted_;
        if (options_.oad) {
            priors_.clear();
            for (int cam = 0; cam < 2; ++cam) {
                out.depth_probs[cam] = depth_softmax(out.depth_logits[cam], options_.depth_spec, kDepthScale);
                priors_.push_back(apply_frustum_plan(out.depth_probs[cam]->probs, plans_->frustum[cam], sample.grid));
            }
            weighted_ = occupancy_weight(std::span<const OccupancyPrior<T>>(priors_), plans_->mask, *lifted_);
            refine_input = &*weighted_;
        }
        auto refined = model_.refine_3d(*refine_input, &refine_cache_);
        out.logits_2class = std::move(refined.logits_2class);
        out.logits_nclass = std::move(refined.logits_nclass);
        return out;
    }

    /// Loss of a forward output. `teacher` holds per-camera depth maps used for
    /// distillation (ignored when distillation is off).
    PipelineLoss<T> loss(const PipelineOutput<T>& out, const SceneSample& sample,
                         const std::array<const Tensor<float>*, 2>& teacher, long long step, long long total_steps) const {
        PipelineLoss<T> result;
        LossComponents c;
        auto occ = loss_occ(out.logits_2class, sample.labels);
        c.l_occ = occ.value;
        result.grad_2class = std::move(occ.grad);

        SemanticLossOptions sem_options;
        sem_options.mask_empty = options_.sem_mask_empty;
        auto sem = loss_sem(out.logits_nclass, sample.labels, sem_options);
        c.l_sem = sem.value;

        const Tensor<T> probs = class_softmax(out.logits_nclass);
        auto scal_sem = loss_scal(probs, sample.labels, ScalMode::sem);
        auto scal_geo = loss_scal(probs, sample.labels, ScalMode::geo);
        c.l_scal_sem = scal_sem.value;
        c.l_scal_geo = scal_geo.value;

        if (options_.distill) {
            for (int cam = 0; cam < 2; ++cam) {
                const auto target = build_depth_target<T>(*teacher[cam], options_.depth_spec, kDepthScale);
                if (target.valid_count() == 0) {
                    result.grad_depth_logits[cam] = Tensor<T>(out.depth_logits[cam].logits.shape());
                    continue;
                }
                auto d = loss_depth(out.depth_logits[cam], target);
                c.l_depth += 0.5 * d.value;
                result.grad_depth_logits[cam] = std::move(d.grad);
                for (auto& g : result.grad_depth_logits[cam].storage()) g *= T(0.5);
            }
        }
        result.report = loss_total(c, step, total_steps);

        // d/dprobs of gamma * scal_sem + scal_geo, pulled back through the softmax
        Tensor<T> grad_probs = std::move(scal_sem.grad);
        for (auto& g : grad_probs.storage()) g *= static_cast<T>(result.report.gamma);
        add_into(grad_probs, scal_geo.grad);
        result.grad_nclass = std::move(sem.grad);
        add_into(result.grad_nclass, softmax_backward(probs, grad_probs));
        return result;
    }

    /// Accumulates parameter gradients of the last forward pass given the
    /// loss gradients (call model().params().zero_grad() first).
    void backward(const PipelineOutput<T>& out, const PipelineLoss<T>& loss) {
        Tensor<T> grad_volume = model_.refine_3d_backward(refine_cache_, loss.grad_2class, loss.grad_nclass);
        std::array<Tensor<T>, 2> grad_depth;
        for (int cam = 0; cam < 2; ++cam)
            if (options_.oad || options_.distill) grad_depth[cam] = Tensor<T>(out.depth_logits[cam].logits.shape());
        if (options_.oad) {
            Tensor<T> grad_prior;
            grad_volume = occupancy_weight_backward(std::span<const OccupancyPrior<T>>(priors_), plans_->mask, *lifted_,
                                                    grad_volume, grad_prior);
            for (int cam = 0; cam < 2; ++cam) {
                Tensor<T> grad_probs(out.depth_probs[cam]->probs.shape());
                frustum_plan_backward(grad_prior, plans_->frustum[cam], grad_probs);
                grad_depth[cam] = softmax_backward(out.depth_probs[cam]->probs, grad_probs);
            }
        }
        if (options_.distill)
            for (int cam = 0; cam < 2; ++cam)
                if (!loss.grad_depth_logits[cam].empty()) add_into(grad_depth[cam], loss.grad_depth_logits[cam]);
        auto [grad_left, grad_right] = lifter_->backward(grad_volume);
        std::array<FeaturePyramid<T>, 2> grads{std::move(grad_left), std::move(grad_right)};
        if (options_.oad || options_.distill)
            for (int cam = 0; cam < 2; ++cam)
                add_into(grads[cam].levels[3], model_.depth_head_backward(depth_cache_[cam], grad_depth[cam]));
        for (int cam = 0; cam < 2; ++cam) model_.encode_2d_backward(encoder_cache_[cam], grads[cam]);
    }

    /// Softmax over the class axis of X x Y x Z x K logits.
    static Tensor<T> class_softmax(const Tensor<T>& logits) {
        const std::size_t k = logits.shape().back();
        Tensor<T> p(logits.shape());
        for (std::size_t v = 0; v < logits.size() / k; ++v) {
            const T* in = logits.data() + v * k;
            T* o = p.data() + v * k;
            const T m = *std::max_element(in, in + k);
            T sum{0};
            for (std::size_t c = 0; c < k; ++c) sum += (o[c] = std::exp(in[c] - m));
            for (std::size_t c = 0; c < k; ++c) o[c] /= sum;
        }
        return p;
    }

private:
    void prepare(const SceneSample& sample) {
        require(sample.labels.n_classes == model_.config().n_classes,
                "Pipeline: sample class count differs from the model");
        if (!plans_ || !plans_->matches(sample.grid, sample.rig)) {
            plans_.emplace(sample.grid, sample.rig, options_.depth_spec);
            lifter_.emplace(sample.grid, sample.rig, options_.fusion);
        }
    }

    Model<T> model_;
    PipelineOptions options_;
    std::optional<RigPlans> plans_;
    std::optional<StereoLifter<T>> lifter_;
    std::array<FeaturePyramid<T>, 2> pyramids_;
    std::array<typename Model<T>::EncoderCache, 2> encoder_cache_;
    std::array<typename Model<T>::DepthCache, 2> depth_cache_;
    typename Model<T>::RefineCache refine_cache_;
    std::optional<FeatureVolume<T>> lifted_;
    std::optional<FeatureVolume<T>> weighted_;
    std::vector<OccupancyPrior<T>> priors_;
};

}  // namespace occdepth
