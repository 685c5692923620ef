#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "occdepth/labels.hpp"
#include "occdepth/oad.hpp"
#include "occdepth/tensor.hpp"

namespace occdepth {

/// A scalar loss and its gradient with respect to the loss input.
template <typename T>
struct LossValue {
    double value = 0.0;
    Tensor<T> grad;
};

namespace detail {

// Softmax cross-entropy of one row; writes d(loss)/d(logits) scaled by `scale`.
template <typename T>
double softmax_xent_row(const T* logits, std::size_t k, std::size_t target, double scale, T* grad) {
    double m = static_cast<double>(logits[0]);
    for (std::size_t c = 1; c < k; ++c) m = std::max(m, static_cast<double>(logits[c]));
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) sum += std::exp(static_cast<double>(logits[c]) - m);
    const double log_z = m + std::log(sum);
    for (std::size_t c = 0; c < k; ++c) {
        const double p = std::exp(static_cast<double>(logits[c]) - log_z);
        grad[c] += static_cast<T>(scale * (p - (c == target ? 1.0 : 0.0)));
    }
    return log_z - static_cast<double>(logits[target]);
}

template <typename T>
void check_voxel_logits(const Tensor<T>& logits, const VoxelLabels& labels, std::size_t classes, const char* who) {
    require(logits.rank() == 4 && static_cast<int>(logits.dim(0)) == labels.dims[0] &&
                static_cast<int>(logits.dim(1)) == labels.dims[1] && static_cast<int>(logits.dim(2)) == labels.dims[2] &&
                logits.dim(3) == classes,
            std::string(who) + ": logits shape " + shape_string(logits.shape()) + " does not match labels");
}

}  // namespace detail

/// Mean two-class cross-entropy against occupancy (label > 0) over non-ignored voxels.
template <typename T>
LossValue<T> loss_occ(const Tensor<T>& logits_2class, const VoxelLabels& labels) {
    detail::check_voxel_logits(logits_2class, labels, 2, "loss_occ");
    std::size_t count = 0;
    for (std::size_t v = 0; v < labels.size(); ++v) count += labels.ignored(v) ? 0 : 1;
    if (count == 0) throw DegenerateBatchError("loss_occ: every voxel is ignored");
    LossValue<T> out{0.0, Tensor<T>(logits_2class.shape())};
    const double scale = 1.0 / static_cast<double>(count);
    for (std::size_t v = 0; v < labels.size(); ++v) {
        if (labels.ignored(v)) continue;
        out.value += detail::softmax_xent_row(logits_2class.data() + 2 * v, 2, labels.occupied(v) ? 1 : 0, scale,
                                              out.grad.data() + 2 * v);
    }
    out.value *= scale;
    return out;
}

struct SemanticLossOptions {
    /// Per-class CE weights for classes 0..N; empty means uniform.
    std::vector<double> class_weights;
    /// Exclude voxels whose ground truth is empty (class 0).
    bool mask_empty = false;
};

/// Mean (optionally class-weighted) categorical cross-entropy over classes 0..N.
template <typename T>
LossValue<T> loss_sem(const Tensor<T>& logits_nclass, const VoxelLabels& labels,
                      const SemanticLossOptions& options = {}) {
    const std::size_t k = static_cast<std::size_t>(labels.n_classes) + 1;
    detail::check_voxel_logits(logits_nclass, labels, k, "loss_sem");
    require(options.class_weights.empty() || options.class_weights.size() == k,
            "loss_sem: class_weights must have N + 1 entries");
    auto weight_of = [&](std::size_t c) { return options.class_weights.empty() ? 1.0 : options.class_weights[c]; };
    double total_weight = 0.0;
    for (std::size_t v = 0; v < labels.size(); ++v) {
        if (labels.ignored(v) || (options.mask_empty && labels.semantic[v] == kEmptyLabel)) continue;
        total_weight += weight_of(labels.semantic[v]);
    }
    if (!(total_weight > 0.0)) throw DegenerateBatchError("loss_sem: no contributing voxels");
    LossValue<T> out{0.0, Tensor<T>(logits_nclass.shape())};
    for (std::size_t v = 0; v < labels.size(); ++v) {
        if (labels.ignored(v) || (options.mask_empty && labels.semantic[v] == kEmptyLabel)) continue;
        const std::size_t y = labels.semantic[v];
        const double s = weight_of(y) / total_weight;
        out.value += s * detail::softmax_xent_row(logits_nclass.data() + k * v, k, y, s, out.grad.data() + k * v);
    }
    return out;
}

/// Mean cross-entropy between softmax(logits) and the one-hot targets over valid cells.
template <typename T>
LossValue<T> loss_depth(const DepthLogits<T>& logits, const DepthTarget<T>& target) {
    const Tensor<T>& x = logits.logits;
    require(x.shape() == target.one_hot.shape(), "loss_depth: logits/target shape mismatch");
    const std::size_t d = x.dim(2);
    const std::size_t count = target.valid_count();
    if (count == 0) throw DegenerateBatchError("loss_depth: no valid depth cells");
    LossValue<T> out{0.0, Tensor<T>(x.shape())};
    const double scale = 1.0 / static_cast<double>(count);
    for (std::size_t cell = 0; cell < target.valid.size(); ++cell) {
        if (!target.valid[cell]) continue;
        out.value += detail::softmax_xent_row(x.data() + d * cell, d, static_cast<std::size_t>(target.bins[cell]),
                                              scale, out.grad.data() + d * cell);
    }
    out.value *= scale;
    return out;
}

enum class ScalMode { sem, geo };

inline constexpr double kScalLogFloor = 1e-12;

/// Scene-class affinity loss on per-voxel class probabilities (V x (N+1), or
/// X x Y x Z x (N+1)). For each class c present among non-ignored labels it
/// averages -(log P_c + log R_c + log S_c) / 3 of soft precision, recall and
/// specificity. `geo` collapses to occupancy (p_occ = 1 - p_empty) and scores
/// the occupied class only. A specificity term with no negatives is skipped.
template <typename T>
LossValue<T> loss_scal(const Tensor<T>& probs, const VoxelLabels& labels, ScalMode mode) {
    const std::size_t k = static_cast<std::size_t>(labels.n_classes) + 1;
    require(probs.size() == labels.size() * k && probs.shape().back() == k,
            "loss_scal: probabilities must be per-voxel over N + 1 classes");
    LossValue<T> out{0.0, Tensor<T>(probs.shape())};
    const std::size_t n = labels.size();

    // Scores one binary "class" given per-voxel probabilities p(v) and membership is_c(v).
    // Returns the term and accumulates d(term)/d p(v) into dp.
    std::vector<double> p(n), dp(n);
    std::vector<char> member(n);
    auto score_class = [&]() -> std::optional<double> {
        double num = 0.0, den = 0.0, pos = 0.0, neg = 0.0, spec_num = 0.0;
        for (std::size_t v = 0; v < n; ++v) {
            if (labels.ignored(v)) continue;
            den += p[v];
            if (member[v]) {
                num += p[v];
                pos += 1.0;
            } else {
                neg += 1.0;
                spec_num += 1.0 - p[v];
            }
        }
        if (pos == 0.0) return std::nullopt;
        const double precision = den > 0.0 ? num / den : 0.0;
        const double recall = num / pos;
        double term = -(std::log(std::max(precision, kScalLogFloor)) + std::log(std::max(recall, kScalLogFloor)));
        const bool use_spec = neg > 0.0;
        const double specificity = use_spec ? spec_num / neg : 1.0;
        if (use_spec) term -= std::log(std::max(specificity, kScalLogFloor));
        term /= 3.0;
        std::fill(dp.begin(), dp.end(), 0.0);
        for (std::size_t v = 0; v < n; ++v) {
            if (labels.ignored(v)) continue;
            double g = 0.0;
            if (precision > kScalLogFloor) g += ((member[v] ? den : 0.0) - num) / (den * den) / precision;
            if (recall > kScalLogFloor && member[v]) g += 1.0 / pos / recall;
            if (use_spec && specificity > kScalLogFloor && !member[v]) g += -1.0 / neg / specificity;
            dp[v] = -g / 3.0;
        }
        return term;
    };

    if (mode == ScalMode::sem) {
        std::size_t present = 0;
        std::vector<std::vector<double>> grads;
        std::vector<std::size_t> classes;
        for (std::size_t c = 0; c < k; ++c) {
            for (std::size_t v = 0; v < n; ++v) {
                p[v] = static_cast<double>(probs[v * k + c]);
                member[v] = labels.semantic[v] == c;
            }
            const auto term = score_class();
            if (!term) continue;
            ++present;
            out.value += *term;
            grads.push_back(dp);
            classes.push_back(c);
        }
        if (present == 0) return out;
        out.value /= static_cast<double>(present);
        for (std::size_t i = 0; i < classes.size(); ++i)
            for (std::size_t v = 0; v < n; ++v)
                out.grad[v * k + classes[i]] += static_cast<T>(grads[i][v] / static_cast<double>(present));
        return out;
    }

    for (std::size_t v = 0; v < n; ++v) {
        p[v] = 1.0 - static_cast<double>(probs[v * k]);
        member[v] = labels.occupied(v);
    }
    const auto term = score_class();
    if (!term) return out;
    out.value = *term;
    for (std::size_t v = 0; v < n; ++v) out.grad[v * k] = static_cast<T>(-dp[v]);
    return out;
}

/// Linearly decaying weight max(0.2, 1 - step / total_steps).
inline double gamma(long long step, long long total_steps) {
    if (total_steps <= 0) throw DomainError("gamma: total_steps must be positive");
    if (step < 0) throw DomainError("gamma: step must be nonnegative");
    return std::max(0.2, 1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
}

struct LossComponents {
    double l_occ = 0.0;
    double l_sem = 0.0;
    double l_depth = 0.0;
    double l_scal_sem = 0.0;
    double l_scal_geo = 0.0;
};

struct LossReport {
    double l_occ = 0.0;
    double l_sem = 0.0;
    double l_depth = 0.0;
    double l_scal_sem = 0.0;
    double l_scal_geo = 0.0;
    double gamma = 1.0;
    double l_total = 0.0;
};

inline LossReport loss_total(const LossComponents& c, long long step, long long total_steps) {
    for (double v : {c.l_occ, c.l_sem, c.l_depth, c.l_scal_sem, c.l_scal_geo})
        if (!std::isfinite(v)) throw NumericError("loss_total: non-finite loss component");
    LossReport r{c.l_occ, c.l_sem, c.l_depth, c.l_scal_sem, c.l_scal_geo, gamma(step, total_steps), 0.0};
    r.l_total = r.l_occ + r.l_sem + r.l_depth + r.gamma * r.l_scal_sem + r.l_scal_geo;
    return r;
}

}  // namespace occdepth
