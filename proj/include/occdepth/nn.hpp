#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "occdepth/rng.hpp"
#include "occdepth/tensor.hpp"

namespace occdepth::nn {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
};

/// Owns every trainable array; layers refer to parameters by index.
template <typename T>
class ParamStore {
public:
    std::size_t add(std::string name, Shape shape) {
        Tensor<T> value(shape);
        params_.push_back({std::move(name), std::move(value), Tensor<T>(shape)});
        return params_.size() - 1;
    }

    Param<T>& operator[](std::size_t i) { return params_[i]; }
    const Param<T>& operator[](std::size_t i) const { return params_[i]; }
    [[nodiscard]] std::size_t size() const noexcept { return params_.size(); }
    std::vector<Param<T>>& all() noexcept { return params_; }
    const std::vector<Param<T>>& all() const noexcept { return params_; }

    void zero_grad() {
        for (auto& p : params_) p.grad.fill(T{0});
    }

    [[nodiscard]] std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

private:
    std::vector<Param<T>> params_;
};

/// Convolution over a D-dimensional (D = 2 or 3) channels-last grid with
/// cubic kernel k, stride and zero padding. Weight is Cout x (k^D * Cin),
/// ordered (kernel offsets..., input channel).
template <typename T, int D>
class Conv {
public:
    struct Cache {
        RowMatrix<T> columns;
        std::array<int, D> in_dims{};
    };

    Conv() = default;
    Conv(ParamStore<T>& store, const std::string& name, int in_channels, int out_channels, int kernel, int stride,
         int padding)
        : cin_(in_channels), cout_(out_channels), kernel_(kernel), stride_(stride), padding_(padding) {
        int taps = 1;
        for (int d = 0; d < D; ++d) taps *= kernel;
        fan_in_ = taps * in_channels;
        weight_ = store.add(name + ".weight", Shape{static_cast<std::size_t>(out_channels), static_cast<std::size_t>(fan_in_)});
        bias_ = store.add(name + ".bias", Shape{static_cast<std::size_t>(out_channels)});
    }

    /// Fan-in scaled uniform init U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero bias.
    void initialize(ParamStore<T>& store, Rng& rng, double gain = 1.0) const {
        const double bound = gain * std::sqrt(6.0 / fan_in_);
        for (auto& w : store[weight_].value.storage()) w = static_cast<T>(rng.uniform(-bound, bound));
        store[bias_].value.fill(T{0});
    }

    [[nodiscard]] std::array<int, D> output_dims(const std::array<int, D>& in) const {
        std::array<int, D> out{};
        for (int d = 0; d < D; ++d) out[d] = (in[d] + 2 * padding_ - kernel_) / stride_ + 1;
        return out;
    }

    [[nodiscard]] int in_channels() const noexcept { return cin_; }
    [[nodiscard]] int out_channels() const noexcept { return cout_; }
    [[nodiscard]] std::size_t weight_index() const noexcept { return weight_; }
    [[nodiscard]] std::size_t bias_index() const noexcept { return bias_; }

    /// input is in_dims... x Cin (row-major); returns out_dims... x Cout.
    Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& input, const std::array<int, D>& in_dims,
                      Cache* cache) const {
        RowMatrix<T> cols = im2col(input, in_dims);
        const std::array<int, D> out_dims = output_dims(in_dims);
        Shape shape;
        for (int d = 0; d < D; ++d) shape.push_back(static_cast<std::size_t>(out_dims[d]));
        shape.push_back(static_cast<std::size_t>(cout_));
        Tensor<T> out(shape);
        MatrixMap<T> out_m(out.data(), cols.rows(), cout_);
        ConstMatrixMap<T> w(store[weight_].value.data(), cout_, fan_in_);
        Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(store[bias_].value.data(), cout_);
        out_m.noalias() = cols * w.transpose();
        out_m.rowwise() += b;
        if (cache) {
            cache->columns = std::move(cols);
            cache->in_dims = in_dims;
        }
        return out;
    }

    /// Accumulates parameter gradients; returns the input gradient unless
    /// `need_input_grad` is false (then an empty tensor).
    Tensor<T> backward(ParamStore<T>& store, const Cache& cache, const Tensor<T>& grad_out,
                       bool need_input_grad = true) const {
        const auto rows = static_cast<Eigen::Index>(grad_out.size() / cout_);
        ConstMatrixMap<T> g(grad_out.data(), rows, cout_);
        MatrixMap<T> gw(store[weight_].grad.data(), cout_, fan_in_);
        gw.noalias() += g.transpose() * cache.columns;
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(store[bias_].grad.data(), cout_);
        gb += g.colwise().sum();
        if (!need_input_grad) return {};
        ConstMatrixMap<T> w(store[weight_].value.data(), cout_, fan_in_);
        RowMatrix<T> grad_cols = g * w;
        return col2im(grad_cols, cache.in_dims);
    }

private:
    // Visits every (output position, kernel tap) pair with the matching input
    // position, or -1 when the tap falls in the zero padding.
    template <typename Visit>
    void for_each_tap(const std::array<int, D>& in_dims, Visit&& visit) const {
        const std::array<int, D> out_dims = output_dims(in_dims);
        std::size_t out_count = 1;
        for (int d = 0; d < D; ++d) out_count *= static_cast<std::size_t>(out_dims[d]);
        int taps = 1;
        for (int d = 0; d < D; ++d) taps *= kernel_;
        std::array<int, D> o{};
        for (std::size_t row = 0; row < out_count; ++row) {
            std::size_t rem = row;
            for (int d = D - 1; d >= 0; --d) {
                o[d] = static_cast<int>(rem % out_dims[d]);
                rem /= out_dims[d];
            }
            for (int t = 0; t < taps; ++t) {
                int trem = t;
                std::ptrdiff_t flat = 0;
                bool inside = true;
                std::array<int, D> kk{};
                for (int d = D - 1; d >= 0; --d) {
                    kk[d] = trem % kernel_;
                    trem /= kernel_;
                }
                for (int d = 0; d < D; ++d) {
                    const int pos = o[d] * stride_ - padding_ + kk[d];
                    inside = inside && pos >= 0 && pos < in_dims[d];
                    flat = flat * in_dims[d] + pos;
                }
                visit(row, t, inside ? flat : -1);
            }
        }
    }

    RowMatrix<T> im2col(const Tensor<T>& input, const std::array<int, D>& in_dims) const {
        std::size_t in_count = 1;
        for (int d = 0; d < D; ++d) in_count *= static_cast<std::size_t>(in_dims[d]);
        require(input.size() == in_count * cin_, "Conv: input size " + shape_string(input.shape()) +
                                                     " does not match dims and channels");
        const std::array<int, D> out_dims = output_dims(in_dims);
        std::size_t out_count = 1;
        for (int d = 0; d < D; ++d) out_count *= static_cast<std::size_t>(out_dims[d]);
        RowMatrix<T> cols = RowMatrix<T>::Zero(static_cast<Eigen::Index>(out_count), fan_in_);
        for_each_tap(in_dims, [&](std::size_t row, int t, std::ptrdiff_t flat) {
            if (flat < 0) return;
            const T* src = input.data() + flat * cin_;
            T* dst = cols.data() + row * fan_in_ + static_cast<std::size_t>(t) * cin_;
            std::copy(src, src + cin_, dst);
        });
        return cols;
    }

    Tensor<T> col2im(const RowMatrix<T>& cols, const std::array<int, D>& in_dims) const {
        Shape shape;
        for (int d = 0; d < D; ++d) shape.push_back(static_cast<std::size_t>(in_dims[d]));
        shape.push_back(static_cast<std::size_t>(cin_));
        Tensor<T> grad(shape);
        for_each_tap(in_dims, [&](std::size_t row, int t, std::ptrdiff_t flat) {
            if (flat < 0) return;
            const T* src = cols.data() + row * fan_in_ + static_cast<std::size_t>(t) * cin_;
            T* dst = grad.data() + flat * cin_;
            for (int c = 0; c < cin_; ++c) dst[c] += src[c];
        });
        return grad;
    }

    int cin_ = 0;
    int cout_ = 0;
    int kernel_ = 1;
    int stride_ = 1;
    int padding_ = 0;
    int fan_in_ = 0;
    std::size_t weight_ = 0;
    std::size_t bias_ = 0;
};

template <typename T>
using Conv2d = Conv<T, 2>;
template <typename T>
using Conv3d = Conv<T, 3>;

template <typename T>
void relu_inplace(Tensor<T>& x) {
    for (auto& v : x.storage()) v = v > T{0} ? v : T{0};
}

/// Masks the gradient by the (post-activation) ReLU output.
template <typename T>
void relu_backward_inplace(const Tensor<T>& activated, Tensor<T>& grad) {
    for (std::size_t i = 0; i < grad.size(); ++i)
        if (!(activated[i] > T{0})) grad[i] = T{0};
}

struct AdamWOptions {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 1e-4;
};

/// Adam with decoupled weight decay.
template <typename T>
class AdamW {
public:
    explicit AdamW(const ParamStore<T>& store, AdamWOptions options = {}) : options_(options) {
        for (const auto& p : store.all()) {
            m_.emplace_back(p.value.size(), 0.0);
            v_.emplace_back(p.value.size(), 0.0);
        }
    }

    void step(ParamStore<T>& store, double learning_rate) {
        ++t_;
        const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < store.size(); ++i) {
            auto& p = store[i];
            for (std::size_t j = 0; j < p.value.size(); ++j) {
                const double g = static_cast<double>(p.grad[j]);
                m_[i][j] = options_.beta1 * m_[i][j] + (1.0 - options_.beta1) * g;
                v_[i][j] = options_.beta2 * v_[i][j] + (1.0 - options_.beta2) * g * g;
                const double m_hat = m_[i][j] / bc1;
                const double v_hat = v_[i][j] / bc2;
                double w = static_cast<double>(p.value[j]);
                w -= learning_rate * (m_hat / (std::sqrt(v_hat) + options_.epsilon) + options_.weight_decay * w);
                p.value[j] = static_cast<T>(w);
            }
        }
    }

    [[nodiscard]] long long steps_taken() const noexcept { return t_; }

private:
    AdamWOptions options_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    long long t_ = 0;
};

}  // namespace occdepth::nn
