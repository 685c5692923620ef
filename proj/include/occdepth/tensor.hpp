#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "occdepth/error.hpp"

namespace occdepth {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
    std::ostringstream out;
    out << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
    out << ')';
    return out.str();
}

/// Dense row-major array with a runtime shape. The last axis is contiguous, so
/// an H x W x C map stores channels innermost.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{})
        : shape_(std::move(shape)), values_(shape_numel(shape_), fill) {}
    Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), values_(std::move(values)) {
        require(values_.size() == shape_numel(shape_), "tensor payload does not match shape " + shape_string(shape_));
    }

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
    [[nodiscard]] std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
    [[nodiscard]] bool empty() const noexcept { return values_.empty(); }

    [[nodiscard]] T* data() noexcept { return values_.data(); }
    [[nodiscard]] const T* data() const noexcept { return values_.data(); }
    [[nodiscard]] std::span<T> values() noexcept { return values_; }
    [[nodiscard]] std::span<const T> values() const noexcept { return values_; }
    [[nodiscard]] std::vector<T>& storage() noexcept { return values_; }
    [[nodiscard]] const std::vector<T>& storage() const noexcept { return values_; }

    T& operator[](std::size_t i) noexcept { return values_[i]; }
    const T& operator[](std::size_t i) const noexcept { return values_[i]; }

    template <typename... Index>
    T& at(Index... index) { return values_[offset(index...)]; }
    template <typename... Index>
    const T& at(Index... index) const { return values_[offset(index...)]; }

    void fill(T value) { std::fill(values_.begin(), values_.end(), value); }

    template <typename U>
    [[nodiscard]] Tensor<U> cast() const {
        Tensor<U> out(shape_);
        std::transform(values_.begin(), values_.end(), out.data(), [](T v) { return static_cast<U>(v); });
        return out;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.values_ == b.values_;
    }

private:
    template <typename... Index>
    std::size_t offset(Index... index) const {
        const std::size_t idx[] = {static_cast<std::size_t>(index)...};
        std::size_t flat = 0;
        for (std::size_t a = 0; a < sizeof...(Index); ++a) flat = flat * shape_[a] + idx[a];
        return flat;
    }

    Shape shape_;
    std::vector<T> values_;
};

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
    require(dst.shape() == src.shape(), "add_into: shape mismatch " + shape_string(dst.shape()) + " vs " +
                                            shape_string(src.shape()));
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
    return std::all_of(t.values().begin(), t.values().end(), [](T v) { return std::isfinite(static_cast<double>(v)); });
}

}  // namespace occdepth
