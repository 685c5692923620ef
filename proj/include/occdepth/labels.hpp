#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "occdepth/error.hpp"
#include "occdepth/tensor.hpp"

namespace occdepth {

inline constexpr std::uint8_t kEmptyLabel = 0;
inline constexpr std::uint8_t kIgnoreLabel = 255;

/// Semantic voxel labels in {0..N} plus 255 for unobserved voxels; class 0 is empty.
struct VoxelLabels {
    std::array<int, 3> dims{};
    int n_classes = 0;  ///< N, the number of non-empty semantic classes
    std::vector<std::uint8_t> semantic;

    VoxelLabels() = default;
    VoxelLabels(std::array<int, 3> d, int n, std::uint8_t fill = kEmptyLabel)
        : dims(d), n_classes(n), semantic(static_cast<std::size_t>(d[0]) * d[1] * d[2], fill) {
        require(n >= 1 && n < kIgnoreLabel, "VoxelLabels: class count must be in [1, 254]");
    }

    [[nodiscard]] std::size_t size() const noexcept { return semantic.size(); }
    [[nodiscard]] bool ignored(std::size_t i) const noexcept { return semantic[i] == kIgnoreLabel; }
    [[nodiscard]] bool occupied(std::size_t i) const noexcept {
        return semantic[i] != kEmptyLabel && semantic[i] != kIgnoreLabel;
    }

    void validate() const {
        require(semantic.size() == static_cast<std::size_t>(dims[0]) * dims[1] * dims[2],
                "VoxelLabels: payload does not match dims");
        for (std::uint8_t l : semantic)
            require(l <= n_classes || l == kIgnoreLabel, "VoxelLabels: label out of range");
    }

    friend bool operator==(const VoxelLabels&, const VoxelLabels&) = default;
};

}  // namespace occdepth
