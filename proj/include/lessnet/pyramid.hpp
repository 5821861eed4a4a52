#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lessnet/ops.hpp"

namespace lessnet {

/// Which handcrafted features reach the decoder. Every combination is a valid
/// ablation as long as at least one pooling mode and the 1/8 level are on.
struct PyramidConfig {
    bool use_min = true;
    bool use_avg = true;
    bool use_max = true;
    bool use_half = true;    // window 2
    bool use_quarter = true; // window 4
    bool use_eighth = true;  // window 8
    bool include_original = true;

    std::vector<PoolMode> modes() const
    {
        std::vector<PoolMode> m;
        if (use_min) m.push_back(PoolMode::min);
        if (use_avg) m.push_back(PoolMode::avg);
        if (use_max) m.push_back(PoolMode::max);
        return m;
    }

    /// Channels per pooling level: two images times the enabled modes.
    std::size_t level_channels() const { return 2 * modes().size(); }

    bool operator==(const PyramidConfig&) const = default;
};

/// Pooled features of a (moving, fixed) pair. Each level stacks
/// [mode0_M, mode0_F, mode1_M, mode1_F, ...] in min, avg, max order, so the full
/// six-channel map reads [min_M, min_F, avg_M, avg_F, max_M, max_F].
template <typename T>
struct PoolingPyramid {
    std::optional<Var<T>> level_half;
    std::optional<Var<T>> level_quarter;
    std::optional<Var<T>> level_eighth;
    std::optional<Var<T>> original;
};

inline constexpr std::size_t pyramid_divisor = 8;

/// Builds the pyramid on a 2-channel (moving, fixed) pair. Large windows pool
/// the original pair directly rather than composing window-2 pools.
template <typename T>
PoolingPyramid<T> build_pyramid(Var<T> pair, const PyramidConfig& cfg)
{
    const Tensor<T>& v = pair.value();
    const Grid grid = Grid::of(v);
    if (v.channels() != 2)
        throw std::invalid_argument("pyramid input must stack moving and fixed as 2 channels, got " +
                                    shape_string(v.shape()));
    for (std::size_t a = 0; a < grid.rank; ++a)
        if (grid.extent(a) % pyramid_divisor != 0)
            throw std::invalid_argument("pyramid input extents must be divisible by 8, got " + shape_string(v.shape()));
    const auto modes = cfg.modes();
    if (modes.empty()) throw std::invalid_argument("pyramid needs at least one pooling mode");

    auto level = [&](std::size_t k) {
        std::vector<Var<T>> parts;
        parts.reserve(modes.size());
        for (PoolMode m : modes) parts.push_back(pool(pair, m, k));
        return parts.size() == 1 ? parts.front() : concat(parts);
    };

    PoolingPyramid<T> out;
    if (cfg.use_half) out.level_half = level(2);
    if (cfg.use_quarter) out.level_quarter = level(4);
    if (cfg.use_eighth) out.level_eighth = level(8);
    if (cfg.include_original) out.original = pair;
    return out;
}

/// Convenience overload for callers holding plain tensors.
template <typename T>
PoolingPyramid<T> build_pyramid(Tape<T>& tape, const Tensor<T>& pair, const PyramidConfig& cfg)
{
    return build_pyramid(tape.constant(pair), cfg);
}

} // namespace lessnet
