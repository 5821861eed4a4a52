#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "lessnet/layers.hpp"
#include "lessnet/ops.hpp"
#include "lessnet/parameters.hpp"
#include "lessnet/pyramid.hpp"

namespace lessnet {

/// LessNet hyperparameters. Block widths run [4C, 3C, 2C, C] from the 1/8
/// level up to full resolution.
struct ModelConfig {
    std::size_t rank = 2;
    std::size_t channels = 8;         // C
    std::size_t convs_per_block = 1;
    bool diffeomorphic = false;
    /// Per-axis voxel scale applied to the SoftSign output. Empty means
    /// (extent - 1) / 2, i.e. the output spans the full image.
    std::vector<double> displacement_scale;
    PyramidConfig pyramid;

    std::vector<double> resolved_scale(const Shape& spatial) const
    {
        if (!displacement_scale.empty()) {
            if (displacement_scale.size() != rank)
                throw std::invalid_argument("displacement_scale needs one entry per spatial axis");
            return displacement_scale;
        }
        std::vector<double> s;
        for (std::size_t e : spatial) s.push_back((static_cast<double>(e) - 1.0) / 2.0);
        return s;
    }

    bool operator==(const ModelConfig&) const = default;
};

/// Layer table in forward order. Pooling levels switched off in the pyramid
/// shrink the input width of the conv that would have consumed them.
inline std::vector<LayerSpec> lessnet_layers(const ModelConfig& cfg)
{
    if (cfg.rank != 2 && cfg.rank != 3) throw std::invalid_argument("rank must be 2 or 3");
    if (!cfg.pyramid.use_eighth) throw std::invalid_argument("the 1/8 pooling level feeds the first block and cannot be disabled");
    if (cfg.convs_per_block == 0) throw std::invalid_argument("convs_per_block must be positive");
    const std::size_t C = cfg.channels;
    const std::size_t feat = cfg.pyramid.level_channels();
    const std::size_t widths[4] = {4 * C, 3 * C, 2 * C, C};
    const std::size_t levels[4] = {8, 4, 2, 1};
    const std::size_t skips[4] = {
        feat,
        cfg.pyramid.use_quarter ? feat : 0,
        cfg.pyramid.use_half ? feat : 0,
        cfg.pyramid.include_original ? std::size_t{2} : 0,
    };

    std::vector<LayerSpec> table;
    for (std::size_t b = 0; b < 4; ++b) {
        const std::string block = "decoder/block" + std::to_string(b + 1) + "/";
        std::size_t in = skips[b];
        if (b > 0) {
            table.push_back({block + "up", LayerKind::upconv2, widths[b - 1], widths[b], levels[b], false});
            in += widths[b];
        }
        table.push_back({block + "conv", LayerKind::conv3, in, widths[b], levels[b], false});
        for (std::size_t extra = 2; extra <= cfg.convs_per_block; ++extra)
            table.push_back({block + "conv_" + std::to_string(extra), LayerKind::conv3, widths[b], widths[b], levels[b],
                             false});
    }
    table.push_back({"output/conv", LayerKind::conv3, C, cfg.rank, 1, true});
    return table;
}

template <typename T>
ParameterSet<T> init_parameters(const ModelConfig& cfg, std::uint64_t seed)
{
    if (cfg.channels == 0) throw std::invalid_argument("channels must be positive");
    return init_from_table<T>(lessnet_layers(cfg), cfg.rank, seed);
}

inline std::size_t count_parameters(const ModelConfig& cfg)
{
    return parameter_count(lessnet_layers(cfg), cfg.rank);
}

inline std::uint64_t count_mult_adds(const ModelConfig& cfg, const Shape& spatial)
{
    if (spatial.size() != cfg.rank) throw std::invalid_argument("spatial extents must match the model rank");
    for (std::size_t e : spatial)
        if (e % pyramid_divisor != 0) throw std::invalid_argument("extents must be divisible by 8");
    return mult_add_count(lessnet_layers(cfg), cfg.rank, spatial);
}

/// Maps a pooling pyramid to a rank-channel field in voxel units.
template <typename T>
Var<T> lessnet_forward(const ModelConfig& cfg, const BoundParameters<T>& params, const PoolingPyramid<T>& pyramid)
{
    if (!pyramid.level_eighth) throw std::invalid_argument("pyramid is missing the 1/8 level");
    auto conv_act = [&](Var<T> x, const std::string& name) {
        return leaky_relu(conv(x, params.weight(name), params.bias(name)), T(0.01));
    };
    auto up_act = [&](Var<T> x, const std::string& name) {
        return leaky_relu(fractional_conv(x, params.weight(name), params.bias(name)), T(0.01));
    };
    auto extra_convs = [&](Var<T> x, const std::string& block) {
        for (std::size_t extra = 2; extra <= cfg.convs_per_block; ++extra)
            x = conv_act(x, block + "conv_" + std::to_string(extra));
        return x;
    };
    auto block = [&](Var<T> x, std::size_t index, const std::optional<Var<T>>& skip) {
        const std::string name = "decoder/block" + std::to_string(index) + "/";
        x = up_act(x, name + "up");
        if (skip) x = concat(std::vector<Var<T>>{x, *skip});
        return extra_convs(conv_act(x, name + "conv"), name);
    };

    Var<T> x = extra_convs(conv_act(*pyramid.level_eighth, "decoder/block1/conv"), "decoder/block1/");
    x = block(x, 2, cfg.pyramid.use_quarter ? pyramid.level_quarter : std::nullopt);
    x = block(x, 3, cfg.pyramid.use_half ? pyramid.level_half : std::nullopt);
    x = block(x, 4, cfg.pyramid.include_original ? pyramid.original : std::nullopt);

    Var<T> out = softsign(conv(x, params.weight("output/conv"), params.bias("output/conv")));
    const auto scale = cfg.resolved_scale(out.value().spatial());
    return scale_channels(out, std::vector<T>(scale.begin(), scale.end()));
}

/// Decoder-only registration network: pooling pyramid in, field out.
struct LessNet {
    ModelConfig cfg;

    std::size_t rank() const { return cfg.rank; }
    bool diffeomorphic() const { return cfg.diffeomorphic; }
    std::size_t divisor() const { return pyramid_divisor; }

    template <typename T>
    ParameterSet<T> init(std::uint64_t seed) const
    {
        return init_parameters<T>(cfg, seed);
    }

    /// pair: [2, S...] with moving in channel 0 and fixed in channel 1.
    template <typename T>
    Var<T> forward(Tape<T>& tape, const BoundParameters<T>& params, const Tensor<T>& pair) const
    {
        return lessnet_forward(cfg, params, build_pyramid(tape, pair, cfg.pyramid));
    }
};

} // namespace lessnet
