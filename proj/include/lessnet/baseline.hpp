#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "lessnet/layers.hpp"
#include "lessnet/ops.hpp"
#include "lessnet/parameters.hpp"

namespace lessnet {

/// Small U-Net style encoder-decoder in the spirit of VoxelMorph-1: four
/// stride-2 encoder convs, four transposed-conv decoder stages with skip
/// concatenation, and a linear output conv. Exists to run the freeze ablation.
struct BaselineConfig {
    std::size_t rank = 2;
    std::vector<std::size_t> encoder_widths{16, 32, 32, 32};
    std::vector<std::size_t> decoder_widths{32, 32, 32, 16};
    float slope = 0.2f;

    bool operator==(const BaselineConfig&) const = default;
};

inline std::vector<LayerSpec> baseline_layers(const BaselineConfig& cfg)
{
    if (cfg.rank != 2 && cfg.rank != 3) throw std::invalid_argument("rank must be 2 or 3");
    const auto& enc = cfg.encoder_widths;
    const auto& dec = cfg.decoder_widths;
    if (enc.size() != 4 || dec.size() != 4) throw std::invalid_argument("baseline expects four encoder and decoder widths");
    std::vector<LayerSpec> table;
    std::size_t in = 2, level = 1;
    for (std::size_t i = 0; i < 4; ++i) {
        level *= 2;
        table.push_back({"encoder/down" + std::to_string(i + 1), LayerKind::conv3_stride2, in, enc[i], level, false});
        in = enc[i];
    }
    // Skip sources from coarse to fine: enc3, enc2, enc1, input pair.
    const std::size_t skips[4] = {enc[2], enc[1], enc[0], 2};
    for (std::size_t i = 0; i < 4; ++i) {
        level /= 2;
        const std::string n = std::to_string(i + 1);
        table.push_back({"decoder/up" + n, LayerKind::upconv2, in, dec[i], level, false});
        table.push_back({"decoder/conv" + n, LayerKind::conv3, dec[i] + skips[i], dec[i], level, false});
        in = dec[i];
    }
    table.push_back({"output/conv", LayerKind::conv3, in, cfg.rank, 1, true});
    return table;
}

inline std::size_t count_parameters(const BaselineConfig& cfg) { return parameter_count(baseline_layers(cfg), cfg.rank); }

template <typename T>
Var<T> baseline_forward(const BaselineConfig& cfg, const BoundParameters<T>& params, Var<T> pair)
{
    const Grid g = Grid::of(pair.value());
    if (pair.value().channels() != 2) throw std::invalid_argument("baseline input must be a 2-channel pair");
    for (std::size_t a = 0; a < g.rank; ++a)
        if (g.extent(a) % 16 != 0)
            throw std::invalid_argument("baseline input extents must be divisible by 16, got " + shape_string(pair.shape()));

    const T slope = static_cast<T>(cfg.slope);
    std::vector<Var<T>> features{pair};
    Var<T> x = pair;
    for (std::size_t i = 1; i <= 4; ++i) {
        const std::string n = "encoder/down" + std::to_string(i);
        x = leaky_relu(conv(x, params.weight(n), params.bias(n), 2), slope);
        features.push_back(x);
    }
    for (std::size_t i = 1; i <= 4; ++i) {
        const std::string n = std::to_string(i);
        x = leaky_relu(fractional_conv(x, params.weight("decoder/up" + n), params.bias("decoder/up" + n)), slope);
        x = concat(std::vector<Var<T>>{x, features[4 - i]});
        x = leaky_relu(conv(x, params.weight("decoder/conv" + n), params.bias("decoder/conv" + n)), slope);
    }
    return conv(x, params.weight("output/conv"), params.bias("output/conv"));
}

struct Baseline {
    BaselineConfig cfg;

    std::size_t rank() const { return cfg.rank; }
    bool diffeomorphic() const { return false; }
    std::size_t divisor() const { return 16; }

    template <typename T>
    ParameterSet<T> init(std::uint64_t seed) const
    {
        return init_from_table<T>(baseline_layers(cfg), cfg.rank, seed);
    }

    template <typename T>
    Var<T> forward(Tape<T>& tape, const BoundParameters<T>& params, const Tensor<T>& pair) const
    {
        return baseline_forward(cfg, params, tape.constant(pair));
    }
};

} // namespace lessnet
