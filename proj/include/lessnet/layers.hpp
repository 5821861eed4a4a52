#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "lessnet/parameters.hpp"

namespace lessnet {

enum class LayerKind {
    conv3,        // 3x3(x3) convolution
    conv3_stride2,
    upconv2,      // kernel-2 stride-2 transposed convolution
};

/// Static description of one learnable layer. `level` is the spatial
/// downsampling factor of the layer's output relative to the input image.
struct LayerSpec {
    std::string name;
    LayerKind kind = LayerKind::conv3;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t level = 1;
    bool is_output = false;
};

inline std::size_t kernel_volume(LayerKind kind, std::size_t rank)
{
    const std::size_t k = kind == LayerKind::upconv2 ? 2 : 3;
    return rank == 3 ? k * k * k : k * k;
}

inline Shape weight_shape(const LayerSpec& l, std::size_t rank)
{
    const std::size_t k = l.kind == LayerKind::upconv2 ? 2 : 3;
    Shape s = l.kind == LayerKind::upconv2 ? Shape{l.in_channels, l.out_channels} : Shape{l.out_channels, l.in_channels};
    for (std::size_t a = 0; a < rank; ++a) s.push_back(k);
    return s;
}

inline std::size_t parameter_count(const std::vector<LayerSpec>& table, std::size_t rank)
{
    std::size_t n = 0;
    for (const auto& l : table) n += l.in_channels * l.out_channels * kernel_volume(l.kind, rank) + l.out_channels;
    return n;
}

/// Multiply-accumulates of one forward pass over `spatial` input extents.
/// conv: output elements x input channels x kernel volume;
/// transposed conv: input elements x output channels x kernel volume.
inline std::uint64_t mult_add_count(const std::vector<LayerSpec>& table, std::size_t rank, const Shape& spatial)
{
    auto voxels_at = [&](std::size_t level) {
        std::uint64_t v = 1;
        for (std::size_t e : spatial) v *= e / level;
        return v;
    };
    std::uint64_t total = 0;
    for (const auto& l : table) {
        const std::uint64_t kv = kernel_volume(l.kind, rank);
        if (l.kind == LayerKind::upconv2)
            total += voxels_at(l.level * 2) * l.in_channels * l.out_channels * kv;
        else
            total += voxels_at(l.level) * l.out_channels * l.in_channels * kv;
    }
    return total;
}

/// Hidden layers: weights and biases uniform in +-sqrt(1/fan_in).
/// Output layers: weights N(0, 1e-5), zero bias, so the first predicted field is ~0.
template <typename T>
ParameterSet<T> init_from_table(const std::vector<LayerSpec>& table, std::size_t rank, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    ParameterSet<T> params;
    for (const auto& l : table) {
        Tensor<T> w(weight_shape(l, rank));
        Tensor<T> b(Shape{l.out_channels});
        if (l.is_output) {
            std::normal_distribution<double> dist(0.0, 1e-5);
            for (auto& v : w) v = static_cast<T>(dist(rng));
        } else {
            // A transposed-conv output sees one kernel tap per input channel.
            const double fan_in = static_cast<double>(
                l.kind == LayerKind::upconv2 ? l.in_channels : l.in_channels * kernel_volume(l.kind, rank));
            const double bound = std::sqrt(1.0 / fan_in);
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (auto& v : w) v = static_cast<T>(dist(rng));
            for (auto& v : b) v = static_cast<T>(dist(rng));
        }
        params.add(Parameter<T>{l.name, std::move(w), std::move(b), true});
    }
    return params;
}

} // namespace lessnet
