#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lessnet/warp.hpp"

namespace lessnet {

/// One registration problem: moving and fixed images [1, S...] in [0, 1] and
/// their integer-valued label maps (0 = background).
template <typename T>
struct RegistrationSample {
    std::string id;
    Tensor<T> moving;
    Tensor<T> fixed;
    Tensor<T> moving_labels;
    Tensor<T> fixed_labels;
    /// Displacement that produced the moving image: moving = fixed o (Id + u).
    std::optional<Tensor<T>> ground_truth;
};

/// Network input: moving and fixed stacked as channels 0 and 1.
template <typename T>
Tensor<T> stack_pair(const Tensor<T>& moving, const Tensor<T>& fixed)
{
    if (moving.shape() != fixed.shape() || moving.channels() != 1)
        throw std::invalid_argument("pair images must both be [1, S...], got " + shape_string(moving.shape()) + " and " +
                                    shape_string(fixed.shape()));
    Shape s = moving.shape();
    s[0] = 2;
    std::vector<T> data(moving.begin(), moving.end());
    data.insert(data.end(), fixed.begin(), fixed.end());
    return Tensor<T>(std::move(s), std::move(data));
}

struct SynthConfig {
    Shape extents{64, 64};
    std::size_t num_structures = 8;
    double sigma = 6.0;     // displacement smoothing, voxels
    double amplitude = 4.0; // max displacement magnitude, voxels

    void validate() const
    {
        if (extents.size() != 2 && extents.size() != 3) throw std::invalid_argument("synthetic data must be 2D or 3D");
        for (std::size_t e : extents)
            if (e % 16 != 0) throw std::invalid_argument("synthetic extents must be divisible by 16, got " + shape_string(extents));
        if (num_structures == 0) throw std::invalid_argument("num_structures must be positive");
        if (sigma <= 0 || amplitude < 0) throw std::invalid_argument("sigma must be positive and amplitude non-negative");
    }
};

/// Separable Gaussian blur per channel, truncated at 3 sigma, replicate borders.
inline void gaussian_smooth(Tensor<double>& t, double sigma)
{
    const Grid g = Grid::of(t);
    const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    for (std::ptrdiff_t i = -radius; i <= radius; ++i)
        kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    const double norm = std::accumulate(kernel.begin(), kernel.end(), 0.0);
    for (double& k : kernel) k /= norm;

    const std::array<std::size_t, 3> extent{g.d, g.h, g.w};
    const std::array<std::size_t, 3> stride{g.h * g.w, g.w, 1};
    std::vector<double> line;
    for (std::size_t c = 0; c < t.channels(); ++c) {
        double* v = t.data() + c * g.voxels();
        for (std::size_t ax = 0; ax < 3; ++ax) {
            const std::size_t n = extent[ax], st = stride[ax];
            if (n == 1) continue;
            line.resize(n);
            for (std::size_t l = 0; l < g.voxels() / n; ++l) {
                const std::size_t start = (l / st) * st * n + l % st;
                for (std::size_t i = 0; i < n; ++i) {
                    double acc = 0;
                    for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
                        const auto j = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(i) + k, 0,
                                                                  static_cast<std::ptrdiff_t>(n) - 1);
                        acc += kernel[static_cast<std::size_t>(k + radius)] * v[start + static_cast<std::size_t>(j) * st];
                    }
                    line[i] = acc;
                }
                for (std::size_t i = 0; i < n; ++i) v[start + i * st] = line[i];
            }
        }
    }
}

namespace detail {

/// Unit-RMS Gaussian-smoothed white noise. Drawn on a grid padded by the kernel
/// radius and cropped, so border voxels have the same statistics as interior ones.
inline Tensor<double> smooth_noise(std::mt19937_64& rng, const Grid& g, std::size_t channels, double sigma)
{
    const auto pad = static_cast<std::size_t>(std::ceil(3.0 * sigma));
    auto padded = [&](std::size_t n) { return n == 1 ? n : n + 2 * pad; };
    const Grid big{g.rank, padded(g.d), padded(g.h), padded(g.w)};
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor<double> noise(with_channels(channels, big));
    for (auto& v : noise) v = normal(rng);
    gaussian_smooth(noise, sigma);

    const std::size_t od = g.d == 1 ? 0 : pad, oh = g.h == 1 ? 0 : pad, ow = g.w == 1 ? 0 : pad;
    Tensor<double> t(with_channels(channels, g));
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t z = 0; z < g.d; ++z)
            for (std::size_t y = 0; y < g.h; ++y)
                for (std::size_t x = 0; x < g.w; ++x)
                    t[((c * g.d + z) * g.h + y) * g.w + x] =
                        noise[((c * big.d + z + od) * big.h + y + oh) * big.w + x + ow];
    for (std::size_t c = 0; c < channels; ++c) {
        auto ch = t.channel(c);
        double s = 0;
        for (double v : ch) s += v * v;
        const double sd = std::sqrt(s / static_cast<double>(ch.size()));
        if (sd > 0)
            for (double& v : ch) v /= sd;
    }
    return t;
}

/// Mixes a base seed with an index into an independent stream seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index)
{
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

} // namespace detail

/// Phantom: an irregular ellipse of unlabeled tissue holding `num_structures`
/// labeled blobs of distinct intensity. Returns (image in [0, 1], labels).
inline std::pair<Tensor<double>, Tensor<double>> synth_phantom(std::mt19937_64& rng, const SynthConfig& cfg)
{
    const Grid g = Grid::of_spatial(cfg.extents);
    const std::size_t V = g.voxels();
    const double min_extent = static_cast<double>(*std::min_element(cfg.extents.begin(), cfg.extents.end()));
    const auto id = identity_grid<double>(cfg.extents).coords;

    auto rho = [&](const auto& coord) {
        double r = 0;
        for (std::size_t a = 0; a < g.rank; ++a) {
            const double n = static_cast<double>(g.extent(a));
            const double q = (coord(a) - 0.5 * (n - 1)) / (0.42 * n);
            r += q * q;
        }
        return r;
    };

    const Tensor<double> outline = detail::smooth_noise(rng, g, 1, min_extent / 8.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<std::vector<double>> centers;
    std::vector<double> radii;
    for (int tries = 0; centers.size() < cfg.num_structures; ++tries) {
        std::vector<double> p(g.rank);
        for (std::size_t a = 0; a < g.rank; ++a) p[a] = unit(rng) * static_cast<double>(g.extent(a) - 1);
        if (rho([&](std::size_t a) { return p[a]; }) > 0.55) continue;
        const double radius = min_extent * (0.06 + 0.05 * unit(rng));
        bool crowded = false;
        for (std::size_t k = 0; k < centers.size() && tries < 1000; ++k) {
            double d2 = 0;
            for (std::size_t a = 0; a < g.rank; ++a) d2 += (p[a] - centers[k][a]) * (p[a] - centers[k][a]);
            crowded = crowded || std::sqrt(d2) < 1.2 * (radius + radii[k]);
        }
        if (crowded) continue;
        centers.push_back(std::move(p));
        radii.push_back(radius);
    }
    const Tensor<double> wobble = detail::smooth_noise(rng, g, cfg.num_structures, min_extent / 16.0);

    Tensor<double> labels(with_channels(1, g));
    std::vector<bool> tissue(V);
    for (std::size_t i = 0; i < V; ++i) {
        tissue[i] = rho([&](std::size_t a) { return id[a * V + i]; }) + 0.12 * outline[i] < 1.0;
        if (!tissue[i]) continue;
        double best = 1.0;
        std::size_t arg = 0;
        for (std::size_t k = 0; k < centers.size(); ++k) {
            double d2 = 0;
            for (std::size_t a = 0; a < g.rank; ++a) {
                const double q = id[a * V + i] - centers[k][a];
                d2 += q * q;
            }
            const double score = std::sqrt(d2) / radii[k] + 0.2 * wobble[k * V + i];
            if (score < best) {
                best = score;
                arg = k + 1;
            }
        }
        labels[i] = static_cast<double>(arg);
    }

    std::vector<double> level(cfg.num_structures);
    for (std::size_t k = 0; k < level.size(); ++k)
        level[k] = 0.4 + 0.6 * static_cast<double>(k + 1) / static_cast<double>(level.size());
    std::shuffle(level.begin(), level.end(), rng);
    const Tensor<double> texture = detail::smooth_noise(rng, g, 1, min_extent / 16.0);
    Tensor<double> image(with_channels(1, g));
    for (std::size_t i = 0; i < V; ++i) {
        const auto l = static_cast<std::size_t>(labels[i]);
        const double base = l > 0 ? level[l - 1] : tissue[i] ? 0.2 : 0.0;
        image[i] = tissue[i] ? base + 0.04 * texture[i] : 0.0;
    }
    gaussian_smooth(image, 0.7);
    const auto [lo, hi] = std::minmax_element(image.begin(), image.end());
    const double low = *lo, span = *hi - *lo;
    for (auto& v : image) v = span > 0 ? (v - low) / span : 0.0;
    return {std::move(image), std::move(labels)};
}

/// Smooth random displacement with max vector magnitude `amplitude`.
inline Tensor<double> synth_displacement(std::mt19937_64& rng, const SynthConfig& cfg)
{
    const Grid g = Grid::of_spatial(cfg.extents);
    Tensor<double> u = detail::smooth_noise(rng, g, g.rank, cfg.sigma);
    const std::size_t V = g.voxels();
    double peak = 0;
    for (std::size_t i = 0; i < V; ++i) {
        double m = 0;
        for (std::size_t a = 0; a < g.rank; ++a) m += u[a * V + i] * u[a * V + i];
        peak = std::max(peak, std::sqrt(m));
    }
    for (auto& v : u) v = peak > 0 ? v * cfg.amplitude / peak : 0.0;
    return u;
}

/// Phantom as the fixed image, moving = fixed warped by a fold-free random
/// displacement (linear for intensities, nearest for labels).
template <typename T = float>
RegistrationSample<T> generate_sample(const SynthConfig& cfg, std::uint64_t seed)
{
    cfg.validate();
    std::mt19937_64 rng(seed);
    auto [image, labels] = synth_phantom(rng, cfg);
    constexpr int max_attempts = 10;
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        Tensor<double> u = synth_displacement(rng, cfg);
        if (jacobian_folding(to_deformation(u)).negative_fraction > 0.0) continue;
        RegistrationSample<T> s;
        s.fixed = image.cast<T>();
        s.fixed_labels = labels.cast<T>();
        s.moving = warp_linear(image, u).template cast<T>();
        s.moving_labels = warp_nearest(labels, u).template cast<T>();
        s.ground_truth = u.cast<T>();
        return s;
    }
    throw std::runtime_error("synthetic deformation folded in " + std::to_string(max_attempts) +
                             " attempts; lower the amplitude or raise sigma");
}

struct DatasetCounts {
    std::size_t train = 0, val = 0, test = 0;
};

template <typename T = float>
struct Dataset {
    std::vector<RegistrationSample<T>> train, val, test;
};

/// Samples are drawn from independent streams derived from `seed`; sample i of
/// the whole dataset (train, then val, then test) uses stream i.
template <typename T = float>
Dataset<T> generate_dataset(const SynthConfig& cfg, const DatasetCounts& counts, std::uint64_t seed)
{
    Dataset<T> ds;
    std::uint64_t index = 0;
    auto fill = [&](std::vector<RegistrationSample<T>>& split, std::size_t n, const char* prefix) {
        for (std::size_t i = 0; i < n; ++i, ++index) {
            auto s = generate_sample<T>(cfg, detail::derive_seed(seed, index));
            s.id = std::string(prefix) + std::to_string(i);
            split.push_back(std::move(s));
        }
    };
    fill(ds.train, counts.train, "train_");
    fill(ds.val, counts.val, "val_");
    fill(ds.test, counts.test, "test_");
    return ds;
}

enum class PairMode { all_ordered, atlas_to_subject };

/// Index pairs (moving, fixed). all_ordered gives n(n-1) pairs; atlas mode pairs
/// the atlas with every other image.
inline std::vector<std::pair<std::size_t, std::size_t>> build_pairs(std::size_t n, PairMode mode,
                                                                    std::optional<std::size_t> atlas = std::nullopt)
{
    if (n < 2) throw std::invalid_argument("pairing needs at least 2 images, got " + std::to_string(n));
    std::vector<std::pair<std::size_t, std::size_t>> out;
    if (mode == PairMode::all_ordered) {
        out.reserve(n * (n - 1));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (i != j) out.emplace_back(i, j);
        return out;
    }
    if (!atlas || *atlas >= n) throw std::invalid_argument("atlas_to_subject pairing needs a valid atlas index");
    for (std::size_t j = 0; j < n; ++j)
        if (j != *atlas) out.emplace_back(*atlas, j);
    return out;
}

/// An image with its labels, the unit that build_pairs indexes.
template <typename T>
struct LabeledImage {
    Tensor<T> image;
    Tensor<T> labels;
};

template <typename T>
std::vector<RegistrationSample<T>> assemble_pairs(const std::vector<LabeledImage<T>>& images,
                                                  const std::vector<std::pair<std::size_t, std::size_t>>& pairs)
{
    std::vector<RegistrationSample<T>> out;
    out.reserve(pairs.size());
    for (const auto& [m, f] : pairs) {
        RegistrationSample<T> s;
        s.id = std::to_string(m) + "_" + std::to_string(f);
        s.moving = images.at(m).image;
        s.moving_labels = images.at(m).labels;
        s.fixed = images.at(f).image;
        s.fixed_labels = images.at(f).labels;
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace lessnet
