#pragma once

#include <cmath>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "lessnet/baseline.hpp"
#include "lessnet/decoder.hpp"
#include "lessnet/io.hpp"
#include "lessnet/parameters.hpp"

namespace lessnet {

using AnyModel = std::variant<LessNet, Baseline>;

struct Checkpoint {
    AnyModel model;
    ParameterSet<float> params;
};

// Entries: "meta/model" (architecture as a float vector), "meta/trainable"
// (one flag per layer), then "<layer>/weight" and "<layer>/bias" in layer order.

namespace detail {

inline std::vector<float> encode_model(const AnyModel& model)
{
    if (const auto* m = std::get_if<LessNet>(&model)) {
        const ModelConfig& c = m->cfg;
        const PyramidConfig& p = c.pyramid;
        std::vector<float> v{0.0f,
                             static_cast<float>(c.rank),
                             static_cast<float>(c.channels),
                             static_cast<float>(c.convs_per_block),
                             c.diffeomorphic ? 1.0f : 0.0f,
                             p.use_min ? 1.0f : 0.0f,
                             p.use_avg ? 1.0f : 0.0f,
                             p.use_max ? 1.0f : 0.0f,
                             p.use_half ? 1.0f : 0.0f,
                             p.use_quarter ? 1.0f : 0.0f,
                             p.use_eighth ? 1.0f : 0.0f,
                             p.include_original ? 1.0f : 0.0f,
                             static_cast<float>(c.displacement_scale.size())};
        for (double s : c.displacement_scale) v.push_back(static_cast<float>(s));
        return v;
    }
    const BaselineConfig& c = std::get<Baseline>(model).cfg;
    std::vector<float> v{1.0f, static_cast<float>(c.rank)};
    for (std::size_t w : c.encoder_widths) v.push_back(static_cast<float>(w));
    for (std::size_t w : c.decoder_widths) v.push_back(static_cast<float>(w));
    v.push_back(c.slope);
    return v;
}

inline AnyModel decode_model(const Tensor<float>& t)
{
    const auto v = t.values();
    auto count = [&](std::size_t i) {
        if (i >= v.size() || v[i] < 0 || v[i] != std::floor(v[i])) throw std::runtime_error("malformed meta/model entry");
        return static_cast<std::size_t>(v[i]);
    };
    auto flag = [&](std::size_t i) { return count(i) != 0; };
    if (count(0) == 0) {
        ModelConfig c;
        c.rank = count(1);
        c.channels = count(2);
        c.convs_per_block = count(3);
        c.diffeomorphic = flag(4);
        c.pyramid = PyramidConfig{flag(5), flag(6), flag(7), flag(8), flag(9), flag(10), flag(11)};
        const std::size_t n = count(12);
        if (v.size() != 13 + n) throw std::runtime_error("malformed meta/model entry");
        for (std::size_t i = 0; i < n; ++i) c.displacement_scale.push_back(v[13 + i]);
        return LessNet{c};
    }
    if (count(0) == 1 && v.size() == 11) {
        BaselineConfig c;
        c.rank = count(1);
        for (std::size_t i = 0; i < 4; ++i) c.encoder_widths[i] = count(2 + i);
        for (std::size_t i = 0; i < 4; ++i) c.decoder_widths[i] = count(6 + i);
        c.slope = v[10];
        return Baseline{c};
    }
    throw std::runtime_error("unknown model kind in checkpoint");
}

} // namespace detail

inline std::size_t model_rank(const AnyModel& m)
{
    return std::visit([](const auto& x) { return x.rank(); }, m);
}

inline ParameterSet<float> init_model(const AnyModel& m, std::uint64_t seed)
{
    return std::visit([&](const auto& x) { return x.template init<float>(seed); }, m);
}

inline io::Entries checkpoint_entries(const AnyModel& model, const ParameterSet<float>& params)
{
    io::Entries e;
    const auto meta = detail::encode_model(model);
    e.emplace_back("meta/model", Tensor<float>(Shape{meta.size()}, meta));
    std::vector<float> flags;
    for (const auto& p : params) flags.push_back(p.trainable ? 1.0f : 0.0f);
    if (flags.empty()) throw std::invalid_argument("cannot checkpoint an empty parameter set");
    e.emplace_back("meta/trainable", Tensor<float>(Shape{flags.size()}, flags));
    for (const auto& p : params) {
        e.emplace_back(p.name + "/weight", p.weight);
        e.emplace_back(p.name + "/bias", p.bias);
    }
    return e;
}

/// Rebuilds a checkpoint and checks every layer against the architecture's
/// own layer table (names, order and shapes).
inline Checkpoint checkpoint_from_entries(const io::Entries& entries)
{
    if (entries.size() < 2 || entries[0].first != "meta/model" || entries[1].first != "meta/trainable")
        throw std::runtime_error("checkpoint must start with meta/model and meta/trainable");
    Checkpoint ck{detail::decode_model(entries[0].second), {}};
    const ParameterSet<float> reference = init_model(ck.model, 0);
    const auto& flags = entries[1].second;
    if (flags.size() != reference.size() || entries.size() != 2 + 2 * reference.size())
        throw std::runtime_error("checkpoint layer count does not match its architecture");
    std::size_t i = 2, k = 0;
    for (const auto& ref : reference) {
        const auto& [wn, w] = entries[i++];
        const auto& [bn, b] = entries[i++];
        if (wn != ref.name + "/weight" || bn != ref.name + "/bias")
            throw std::runtime_error("checkpoint entry " + wn + " does not match expected layer " + ref.name);
        if (w.shape() != ref.weight.shape() || b.shape() != ref.bias.shape())
            throw std::runtime_error("checkpoint layer " + ref.name + " has shape " + shape_string(w.shape()) +
                                     ", expected " + shape_string(ref.weight.shape()));
        ck.params.add(Parameter<float>{ref.name, w, b, flags[k++] != 0.0f});
    }
    return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const AnyModel& model, const ParameterSet<float>& params)
{
    io::write_container(path, checkpoint_entries(model, params));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    try {
        return checkpoint_from_entries(io::read_container(path));
    } catch (const io::FormatError&) {
        throw;
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

} // namespace lessnet
