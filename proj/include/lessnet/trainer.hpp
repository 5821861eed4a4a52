#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "lessnet/losses.hpp"
#include "lessnet/metrics.hpp"
#include "lessnet/parameters.hpp"
#include "lessnet/synth.hpp"

namespace lessnet {

enum class FreezeMode { none, encoder, decoder_except_output };

inline const char* to_string(FreezeMode m)
{
    switch (m) {
    case FreezeMode::none: return "none";
    case FreezeMode::encoder: return "encoder";
    case FreezeMode::decoder_except_output: return "decoder_except_output";
    }
    return "?";
}

struct TrainConfig {
    double learning_rate = 1e-4;
    std::size_t batch_size = 1;
    std::size_t epochs = 20;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    FreezeMode freeze = FreezeMode::none;
    LossConfig loss;
    /// Fill the `seconds` column with wall-clock time. Off by default so logs
    /// are reproducible byte for byte.
    bool record_time = false;

    void validate() const
    {
        if (batch_size != 1) throw std::invalid_argument("only batch_size 1 is supported");
        if (!(learning_rate > 0)) throw std::invalid_argument("learning_rate must be positive");
        loss.validate();
    }
};

/// Sets trainable flags by layer-name prefix. Rejects modes whose layer group
/// does not exist in the model.
template <typename T>
void apply_freeze(ParameterSet<T>& params, FreezeMode mode)
{
    auto group = [](const std::string& name) { return name.substr(0, name.find('/')); };
    bool has_encoder = false, has_decoder = false;
    for (const auto& p : params) {
        has_encoder = has_encoder || group(p.name) == "encoder";
        has_decoder = has_decoder || group(p.name) == "decoder";
    }
    if (mode == FreezeMode::encoder && !has_encoder)
        throw std::invalid_argument("freeze mode 'encoder' but the model has no encoder layers");
    if (mode == FreezeMode::decoder_except_output && !has_decoder)
        throw std::invalid_argument("freeze mode 'decoder_except_output' but the model has no decoder layers");
    for (auto& p : params) {
        const std::string g = group(p.name);
        p.trainable = !((mode == FreezeMode::encoder && g == "encoder") ||
                        (mode == FreezeMode::decoder_except_output && g == "decoder"));
    }
}

/// First and second moment estimates per layer.
template <typename T>
struct AdamState {
    std::map<std::string, std::array<Tensor<T>, 4>> moments; // m_w, v_w, m_b, v_b
    std::uint64_t step = 0;
};

/// One bias-corrected Adam update. Frozen layers keep parameters and moments.
template <typename T>
void adam_step(ParameterSet<T>& params, const Gradients<T>& grads, AdamState<T>& state, const TrainConfig& cfg)
{
    for (const auto& p : params) {
        if (!p.trainable) continue;
        auto it = grads.find(p.name);
        if (it == grads.end()) throw std::invalid_argument("missing gradient for " + p.name);
        const auto& [gw, gb] = it->second;
        if (gw.shape() != p.weight.shape() || gb.shape() != p.bias.shape())
            throw std::invalid_argument("gradient shape mismatch for " + p.name);
        if (!gw.all_finite() || !gb.all_finite()) throw std::runtime_error("non-finite gradient in layer " + p.name);
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    auto update = [&](Tensor<T>& w, const Tensor<T>& g, Tensor<T>& m, Tensor<T>& v) {
        if (m.empty()) m = Tensor<T>(w.shape());
        if (v.empty()) v = Tensor<T>(w.shape());
        if (m.shape() != w.shape() || v.shape() != w.shape()) throw std::invalid_argument("Adam moment shape mismatch");
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i];
            const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            w[i] = static_cast<T>(w[i] - cfg.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + cfg.adam_eps));
        }
    };
    for (auto& p : params) {
        if (!p.trainable) continue;
        const auto& [gw, gb] = grads.at(p.name);
        auto& mom = state.moments[p.name];
        update(p.weight, gw, mom[0], mom[1]);
        update(p.bias, gb, mom[2], mom[3]);
    }
}

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0, similarity = 0, regularizer = 0;
    double validation_dice = 0, folding_fraction = 0;
    double wall_seconds = 0;
};

struct TrainLog {
    std::vector<EpochRecord> records;

    void write_csv(std::ostream& os) const
    {
        os << "epoch,loss,sim,reg,val_dice,fold_pct,seconds\n";
        char buf[256];
        for (const auto& r : records) {
            std::snprintf(buf, sizeof buf, "%zu,%.8g,%.8g,%.8g,%.6f,%.6f,%.3f\n", r.epoch, r.train_loss, r.similarity,
                          r.regularizer, r.validation_dice, 100.0 * r.folding_fraction, r.wall_seconds);
            os << buf;
        }
    }
};

template <typename T>
struct TrainResult {
    ParameterSet<T> best;
    ParameterSet<T> final;
    TrainLog log;
    std::size_t best_epoch = 0; // 0: initial parameters
};

struct StepLoss {
    double total = 0, similarity = 0, regularizer = 0;
};

/// Forward + backward on one pair; returns the loss terms and fills grads.
template <typename Model, typename T>
StepLoss loss_and_gradients(const Model& model, const ParameterSet<T>& params, const RegistrationSample<T>& sample,
                            const LossConfig& loss, Gradients<T>* grads)
{
    Tape<T> tape;
    const BoundParameters<T> bound(tape, params, grads != nullptr);
    const Var<T> field = model.forward(tape, bound, stack_pair(sample.moving, sample.fixed));
    const LossTerms<T> terms =
        total_loss(tape.constant(sample.moving), tape.constant(sample.fixed), field, loss, model.diffeomorphic());
    StepLoss out{terms.total.value()[0], terms.similarity.value()[0], terms.regularizer.value()[0]};
    if (grads) {
        tape.backward(terms.total);
        *grads = bound.gradients(tape);
    }
    return out;
}

/// Trains from `initial` (freeze flags are applied from cfg). Each epoch visits
/// every training pair once in a seed-derived order, then scores the validation
/// split; the parameters with the best validation Dice are kept.
template <typename Model, typename T>
TrainResult<T> train(const Model& model, ParameterSet<T> initial, const Dataset<T>& data, const TrainConfig& cfg)
{
    cfg.validate();
    if (data.train.empty()) throw std::invalid_argument("training split is empty");
    apply_freeze(initial, cfg.freeze);

    TrainResult<T> result{initial, initial, {}, 0};
    ParameterSet<T>& params = result.final;
    AdamState<T> adam;
    double best_dice = -std::numeric_limits<double>::infinity();
    std::vector<std::size_t> order(data.train.size());

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 shuffle_rng(detail::derive_seed(cfg.seed, 0x5EED0000ull + epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        EpochRecord rec;
        rec.epoch = epoch;
        Gradients<T> grads;
        for (std::size_t k = 0; k < order.size(); ++k) {
            const StepLoss l = loss_and_gradients(model, params, data.train[order[k]], cfg.loss, &grads);
            if (!std::isfinite(l.total))
                throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + ", pair " +
                                         std::to_string(order[k]));
            adam_step(params, grads, adam, cfg);
            rec.train_loss += l.total;
            rec.similarity += l.similarity;
            rec.regularizer += l.regularizer;
        }
        const double n = static_cast<double>(order.size());
        rec.train_loss /= n;
        rec.similarity /= n;
        rec.regularizer /= n;

        if (!data.val.empty()) {
            const EvalSummary s = evaluate(model, params, data.val).summary();
            rec.validation_dice = s.mean_dice;
            rec.folding_fraction = s.mean_fold;
        } else {
            rec.validation_dice = std::numeric_limits<double>::quiet_NaN();
        }
        if (data.val.empty() || rec.validation_dice > best_dice) {
            best_dice = rec.validation_dice;
            result.best = params;
            result.best_epoch = epoch;
        }
        if (cfg.record_time)
            rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        result.log.records.push_back(rec);
    }
    return result;
}

template <typename Model, typename T = float>
TrainResult<T> train(const Model& model, const Dataset<T>& data, const TrainConfig& cfg)
{
    return train(model, model.template init<T>(cfg.seed), data, cfg);
}

} // namespace lessnet
