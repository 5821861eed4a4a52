#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lessnet/baseline.hpp"
#include "lessnet/decoder.hpp"
#include "lessnet/metrics.hpp"
#include "lessnet/trainer.hpp"

namespace lessnet {

struct ExperimentRun {
    std::string config;
    std::uint64_t seed = 0;
    EvalSummary test;
};

struct ConfigSummary {
    std::string config;
    std::size_t runs = 0;
    double mean_dice = 0, std_dice = 0;
    double mean_fold = 0, std_fold = 0;
    double initial_dice = 0;
};

/// Runs of several configurations over several seeds; summaries keep the
/// order in which configurations first appear.
struct ExperimentTable {
    std::vector<ExperimentRun> runs;

    std::vector<ConfigSummary> summaries() const
    {
        std::vector<ConfigSummary> out;
        for (const auto& r : runs) {
            bool seen = false;
            for (const auto& s : out) seen = seen || s.config == r.config;
            if (!seen) out.push_back(summarize(r.config));
        }
        return out;
    }

    ConfigSummary summarize(const std::string& config) const
    {
        ConfigSummary s{config};
        std::vector<const ExperimentRun*> sel;
        for (const auto& r : runs)
            if (r.config == config) sel.push_back(&r);
        if (sel.empty()) throw std::invalid_argument("no runs for configuration " + config);
        const double n = static_cast<double>(sel.size());
        s.runs = sel.size();
        for (const auto* r : sel) {
            s.mean_dice += r->test.mean_dice / n;
            s.mean_fold += r->test.mean_fold / n;
            s.initial_dice += r->test.mean_initial_dice / n;
        }
        for (const auto* r : sel) {
            s.std_dice += (r->test.mean_dice - s.mean_dice) * (r->test.mean_dice - s.mean_dice) / n;
            s.std_fold += (r->test.mean_fold - s.mean_fold) * (r->test.mean_fold - s.mean_fold) / n;
        }
        s.std_dice = std::sqrt(s.std_dice);
        s.std_fold = std::sqrt(s.std_fold);
        return s;
    }

    void write_runs_csv(std::ostream& os) const
    {
        os << "config,seed,mean_dice,fold_pct,initial_dice\n";
        char buf[256];
        for (const auto& r : runs) {
            std::snprintf(buf, sizeof buf, "%s,%llu,%.6f,%.6f,%.6f\n", r.config.c_str(),
                          static_cast<unsigned long long>(r.seed), r.test.mean_dice, 100.0 * r.test.mean_fold,
                          r.test.mean_initial_dice);
            os << buf;
        }
    }

    void write_summary_csv(std::ostream& os) const
    {
        os << "config,runs,mean_dice,std_dice,fold_pct,std_fold_pct,initial_dice\n";
        char buf[256];
        for (const auto& s : summaries()) {
            std::snprintf(buf, sizeof buf, "%s,%zu,%.6f,%.6f,%.6f,%.6f,%.6f\n", s.config.c_str(), s.runs, s.mean_dice,
                          s.std_dice, 100.0 * s.mean_fold, 100.0 * s.std_fold, s.initial_dice);
            os << buf;
        }
    }
};

inline void require_seeds(const std::vector<std::uint64_t>& seeds)
{
    if (seeds.size() < 3) throw std::invalid_argument("experiments need at least 3 seeds, got " + std::to_string(seeds.size()));
}

/// Trains model from model.init(seed) with train seed `seed` and scores the
/// best-validation parameters on the test split.
template <typename Model, typename T>
EvalSummary train_and_test(const Model& model, const Dataset<T>& data, TrainConfig cfg, std::uint64_t seed)
{
    if (data.test.empty()) throw std::invalid_argument("test split is empty");
    cfg.seed = seed;
    const TrainResult<T> r = train(model, model.template init<T>(seed), data, cfg);
    return evaluate(model, r.best, data.test).summary();
}

/// Encoder/decoder redundancy study on the baseline: fully trainable,
/// decoder-only (encoder frozen) and encoder-only (decoder frozen except the
/// output layer), same budget per configuration.
template <typename T>
ExperimentTable redundancy_experiment(const Dataset<T>& data, const BaselineConfig& model_cfg, const TrainConfig& cfg,
                                      const std::vector<std::uint64_t>& seeds)
{
    require_seeds(seeds);
    const Baseline model{model_cfg};
    const std::pair<const char*, FreezeMode> configs[] = {
        {"full", FreezeMode::none},
        {"decoder_only", FreezeMode::encoder},
        {"encoder_only", FreezeMode::decoder_except_output},
    };
    ExperimentTable table;
    for (std::uint64_t seed : seeds)
        for (const auto& [name, mode] : configs) {
            TrainConfig c = cfg;
            c.freeze = mode;
            table.runs.push_back({name, seed, train_and_test(model, data, c, seed)});
        }
    return table;
}

struct PoolingVariant {
    std::string name;
    PyramidConfig pyramid;
};

/// Cumulative pyramid levels: 1/8, +1/4, +1/2, +original.
inline std::vector<PoolingVariant> pooling_level_variants()
{
    std::vector<PoolingVariant> v;
    PyramidConfig p;
    p.use_quarter = p.use_half = p.include_original = false;
    v.push_back({"eighth", p});
    p.use_quarter = true;
    v.push_back({"eighth+quarter", p});
    p.use_half = true;
    v.push_back({"eighth+quarter+half", p});
    p.include_original = true;
    v.push_back({"eighth+quarter+half+original", p});
    return v;
}

/// Single pooling modes and all three together, all levels enabled.
inline std::vector<PoolingVariant> pooling_mode_variants()
{
    std::vector<PoolingVariant> v;
    const std::pair<const char*, PoolMode> single[] = {{"min", PoolMode::min}, {"avg", PoolMode::avg}, {"max", PoolMode::max}};
    for (const auto& [name, mode] : single) {
        PyramidConfig p;
        p.use_min = mode == PoolMode::min;
        p.use_avg = mode == PoolMode::avg;
        p.use_max = mode == PoolMode::max;
        v.push_back({name, p});
    }
    v.push_back({"min+avg+max", PyramidConfig{}});
    return v;
}

template <typename T>
ExperimentTable pooling_experiment(const Dataset<T>& data, const ModelConfig& base, const TrainConfig& cfg,
                                   const std::vector<PoolingVariant>& variants, const std::vector<std::uint64_t>& seeds)
{
    require_seeds(seeds);
    ExperimentTable table;
    for (std::uint64_t seed : seeds)
        for (const auto& v : variants) {
            LessNet model{base};
            model.cfg.pyramid = v.pyramid;
            table.runs.push_back({v.name, seed, train_and_test(model, data, cfg, seed)});
        }
    return table;
}

} // namespace lessnet
