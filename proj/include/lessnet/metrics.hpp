#pragma once

#include <cmath>
#include <cstdio>
#include <cstddef>
#include <map>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "lessnet/losses.hpp"
#include "lessnet/parameters.hpp"
#include "lessnet/synth.hpp"
#include "lessnet/warp.hpp"

namespace lessnet {

struct DiceResult {
    std::map<int, double> per_label; // labels absent from both maps are left out
    double mean = 0.0;
};

/// Dice per label, 2|A∩B| / (|A|+|B|). A label present in only one map scores 0.
template <typename T>
DiceResult dice(const Tensor<T>& a, const Tensor<T>& b, const std::set<int>& labels)
{
    if (a.shape() != b.shape())
        throw std::invalid_argument("dice shape mismatch: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    std::map<int, std::size_t> ca, cb, both;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const int la = static_cast<int>(std::lround(a[i]));
        const int lb = static_cast<int>(std::lround(b[i]));
        ++ca[la];
        ++cb[lb];
        if (la == lb) ++both[la];
    }
    DiceResult r;
    double total = 0;
    for (int l : labels) {
        const std::size_t na = ca.count(l) ? ca[l] : 0, nb = cb.count(l) ? cb[l] : 0;
        if (na + nb == 0) continue;
        const std::size_t nab = both.count(l) ? both[l] : 0;
        const double d = 2.0 * static_cast<double>(nab) / static_cast<double>(na + nb);
        r.per_label[l] = d;
        total += d;
    }
    if (r.per_label.empty()) throw std::invalid_argument("dice: none of the requested labels occur in either map");
    r.mean = total / static_cast<double>(r.per_label.size());
    return r;
}

/// Non-background labels occurring in either map.
template <typename T>
std::set<int> foreground_labels(const Tensor<T>& a, const Tensor<T>& b)
{
    std::set<int> out;
    for (const auto* t : {&a, &b})
        for (T v : *t) {
            const int l = static_cast<int>(std::lround(v));
            if (l != 0) out.insert(l);
        }
    return out;
}

struct EvalRow {
    std::string pair_id;
    DiceResult dice;
    double initial_dice = 0.0;
    double negative_fraction = 0.0;
    double mse_before = 0.0;
    double mse_after = 0.0;
};

struct EvalSummary {
    double mean_dice = 0, std_dice = 0;
    double mean_fold = 0, std_fold = 0;
    double mean_initial_dice = 0;
    double mean_mse_before = 0, mean_mse_after = 0;
};

struct EvalReport {
    std::vector<EvalRow> rows;

    EvalSummary summary() const
    {
        EvalSummary s;
        if (rows.empty()) return s;
        const double n = static_cast<double>(rows.size());
        for (const auto& r : rows) {
            s.mean_dice += r.dice.mean / n;
            s.mean_fold += r.negative_fraction / n;
            s.mean_initial_dice += r.initial_dice / n;
            s.mean_mse_before += r.mse_before / n;
            s.mean_mse_after += r.mse_after / n;
        }
        for (const auto& r : rows) {
            s.std_dice += (r.dice.mean - s.mean_dice) * (r.dice.mean - s.mean_dice) / n;
            s.std_fold += (r.negative_fraction - s.mean_fold) * (r.negative_fraction - s.mean_fold) / n;
        }
        s.std_dice = std::sqrt(s.std_dice);
        s.std_fold = std::sqrt(s.std_fold);
        return s;
    }

    /// pair_id,mean_dice,fold_pct,label_<k>_dice... then a `# summary` line.
    void write_csv(std::ostream& os) const
    {
        std::set<int> labels;
        for (const auto& r : rows)
            for (const auto& [l, d] : r.dice.per_label) labels.insert(l);
        os << "pair_id,mean_dice,fold_pct";
        for (int l : labels) os << ",label_" << l << "_dice";
        os << '\n';
        for (const auto& r : rows) {
            os << r.pair_id << ',' << fmt(r.dice.mean) << ',' << fmt(100.0 * r.negative_fraction);
            for (int l : labels) {
                auto it = r.dice.per_label.find(l);
                os << ',';
                if (it != r.dice.per_label.end()) os << fmt(it->second);
            }
            os << '\n';
        }
        const EvalSummary s = summary();
        os << "# summary pairs=" << rows.size() << " mean_dice=" << fmt(s.mean_dice) << " std_dice=" << fmt(s.std_dice)
           << " mean_fold_pct=" << fmt(100.0 * s.mean_fold) << " std_fold_pct=" << fmt(100.0 * s.std_fold)
           << " initial_dice=" << fmt(s.mean_initial_dice) << '\n';
    }

    static std::string fmt(double v)
    {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", v);
        return buf;
    }
};

/// Predicts the deformation for one sample and scores it against the fixed labels.
template <typename Model, typename T>
EvalRow evaluate_pair(const Model& model, const ParameterSet<T>& params, const RegistrationSample<T>& sample,
                      std::string pair_id = {})
{
    Tape<T> tape;
    const BoundParameters<T> bound(tape, params, false);
    const Var<T> field = model.forward(tape, bound, stack_pair(sample.moving, sample.fixed));
    const Var<T> disp = model.diffeomorphic() ? exponentiate(field, 7) : field;
    const Var<T> moving = tape.constant(sample.moving);
    const Var<T> fixed = tape.constant(sample.fixed);
    const Var<T> warped = warp(moving, disp);

    EvalRow row;
    row.pair_id = std::move(pair_id);
    const auto labels = foreground_labels(sample.moving_labels, sample.fixed_labels);
    row.dice = dice(warp_nearest(sample.moving_labels, disp.value()), sample.fixed_labels, labels);
    row.initial_dice = dice(sample.moving_labels, sample.fixed_labels, labels).mean;
    row.negative_fraction = jacobian_folding(to_deformation(disp.value())).negative_fraction;
    row.mse_before = static_cast<double>(mse(moving, fixed).value()[0]);
    row.mse_after = static_cast<double>(mse(warped, fixed).value()[0]);
    return row;
}

template <typename Model, typename T>
EvalReport evaluate(const Model& model, const ParameterSet<T>& params, const std::vector<RegistrationSample<T>>& samples)
{
    EvalReport report;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const std::string id = samples[i].id.empty() ? std::to_string(i) : samples[i].id;
        report.rows.push_back(evaluate_pair(model, params, samples[i], id));
    }
    return report;
}

} // namespace lessnet
