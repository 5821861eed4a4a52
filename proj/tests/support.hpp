#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "lessnet/autodiff.hpp"
#include "lessnet/ops.hpp"
#include "lessnet/tensor.hpp"

namespace lessnet::testing {

inline Tensor<double> random_tensor(std::mt19937_64& rng, const Shape& shape, double lo = -1.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor<double> t(shape);
    for (auto& v : t) v = dist(rng);
    return t;
}

template <typename T>
Tensor<T> filled(const Shape& shape, std::function<T(std::size_t)> f)
{
    Tensor<T> t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = f(i);
    return t;
}

using GraphFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

struct GradCheck {
    double rel_error = 0.0; // |g_a - g_n| / max(|g_a|, |g_n|), 2-norm over the checked coordinates
    double analytic_norm = 0.0;
    std::size_t checked = 0;
    std::size_t kinks = 0; // coordinates skipped because [x - h, x + h] straddles a kink

    double kink_fraction() const { return checked + kinks == 0 ? 0.0 : double(kinks) / double(checked + kinks); }
};

/// Compares reverse-mode gradients of <f(inputs), R> against central differences
/// with step h, where R is a fixed random weighting of the output.
///
/// Piecewise-linear ops (LeakyReLU, pooling argmax, interpolation cells) make f
/// non-differentiable on measure-zero sets. A coordinate whose forward and
/// backward one-sided differences disagree by more than `kink_tol` times the
/// RMS gradient, and whose gap does not halve with the step or whose central
/// difference moves with the step, has a kink inside the stencil and is skipped.
inline GradCheck grad_check(const GraphFn& f, std::vector<Tensor<double>> inputs, std::uint64_t seed, double h = 1e-4,
                            double kink_tol = 1e-3)
{
    std::mt19937_64 rng(seed ^ 0xA5A5A5A5ull);
    Tensor<double> weights;
    auto objective = [&](const std::vector<Tensor<double>>& xs) {
        Tape<double> tape;
        std::vector<Var<double>> vars;
        for (const auto& x : xs) vars.push_back(tape.constant(x));
        const Tensor<double>& out = f(tape, vars).value();
        double s = 0;
        for (std::size_t i = 0; i < out.size(); ++i) s += weights[i] * out[i];
        return s;
    };

    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& x : inputs) vars.push_back(tape.leaf(x));
    const Var<double> out = f(tape, vars);
    weights = random_tensor(rng, out.shape());
    const Var<double> loss = sum(mul(out, tape.constant(weights)));
    tape.backward(loss);
    const double center = objective(inputs);

    std::vector<Tensor<double>> analytic;
    double sq = 0;
    std::size_t n = 0;
    for (const auto& v : vars) {
        analytic.push_back(tape.grad(v));
        for (double g : analytic.back()) sq += g * g;
        n += analytic.back().size();
    }
    const double rms = std::sqrt(sq / static_cast<double>(std::max<std::size_t>(n, 1)));

    GradCheck r;
    double diff = 0, na = 0, nn = 0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const double keep = inputs[k][i];
            inputs[k][i] = keep + h;
            const double up = objective(inputs);
            inputs[k][i] = keep - h;
            const double down = objective(inputs);
            inputs[k][i] = keep;
            const double gap = (up - center) / h - (center - down) / h;
            if (std::abs(gap) > kink_tol * rms) {
                // smooth curvature halves the one-sided gap with the step, a slope jump does not
                inputs[k][i] = keep + h / 2;
                const double up2 = objective(inputs);
                inputs[k][i] = keep - h / 2;
                const double down2 = objective(inputs);
                inputs[k][i] = keep;
                const double gap2 = (up2 - center) / (h / 2) - (center - down2) / (h / 2);
                const double drift = (up - down) / (2 * h) - (up2 - down2) / h;
                if (std::abs(gap2 - gap / 2) > 0.1 * std::abs(gap) || std::abs(drift) > 1e-2 * kink_tol * rms) {
                    ++r.kinks;
                    continue;
                }
            }
            const double numeric = (up - down) / (2 * h);
            const double a = analytic[k][i];
            diff += (a - numeric) * (a - numeric);
            na += a * a;
            nn += numeric * numeric;
            ++r.checked;
        }
    }
    r.analytic_norm = std::sqrt(na);
    r.rel_error = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-300});
    return r;
}

} // namespace lessnet::testing
