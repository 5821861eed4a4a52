#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "lessnet/ops.hpp"
#include "lessnet/warp.hpp"

namespace lessnet {

enum class Similarity { mse, ncc, ncc_global };

inline const char* to_string(Similarity s)
{
    switch (s) {
    case Similarity::mse: return "mse";
    case Similarity::ncc: return "ncc";
    case Similarity::ncc_global: return "ncc_global";
    }
    return "?";
}

struct LossConfig {
    Similarity similarity = Similarity::mse;
    double lambda = 0.01;
    std::size_t ncc_window = 9;
    double epsilon = 1e-5;

    void validate() const
    {
        if (lambda < 0) throw std::invalid_argument("lambda must be non-negative");
        if (similarity == Similarity::ncc && (ncc_window == 0 || ncc_window % 2 == 0)) throw std::invalid_argument("ncc_window must be odd");
        if (epsilon <= 0) throw std::invalid_argument("epsilon must be positive");
    }
};

namespace detail {

inline void require_same(const Shape& a, const Shape& b, const char* what)
{
    if (a != b) throw std::invalid_argument(std::string(what) + " shape mismatch: " + shape_string(a) + " vs " + shape_string(b));
}

/// In-place box sum over [i - r, i + r] clipped to the grid, on every spatial axis.
inline void box_sum(std::vector<double>& v, const Grid& g, std::size_t r)
{
    const std::array<std::size_t, 3> extent{g.d, g.h, g.w};
    const std::array<std::size_t, 3> stride{g.h * g.w, g.w, 1};
    std::vector<double> line, prefix;
    for (std::size_t ax = 0; ax < 3; ++ax) {
        const std::size_t n = extent[ax], st = stride[ax];
        if (n == 1) continue;
        line.resize(n);
        prefix.assign(n + 1, 0.0);
        const std::size_t lines = g.voxels() / n;
        for (std::size_t l = 0; l < lines; ++l) {
            // Start offset of the l-th line along this axis.
            const std::size_t outer = l / st, inner = l % st;
            const std::size_t start = outer * st * n + inner;
            for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + v[start + i * st];
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t lo = i >= r ? i - r : 0;
                const std::size_t hi = std::min(n - 1, i + r);
                line[i] = prefix[hi + 1] - prefix[lo];
            }
            for (std::size_t i = 0; i < n; ++i) v[start + i * st] = line[i];
        }
    }
}

} // namespace detail

/// Mean squared difference.
template <typename T>
Var<T> mse(Var<T> a, Var<T> b)
{
    const Tensor<T>& va = a.value();
    const Tensor<T>& vb = b.value();
    detail::require_same(va.shape(), vb.shape(), "mse");
    double s = 0;
    for (std::size_t i = 0; i < va.size(); ++i) {
        const double d = static_cast<double>(va[i]) - static_cast<double>(vb[i]);
        s += d * d;
    }
    const double n = static_cast<double>(va.size());
    return a.tape->record(Tensor<T>::scalar(static_cast<T>(s / n)), any_needs_grad({a, b}),
                          [a, b, n](Tape<T>& t, const Tensor<T>& gy) {
                              const Tensor<T>& va = a.value();
                              const Tensor<T>& vb = b.value();
                              const T k = static_cast<T>(2.0 / n) * gy[0];
                              Tensor<T>* ga = a.needs_grad() ? &t.grad_slot(a) : nullptr;
                              Tensor<T>* gb = b.needs_grad() ? &t.grad_slot(b) : nullptr;
                              for (std::size_t i = 0; i < va.size(); ++i) {
                                  const T d = k * (va[i] - vb[i]);
                                  if (ga) (*ga)[i] += d;
                                  if (gb) (*gb)[i] -= d;
                              }
                          });
}

/// Local squared normalized cross-correlation, averaged over voxels and channels.
/// Per voxel: r = cross^2 / (var_a * var_b + eps) over the window centred on it,
/// clipped at the borders. `window` = 0 selects one global window.
template <typename T>
Var<T> ncc(Var<T> a, Var<T> b, std::size_t window = 9, double eps = 1e-5)
{
    const Tensor<T>& va = a.value();
    const Tensor<T>& vb = b.value();
    detail::require_same(va.shape(), vb.shape(), "ncc");
    if (window != 0 && window % 2 == 0) throw std::invalid_argument("ncc window must be odd");
    const Grid g = Grid::of(va);
    const std::size_t V = g.voxels(), C = va.channels();
    const double total = static_cast<double>(V * C);

    // Per-voxel adjoints of r w.r.t. the five window sums, scaled by 1/total.
    std::vector<double> gSa(V * C), gSb(V * C), gSaa(V * C), gSbb(V * C), gSab(V * C);
    double acc = 0;
    std::vector<double> Sa(V), Sb(V), Saa(V), Sbb(V), Sab(V), cnt(V, 1.0);
    if (window != 0) detail::box_sum(cnt, g, window / 2);
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < V; ++i) {
            const double x = va[c * V + i], y = vb[c * V + i];
            Sa[i] = x;
            Sb[i] = y;
            Saa[i] = x * x;
            Sbb[i] = y * y;
            Sab[i] = x * y;
        }
        if (window != 0) {
            for (auto* s : {&Sa, &Sb, &Saa, &Sbb, &Sab}) detail::box_sum(*s, g, window / 2);
        } else {
            for (auto* s : {&Sa, &Sb, &Saa, &Sbb, &Sab}) {
                double tot = 0;
                for (double e : *s) tot += e;
                std::fill(s->begin(), s->end(), tot);
            }
            std::fill(cnt.begin(), cnt.end(), static_cast<double>(V));
        }
        for (std::size_t i = 0; i < V; ++i) {
            const double n = cnt[i];
            const double cross = Sab[i] - Sa[i] * Sb[i] / n;
            const double var_a = Saa[i] - Sa[i] * Sa[i] / n;
            const double var_b = Sbb[i] - Sb[i] * Sb[i] / n;
            const double D = var_a * var_b + eps;
            const double r = cross * cross / D;
            acc += r;
            const double dcross = 2.0 * cross / D / total;
            const double dva = -r * var_b / D / total;
            const double dvb = -r * var_a / D / total;
            const std::size_t o = c * V + i;
            gSab[o] = dcross;
            gSaa[o] = dva;
            gSbb[o] = dvb;
            gSa[o] = dcross * (-Sb[i] / n) + dva * (-2.0 * Sa[i] / n);
            gSb[o] = dcross * (-Sa[i] / n) + dvb * (-2.0 * Sb[i] / n);
        }
    }

    return a.tape->record(
        Tensor<T>::scalar(static_cast<T>(acc / total)), any_needs_grad({a, b}),
        [a, b, g, V, C, window, gSa = std::move(gSa), gSb = std::move(gSb), gSaa = std::move(gSaa),
         gSbb = std::move(gSbb), gSab = std::move(gSab)](Tape<T>& t, const Tensor<T>& gy) {
            const Tensor<T>& va = a.value();
            const Tensor<T>& vb = b.value();
            // The clipped window relation is symmetric, so the adjoint of a box sum is a box sum.
            auto spread = [&](const std::vector<double>& src, std::size_t c) {
                std::vector<double> v(src.begin() + static_cast<std::ptrdiff_t>(c * V),
                                      src.begin() + static_cast<std::ptrdiff_t>((c + 1) * V));
                if (window != 0) {
                    detail::box_sum(v, g, window / 2);
                } else {
                    double tot = 0;
                    for (double e : v) tot += e;
                    std::fill(v.begin(), v.end(), tot);
                }
                return v;
            };
            const double up = gy[0];
            for (std::size_t c = 0; c < C; ++c) {
                const auto ab = spread(gSab, c);
                if (a.needs_grad()) {
                    const auto s1 = spread(gSa, c), s2 = spread(gSaa, c);
                    Tensor<T>& ga = t.grad_slot(a);
                    for (std::size_t i = 0; i < V; ++i) {
                        const std::size_t o = c * V + i;
                        ga[o] += static_cast<T>(up * (s1[i] + 2.0 * va[o] * s2[i] + vb[o] * ab[i]));
                    }
                }
                if (b.needs_grad()) {
                    const auto s1 = spread(gSb, c), s2 = spread(gSbb, c);
                    Tensor<T>& gb = t.grad_slot(b);
                    for (std::size_t i = 0; i < V; ++i) {
                        const std::size_t o = c * V + i;
                        gb[o] += static_cast<T>(up * (s1[i] + 2.0 * vb[o] * s2[i] + va[o] * ab[i]));
                    }
                }
            }
        });
}

/// First-order diffusion regularizer: squared forward differences, averaged
/// per axis over all channels and positions, then over the axes that have
/// at least two samples.
template <typename T>
Var<T> diffusion_reg(Var<T> u)
{
    const Tensor<T>& v = u.value();
    const Grid g = Grid::of(v);
    const std::size_t C = v.channels(), V = g.voxels();
    const std::array<std::size_t, 3> extent{g.d, g.h, g.w};
    const std::array<std::size_t, 3> stride{g.h * g.w, g.w, 1};
    std::vector<std::size_t> axes;
    for (std::size_t ax = 0; ax < 3; ++ax)
        if (extent[ax] >= 2) axes.push_back(ax);
    if (axes.empty()) throw std::invalid_argument("diffusion_reg needs an axis with extent >= 2");

    // weight[ax] = 1 / (|axes| * number of differences along ax)
    std::array<double, 3> weight{0, 0, 0};
    for (std::size_t ax : axes)
        weight[ax] = 1.0 / (static_cast<double>(axes.size()) * static_cast<double>(C * V / extent[ax] * (extent[ax] - 1)));

    auto visit = [g, C, V, extent, stride, axes](auto&& fn) {
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ax : axes) {
                std::size_t i = 0;
                for (std::size_t z = 0; z < g.d; ++z)
                    for (std::size_t y = 0; y < g.h; ++y)
                        for (std::size_t x = 0; x < g.w; ++x, ++i) {
                            const std::size_t p = ax == 0 ? z : ax == 1 ? y : x;
                            if (p + 1 < extent[ax]) fn(ax, c * V + i, c * V + i + stride[ax]);
                        }
            }
    };
    double s = 0;
    visit([&](std::size_t ax, std::size_t i, std::size_t j) {
        const double d = static_cast<double>(v[j]) - static_cast<double>(v[i]);
        s += weight[ax] * d * d;
    });
    return u.tape->record(Tensor<T>::scalar(static_cast<T>(s)), u.needs_grad(),
                          [u, weight, visit](Tape<T>& t, const Tensor<T>& gy) {
                              const Tensor<T>& v = u.value();
                              Tensor<T>& g = t.grad_slot(u);
                              visit([&](std::size_t ax, std::size_t i, std::size_t j) {
                                  const T d = static_cast<T>(2.0 * weight[ax]) * (v[j] - v[i]) * gy[0];
                                  g[j] += d;
                                  g[i] -= d;
                              });
                          });
}

template <typename T>
struct LossTerms {
    Var<T> total;
    Var<T> similarity;   // the L_S term as optimized (1 - ncc for NCC)
    Var<T> regularizer;  // L_R before the lambda weight
    Var<T> displacement; // u, or Exp(v) - Id for the diffeomorphic variant
    Var<T> warped;
};

/// Registration objective for one pair. For the diffeomorphic variant `field`
/// is a stationary velocity, the moving image is warped by Exp(field) and the
/// regularizer acts on the velocity itself.
template <typename T>
LossTerms<T> total_loss(Var<T> moving, Var<T> fixed, Var<T> field, const LossConfig& cfg, bool diffeomorphic,
                        int squaring_steps = 7)
{
    cfg.validate();
    const Var<T> disp = diffeomorphic ? exponentiate(field, squaring_steps) : field;
    const Var<T> warped = warp(moving, disp);
    Var<T> sim = cfg.similarity == Similarity::mse ? mse(warped, fixed)
                                                   : ncc(warped, fixed, cfg.similarity == Similarity::ncc ? cfg.ncc_window : 0,
                                                         cfg.epsilon);
    if (cfg.similarity != Similarity::mse) {
        Tape<T>& tape = *field.tape;
        sim = add(tape.constant(Tensor<T>::scalar(T(1))), sim, T(1), T(-1));
    }
    const Var<T> reg = diffusion_reg(field);
    const Var<T> total = add(sim, reg, T(1), static_cast<T>(cfg.lambda));
    return {total, sim, reg, disp, warped};
}

} // namespace lessnet
