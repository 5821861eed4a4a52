#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lessnet/autodiff.hpp"
#include "lessnet/tensor.hpp"

// Differentiable primitives used by the registration networks. Every op takes
// and returns Vars on the same Tape; spatial rank 2 and 3 share one kernel by
// treating 2D as depth 1.

namespace lessnet {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
    Grid in, out;
    std::size_t kd = 1, kh = 1, kw = 1;
    std::size_t sd = 1, sh = 1, sw = 1;
    std::ptrdiff_t pd = 0, ph = 0, pw = 0;

    std::size_t kernel_volume() const { return kd * kh * kw; }
};

template <typename T>
void im2col(const T* x, std::size_t cin, const ConvGeometry& g, T* cols)
{
    const std::size_t P = g.out.voxels();
    const auto D = static_cast<std::ptrdiff_t>(g.in.d), H = static_cast<std::ptrdiff_t>(g.in.h),
               W = static_cast<std::ptrdiff_t>(g.in.w);
    std::size_t row = 0;
    for (std::size_t c = 0; c < cin; ++c) {
        const T* xc = x + c * g.in.voxels();
        for (std::size_t kz = 0; kz < g.kd; ++kz)
            for (std::size_t ky = 0; ky < g.kh; ++ky)
                for (std::size_t kx = 0; kx < g.kw; ++kx, ++row) {
                    T* dst = cols + row * P;
                    for (std::size_t oz = 0; oz < g.out.d; ++oz) {
                        const std::ptrdiff_t iz = static_cast<std::ptrdiff_t>(oz * g.sd + kz) - g.pd;
                        for (std::size_t oy = 0; oy < g.out.h; ++oy) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.sh + ky) - g.ph;
                            T* drow = dst + (oz * g.out.h + oy) * g.out.w;
                            if (iz < 0 || iz >= D || iy < 0 || iy >= H) {
                                std::fill(drow, drow + g.out.w, T(0));
                                continue;
                            }
                            const T* srow = xc + (iz * H + iy) * W;
                            for (std::size_t ox = 0; ox < g.out.w; ++ox) {
                                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.sw + kx) - g.pw;
                                drow[ox] = (ix >= 0 && ix < W) ? srow[ix] : T(0);
                            }
                        }
                    }
                }
    }
}

template <typename T>
void col2im_add(const T* cols, std::size_t cin, const ConvGeometry& g, T* dx)
{
    const std::size_t P = g.out.voxels();
    const auto D = static_cast<std::ptrdiff_t>(g.in.d), H = static_cast<std::ptrdiff_t>(g.in.h),
               W = static_cast<std::ptrdiff_t>(g.in.w);
    std::size_t row = 0;
    for (std::size_t c = 0; c < cin; ++c) {
        T* xc = dx + c * g.in.voxels();
        for (std::size_t kz = 0; kz < g.kd; ++kz)
            for (std::size_t ky = 0; ky < g.kh; ++ky)
                for (std::size_t kx = 0; kx < g.kw; ++kx, ++row) {
                    const T* src = cols + row * P;
                    for (std::size_t oz = 0; oz < g.out.d; ++oz) {
                        const std::ptrdiff_t iz = static_cast<std::ptrdiff_t>(oz * g.sd + kz) - g.pd;
                        if (iz < 0 || iz >= D) continue;
                        for (std::size_t oy = 0; oy < g.out.h; ++oy) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.sh + ky) - g.ph;
                            if (iy < 0 || iy >= H) continue;
                            const T* srow = src + (oz * g.out.h + oy) * g.out.w;
                            T* drow = xc + (iz * H + iy) * W;
                            for (std::size_t ox = 0; ox < g.out.w; ++ox) {
                                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.sw + kx) - g.pw;
                                if (ix >= 0 && ix < W) drow[ix] += srow[ox];
                            }
                        }
                    }
                }
    }
}

inline void require(bool ok, const std::string& message)
{
    if (!ok) throw std::invalid_argument(message);
}

} // namespace detail

/// Cross-correlation with odd kernels, zero padding k/2 per side, and the given stride.
/// stride 1 preserves the spatial extents.
template <typename T>
Var<T> conv(Var<T> input, Var<T> weight, Var<T> bias, std::size_t stride = 1)
{
    using namespace detail;
    Tape<T>& tape = *input.tape;
    const Tensor<T>& x = input.value();
    const Tensor<T>& w = weight.value();
    const Grid in = Grid::of(x);
    const std::size_t rank = in.rank;
    require(w.rank() == rank + 2,
            "conv weight " + shape_string(w.shape()) + " does not match input " + shape_string(x.shape()));
    require(w.extent(1) == x.channels(), "conv channel mismatch: input " + shape_string(x.shape()) + " vs weight " +
                                             shape_string(w.shape()));
    const std::size_t cout = w.extent(0), cin = x.channels();
    require(bias.value().size() == cout,
            "conv bias " + shape_string(bias.value().shape()) + " does not match weight " + shape_string(w.shape()));
    require(stride == 1 || stride == 2, "conv stride must be 1 or 2");

    ConvGeometry g;
    g.in = in;
    if (rank == 3) {
        g.kd = w.extent(2);
        g.sd = stride;
        g.pd = static_cast<std::ptrdiff_t>(g.kd / 2);
    }
    g.kh = w.extent(rank);
    g.kw = w.extent(rank + 1);
    g.sh = g.sw = stride;
    g.ph = static_cast<std::ptrdiff_t>(g.kh / 2);
    g.pw = static_cast<std::ptrdiff_t>(g.kw / 2);
    require(g.kd % 2 == 1 && g.kh % 2 == 1 && g.kw % 2 == 1, "conv kernel extents must be odd");
    g.out = in;
    auto out_extent = [](std::size_t n, std::size_t k, std::ptrdiff_t p, std::size_t s) {
        return (n + 2 * static_cast<std::size_t>(p) - k) / s + 1;
    };
    g.out.h = out_extent(in.h, g.kh, g.ph, g.sh);
    g.out.w = out_extent(in.w, g.kw, g.pw, g.sw);
    if (rank == 3) g.out.d = out_extent(in.d, g.kd, g.pd, g.sd);

    const std::size_t K = cin * g.kernel_volume();
    const std::size_t P = g.out.voxels();
    std::vector<T> cols(K * P);
    im2col(x.data(), cin, g, cols.data());

    Tensor<T> y(with_channels(cout, g.out));
    MapMat<T> Y(y.data(), cout, P);
    Y.noalias() = CMapMat<T>(w.data(), cout, K) * CMapMat<T>(cols.data(), K, P);
    const T* b = bias.value().data();
    for (std::size_t co = 0; co < cout; ++co) Y.row(co).array() += b[co];

    const bool ng = any_needs_grad({input, weight, bias});
    return tape.record(std::move(y), ng,
                       [input, weight, bias, g, cin, cout, K, P, cols = std::move(cols)](Tape<T>& t, const Tensor<T>& gy) {
                           CMapMat<T> GY(gy.data(), cout, P);
                           if (weight.needs_grad()) {
                               MapMat<T>(t.grad_slot(weight).data(), cout, K).noalias() +=
                                   GY * CMapMat<T>(cols.data(), K, P).transpose();
                           }
                           if (bias.needs_grad()) {
                               T* gb = t.grad_slot(bias).data();
                               for (std::size_t co = 0; co < cout; ++co) gb[co] += GY.row(co).sum();
                           }
                           if (input.needs_grad()) {
                               std::vector<T> gcols(K * P);
                               MapMat<T>(gcols.data(), K, P).noalias() =
                                   CMapMat<T>(weight.value().data(), cout, K).transpose() * GY;
                               col2im_add(gcols.data(), cin, g, t.grad_slot(input).data());
                           }
                       });
}

/// Transposed convolution with kernel 2 and stride 2; weight layout [Cin, Cout, 2, 2(, 2)].
/// Output extents are exactly twice the input extents.
template <typename T>
Var<T> fractional_conv(Var<T> input, Var<T> weight, Var<T> bias)
{
    using namespace detail;
    Tape<T>& tape = *input.tape;
    const Tensor<T>& x = input.value();
    const Tensor<T>& w = weight.value();
    const Grid in = Grid::of(x);
    const std::size_t rank = in.rank;
    require(w.rank() == rank + 2 && w.extent(0) == x.channels(),
            "fractional_conv shape mismatch: input " + shape_string(x.shape()) + " vs weight " + shape_string(w.shape()));
    for (std::size_t a = 2; a < w.rank(); ++a)
        require(w.extent(a) == 2, "fractional_conv kernel must be 2 on every axis, got " + shape_string(w.shape()));
    const std::size_t cin = x.channels(), cout = w.extent(1);
    require(bias.value().size() == cout, "fractional_conv bias " + shape_string(bias.value().shape()) +
                                             " does not match weight " + shape_string(w.shape()));

    const Grid out = in.scaled_up(2);
    const std::size_t kd = rank == 3 ? 2 : 1;
    const std::size_t kvol = kd * 4;
    const std::size_t R = cout * kvol;
    const std::size_t Pin = in.voxels();

    std::vector<T> cols(R * Pin);
    MapMat<T>(cols.data(), R, Pin).noalias() =
        CMapMat<T>(w.data(), cin, R).transpose() * CMapMat<T>(x.data(), cin, Pin);

    Tensor<T> y(with_channels(cout, out));
    const T* b = bias.value().data();
    // Scatter: tile (a,b,c) of input voxel (z,y,x) lands at (kd*z+a, 2y+b, 2x+c).
    auto for_each_tile = [in, out, kd, kvol, cout, Pin](auto&& fn) {
        for (std::size_t co = 0; co < cout; ++co)
            for (std::size_t k = 0; k < kvol; ++k) {
                const std::size_t a = k / 4, bb = (k / 2) % 2, c = k % 2;
                const std::size_t row = co * kvol + k;
                for (std::size_t z = 0; z < in.d; ++z)
                    for (std::size_t yy = 0; yy < in.h; ++yy) {
                        const std::size_t src = row * Pin + (z * in.h + yy) * in.w;
                        const std::size_t dst =
                            co * out.voxels() + ((kd * z + a) * out.h + 2 * yy + bb) * out.w + c;
                        for (std::size_t xx = 0; xx < in.w; ++xx) fn(src + xx, dst + 2 * xx, co);
                    }
            }
    };
    T* yd = y.data();
    for_each_tile([&](std::size_t s, std::size_t d, std::size_t co) { yd[d] = cols[s] + b[co]; });

    const bool ng = any_needs_grad({input, weight, bias});
    return tape.record(
        std::move(y), ng,
        [input, weight, bias, cin, cout, R, Pin, for_each_tile](Tape<T>& t, const Tensor<T>& gy) {
            std::vector<T> gcols(R * Pin);
            const T* gyd = gy.data();
            for_each_tile([&](std::size_t s, std::size_t d, std::size_t) { gcols[s] = gyd[d]; });
            CMapMat<T> GC(gcols.data(), R, Pin);
            if (bias.needs_grad()) {
                T* gb = t.grad_slot(bias).data();
                const std::size_t kvol = R / cout;
                for (std::size_t co = 0; co < cout; ++co)
                    gb[co] += GC.middleRows(co * kvol, kvol).sum();
            }
            if (weight.needs_grad()) {
                MapMat<T>(t.grad_slot(weight).data(), cin, R).noalias() +=
                    CMapMat<T>(input.value().data(), cin, Pin) * GC.transpose();
            }
            if (input.needs_grad()) {
                MapMat<T>(t.grad_slot(input).data(), cin, Pin).noalias() +=
                    CMapMat<T>(weight.value().data(), cin, R) * GC;
            }
        });
}

enum class PoolMode { min, avg, max };

inline const char* to_string(PoolMode m)
{
    switch (m) {
    case PoolMode::min: return "min";
    case PoolMode::avg: return "avg";
    case PoolMode::max: return "max";
    }
    return "?";
}

/// Non-overlapping window reduction with window k and stride k on every spatial axis.
/// Max/min gradients route to the first extremal element in row-major window order.
template <typename T>
Var<T> pool(Var<T> input, PoolMode mode, std::size_t k)
{
    using detail::require;
    const Tensor<T>& x = input.value();
    const Grid in = Grid::of(x);
    require(k >= 1, "pool window must be positive");
    for (std::size_t a = 0; a < in.rank; ++a)
        require(in.extent(a) % k == 0, "pool window " + std::to_string(k) + " does not divide extents of " +
                                           shape_string(x.shape()));
    const Grid out = in.scaled_down(k);
    const std::size_t kz = in.rank == 3 ? k : 1;
    const std::size_t C = x.channels();
    Tensor<T> y(with_channels(C, out));
    std::vector<std::size_t> picked; // input flat index per output element (min/max)
    if (mode != PoolMode::avg) picked.resize(y.size());
    const T inv = T(1) / static_cast<T>(kz * k * k);

    std::size_t o = 0;
    for (std::size_t c = 0; c < C; ++c) {
        const std::size_t base = c * in.voxels();
        for (std::size_t z = 0; z < out.d; ++z)
            for (std::size_t yy = 0; yy < out.h; ++yy)
                for (std::size_t xx = 0; xx < out.w; ++xx, ++o) {
                    T acc = T(0);
                    std::size_t best = 0;
                    bool first = true;
                    for (std::size_t dz = 0; dz < kz; ++dz)
                        for (std::size_t dy = 0; dy < k; ++dy) {
                            const std::size_t row = base + ((z * kz + dz) * in.h + yy * k + dy) * in.w + xx * k;
                            for (std::size_t dx = 0; dx < k; ++dx) {
                                const T v = x[row + dx];
                                if (mode == PoolMode::avg) {
                                    acc += v;
                                } else if (first || (mode == PoolMode::max ? v > acc : v < acc)) {
                                    acc = v;
                                    best = row + dx;
                                    first = false;
                                }
                            }
                        }
                    if (mode == PoolMode::avg) {
                        y[o] = acc * inv;
                    } else {
                        y[o] = acc;
                        picked[o] = best;
                    }
                }
    }

    return input.tape->record(
        std::move(y), input.needs_grad(),
        [input, mode, picked = std::move(picked), in, out, k, kz, C, inv](Tape<T>& t, const Tensor<T>& gy) {
            Tensor<T>& gx = t.grad_slot(input);
            if (mode != PoolMode::avg) {
                for (std::size_t o = 0; o < gy.size(); ++o) gx[picked[o]] += gy[o];
                return;
            }
            std::size_t o = 0;
            for (std::size_t c = 0; c < C; ++c) {
                const std::size_t base = c * in.voxels();
                for (std::size_t z = 0; z < out.d; ++z)
                    for (std::size_t yy = 0; yy < out.h; ++yy)
                        for (std::size_t xx = 0; xx < out.w; ++xx, ++o) {
                            const T g = gy[o] * inv;
                            for (std::size_t dz = 0; dz < kz; ++dz)
                                for (std::size_t dy = 0; dy < k; ++dy) {
                                    const std::size_t row =
                                        base + ((z * kz + dz) * in.h + yy * k + dy) * in.w + xx * k;
                                    for (std::size_t dx = 0; dx < k; ++dx) gx[row + dx] += g;
                                }
                        }
            }
        });
}

/// Channel-axis concatenation of tensors sharing spatial extents.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts)
{
    using detail::require;
    require(!parts.empty(), "concat needs at least one part");
    const Shape spatial = parts.front().value().spatial();
    std::size_t channels = 0;
    bool ng = false;
    for (const auto& p : parts) {
        require(p.value().spatial() == spatial, "concat spatial mismatch: " + shape_string(parts.front().shape()) +
                                                    " vs " + shape_string(p.shape()));
        channels += p.value().channels();
        ng = ng || p.needs_grad();
    }
    Shape shape{channels};
    shape.insert(shape.end(), spatial.begin(), spatial.end());
    Tensor<T> y(shape);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        std::copy(p.value().begin(), p.value().end(), y.begin() + static_cast<std::ptrdiff_t>(offset));
        offset += p.value().size();
    }
    return parts.front().tape->record(std::move(y), ng, [parts](Tape<T>& t, const Tensor<T>& gy) {
        std::size_t offset = 0;
        for (const auto& p : parts) {
            const std::size_t n = p.value().size();
            if (p.needs_grad()) {
                Tensor<T>& g = t.grad_slot(p);
                for (std::size_t i = 0; i < n; ++i) g[i] += gy[offset + i];
            }
            offset += n;
        }
    });
}

/// Channels [first, first + count) of x.
template <typename T>
Var<T> slice_channels(Var<T> x, std::size_t first, std::size_t count)
{
    const Tensor<T>& v = x.value();
    detail::require(first + count <= v.channels() && count > 0,
                    "slice_channels out of range for " + shape_string(v.shape()));
    Shape shape = v.shape();
    shape[0] = count;
    const std::size_t stride = v.channel_stride();
    Tensor<T> y(shape, std::vector<T>(v.begin() + static_cast<std::ptrdiff_t>(first * stride),
                                      v.begin() + static_cast<std::ptrdiff_t>((first + count) * stride)));
    return x.tape->record(std::move(y), x.needs_grad(), [x, first, stride](Tape<T>& t, const Tensor<T>& gy) {
        Tensor<T>& g = t.grad_slot(x);
        for (std::size_t i = 0; i < gy.size(); ++i) g[first * stride + i] += gy[i];
    });
}

namespace detail {

template <typename T, typename F, typename DF>
Var<T> unary(Var<T> x, F f, DF df)
{
    const Tensor<T>& v = x.value();
    Tensor<T> y(v.shape());
    for (std::size_t i = 0; i < v.size(); ++i) y[i] = f(v[i]);
    return x.tape->record(std::move(y), x.needs_grad(), [x, df](Tape<T>& t, const Tensor<T>& gy) {
        const Tensor<T>& v = x.value();
        Tensor<T>& g = t.grad_slot(x);
        for (std::size_t i = 0; i < v.size(); ++i) g[i] += gy[i] * df(v[i]);
    });
}

} // namespace detail

/// Subgradient at 0 is 1.
template <typename T>
Var<T> leaky_relu(Var<T> x, T slope = T(0.01))
{
    return detail::unary(
        x, [slope](T v) { return v >= T(0) ? v : slope * v; }, [slope](T v) { return v >= T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> softsign(Var<T> x)
{
    return detail::unary(
        x, [](T v) { return v / (T(1) + std::abs(v)); },
        [](T v) {
            const T d = T(1) + std::abs(v);
            return T(1) / (d * d);
        });
}

/// Multiplies channel c by factors[c].
template <typename T>
Var<T> scale_channels(Var<T> x, std::vector<T> factors)
{
    const Tensor<T>& v = x.value();
    detail::require(factors.size() == v.channels(), "scale_channels expects one factor per channel of " +
                                                        shape_string(v.shape()));
    Tensor<T> y = v;
    const std::size_t stride = v.channel_stride();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= factors[i / stride];
    return x.tape->record(std::move(y), x.needs_grad(),
                          [x, factors = std::move(factors), stride](Tape<T>& t, const Tensor<T>& gy) {
                              Tensor<T>& g = t.grad_slot(x);
                              for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * factors[i / stride];
                          });
}

template <typename T>
Var<T> scale(Var<T> x, T factor)
{
    return detail::unary(x, [factor](T v) { return v * factor; }, [factor](T) { return factor; });
}

/// alpha * a + beta * b for same-shaped a and b.
template <typename T>
Var<T> add(Var<T> a, Var<T> b, T alpha = T(1), T beta = T(1))
{
    const Tensor<T>& va = a.value();
    const Tensor<T>& vb = b.value();
    detail::require(va.shape() == vb.shape(),
                    "add shape mismatch: " + shape_string(va.shape()) + " vs " + shape_string(vb.shape()));
    Tensor<T> y(va.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = alpha * va[i] + beta * vb[i];
    return a.tape->record(std::move(y), any_needs_grad({a, b}), [a, b, alpha, beta](Tape<T>& t, const Tensor<T>& gy) {
        if (a.needs_grad()) {
            Tensor<T>& g = t.grad_slot(a);
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] += alpha * gy[i];
        }
        if (b.needs_grad()) {
            Tensor<T>& g = t.grad_slot(b);
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] += beta * gy[i];
        }
    });
}

/// Elementwise product.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b)
{
    const Tensor<T>& va = a.value();
    const Tensor<T>& vb = b.value();
    detail::require(va.shape() == vb.shape(),
                    "mul shape mismatch: " + shape_string(va.shape()) + " vs " + shape_string(vb.shape()));
    Tensor<T> y(va.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = va[i] * vb[i];
    return a.tape->record(std::move(y), any_needs_grad({a, b}), [a, b](Tape<T>& t, const Tensor<T>& gy) {
        if (a.needs_grad()) {
            Tensor<T>& g = t.grad_slot(a);
            const Tensor<T>& vb = b.value();
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * vb[i];
        }
        if (b.needs_grad()) {
            Tensor<T>& g = t.grad_slot(b);
            const Tensor<T>& va = a.value();
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * va[i];
        }
    });
}

/// Sum of all elements as a scalar.
template <typename T>
Var<T> sum(Var<T> x)
{
    const Tensor<T>& v = x.value();
    T s = T(0);
    for (T e : v) s += e;
    return x.tape->record(Tensor<T>::scalar(s), x.needs_grad(), [x](Tape<T>& t, const Tensor<T>& gy) {
        Tensor<T>& g = t.grad_slot(x);
        for (auto& e : g) e += gy[0];
    });
}

} // namespace lessnet
