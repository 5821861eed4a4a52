#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

#include "lessnet/ops.hpp"

namespace lessnet {

/// Absolute sampling coordinates phi = Id + u, voxel units, channel a holds axis a.
template <typename T>
struct DeformationField {
    Tensor<T> coords;
};

template <typename T>
DeformationField<T> identity_grid(const Shape& spatial)
{
    const Grid g = Grid::of_spatial(spatial);
    Tensor<T> t(with_channels(g.rank, g));
    const std::size_t off = g.rank == 3 ? 0 : 1; // 2D axes are (h, w)
    std::size_t i = 0;
    for (std::size_t z = 0; z < g.d; ++z)
        for (std::size_t y = 0; y < g.h; ++y)
            for (std::size_t x = 0; x < g.w; ++x, ++i) {
                const std::array<std::size_t, 3> idx{z, y, x};
                for (std::size_t a = 0; a < g.rank; ++a) t[a * g.voxels() + i] = static_cast<T>(idx[a + off]);
            }
    return {std::move(t)};
}

template <typename T>
DeformationField<T> to_deformation(const Tensor<T>& displacement)
{
    DeformationField<T> phi = identity_grid<T>(displacement.spatial());
    for (std::size_t i = 0; i < phi.coords.size(); ++i) phi.coords[i] += displacement[i];
    return phi;
}

template <typename T>
Tensor<T> to_displacement(const DeformationField<T>& phi)
{
    Tensor<T> u = phi.coords;
    const auto id = identity_grid<T>(u.spatial());
    for (std::size_t i = 0; i < u.size(); ++i) u[i] -= id.coords[i];
    return u;
}

namespace detail {

template <typename T>
struct AxisSample {
    std::size_t i0 = 0, i1 = 0;
    T f = 0;        // weight of i1
    T inside = 0;   // 1 when the coordinate was not clamped
};

/// Linear sampling along one axis with clamp-to-border.
template <typename T>
AxisSample<T> sample_axis(T c, std::size_t n)
{
    if (n == 1) return {0, 0, T(0), T(0)};
    const T hi = static_cast<T>(n - 1);
    AxisSample<T> s;
    s.inside = (c >= T(0) && c <= hi) ? T(1) : T(0);
    const T cc = std::clamp(c, T(0), hi);
    s.i0 = std::min(static_cast<std::size_t>(std::floor(cc)), n - 2);
    s.i1 = s.i0 + 1;
    s.f = cc - static_cast<T>(s.i0);
    return s;
}

template <typename T>
void check_warp_shapes(const Tensor<T>& image, const Tensor<T>& disp)
{
    const Grid g = Grid::of(image);
    if (disp.channels() != g.rank || disp.spatial() != image.spatial())
        throw std::invalid_argument("warp shape mismatch: image " + shape_string(image.shape()) + " vs displacement " +
                                    shape_string(disp.shape()));
}

/// Visits every output voxel with its 8 (3D) or 4 (2D) interpolation corners.
/// fn(voxel, samples[3]) where samples are ordered (d, h, w).
template <typename T, typename Fn>
void for_each_sample(const Grid& g, const Tensor<T>& disp, Fn&& fn)
{
    const std::size_t V = g.voxels();
    std::size_t i = 0;
    for (std::size_t z = 0; z < g.d; ++z)
        for (std::size_t y = 0; y < g.h; ++y)
            for (std::size_t x = 0; x < g.w; ++x, ++i) {
                std::array<AxisSample<T>, 3> s;
                if (g.rank == 3) {
                    s[0] = sample_axis(static_cast<T>(z) + disp[i], g.d);
                    s[1] = sample_axis(static_cast<T>(y) + disp[V + i], g.h);
                    s[2] = sample_axis(static_cast<T>(x) + disp[2 * V + i], g.w);
                } else {
                    s[0] = AxisSample<T>{};
                    s[1] = sample_axis(static_cast<T>(y) + disp[i], g.h);
                    s[2] = sample_axis(static_cast<T>(x) + disp[V + i], g.w);
                }
                fn(i, s);
            }
}

} // namespace detail

/// Pull warp: out(x) = image(x + u(x)), bi/trilinear, sampling clamped to the domain.
/// Works channel by channel, so it also warps multi-channel fields.
template <typename T>
Var<T> warp(Var<T> image, Var<T> disp)
{
    using namespace detail;
    const Tensor<T>& img = image.value();
    const Tensor<T>& u = disp.value();
    check_warp_shapes(img, u);
    const Grid g = Grid::of(img);
    const std::size_t C = img.channels(), V = g.voxels();
    Tensor<T> out(img.shape());
    for_each_sample<T>(g, u, [&](std::size_t i, const std::array<AxisSample<T>, 3>& s) {
        const T wz[2] = {T(1) - s[0].f, s[0].f}, wy[2] = {T(1) - s[1].f, s[1].f}, wx[2] = {T(1) - s[2].f, s[2].f};
        const std::size_t iz[2] = {s[0].i0, s[0].i1}, iy[2] = {s[1].i0, s[1].i1}, ix[2] = {s[2].i0, s[2].i1};
        for (std::size_t c = 0; c < C; ++c) {
            const T* src = img.data() + c * V;
            T acc = T(0);
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b)
                    for (int e = 0; e < 2; ++e) {
                        const T w = wz[a] * wy[b] * wx[e];
                        if (w != T(0)) acc += w * src[(iz[a] * g.h + iy[b]) * g.w + ix[e]];
                    }
            out[c * V + i] = acc;
        }
    });

    return image.tape->record(std::move(out), any_needs_grad({image, disp}), [image, disp, g, C, V](Tape<T>& t,
                                                                                                   const Tensor<T>& gy) {
        const Tensor<T>& img = image.value();
        Tensor<T>* gimg = image.needs_grad() ? &t.grad_slot(image) : nullptr;
        Tensor<T>* gu = disp.needs_grad() ? &t.grad_slot(disp) : nullptr;
        const std::size_t axis0 = g.rank == 3 ? 0 : 1;
        for_each_sample<T>(g, disp.value(), [&](std::size_t i, const std::array<AxisSample<T>, 3>& s) {
            const T wz[2] = {T(1) - s[0].f, s[0].f}, wy[2] = {T(1) - s[1].f, s[1].f},
                    wx[2] = {T(1) - s[2].f, s[2].f};
            const T dw[2] = {T(-1), T(1)};
            const std::size_t iz[2] = {s[0].i0, s[0].i1}, iy[2] = {s[1].i0, s[1].i1}, ix[2] = {s[2].i0, s[2].i1};
            T dcoord[3] = {0, 0, 0};
            for (std::size_t c = 0; c < C; ++c) {
                const T go = gy[c * V + i];
                if (go == T(0)) continue;
                const T* src = img.data() + c * V;
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b)
                        for (int e = 0; e < 2; ++e) {
                            const std::size_t at = (iz[a] * g.h + iy[b]) * g.w + ix[e];
                            if (gimg) {
                                const T w = wz[a] * wy[b] * wx[e];
                                if (w != T(0)) (*gimg)[c * V + at] += go * w;
                            }
                            if (gu) {
                                const T v = go * src[at];
                                dcoord[0] += v * dw[a] * wy[b] * wx[e];
                                dcoord[1] += v * wz[a] * dw[b] * wx[e];
                                dcoord[2] += v * wz[a] * wy[b] * dw[e];
                            }
                        }
            }
            if (gu)
                for (std::size_t ax = axis0; ax < 3; ++ax)
                    (*gu)[(ax - axis0) * V + i] += dcoord[ax] * s[ax].inside;
        });
    });
}

/// Nearest-neighbour pull warp for label maps (not differentiable).
template <typename T>
Tensor<T> warp_nearest(const Tensor<T>& labels, const Tensor<T>& disp)
{
    using namespace detail;
    check_warp_shapes(labels, disp);
    const Grid g = Grid::of(labels);
    const std::size_t C = labels.channels(), V = g.voxels();
    Tensor<T> out(labels.shape());
    for_each_sample<T>(g, disp, [&](std::size_t i, const std::array<AxisSample<T>, 3>& s) {
        const std::size_t z = s[0].f >= T(0.5) ? s[0].i1 : s[0].i0;
        const std::size_t y = s[1].f >= T(0.5) ? s[1].i1 : s[1].i0;
        const std::size_t x = s[2].f >= T(0.5) ? s[2].i1 : s[2].i0;
        for (std::size_t c = 0; c < C; ++c) out[c * V + i] = labels[c * V + (z * g.h + y) * g.w + x];
    });
    return out;
}

/// Linear warp of a plain tensor.
template <typename T>
Tensor<T> warp_linear(const Tensor<T>& image, const Tensor<T>& disp)
{
    Tape<T> tape;
    return warp(tape.constant(image), tape.constant(disp)).value();
}

/// Displacement of (Id + first) o (Id + second): second + first o (Id + second).
template <typename T>
Var<T> compose(Var<T> first, Var<T> second)
{
    return add(second, warp(first, second));
}

/// Scaling and squaring: start from v / 2^steps, then self-compose `steps` times.
/// Returns the displacement Exp(v) - Id.
template <typename T>
Var<T> exponentiate(Var<T> velocity, int steps = 7)
{
    if (steps < 0) throw std::invalid_argument("exponentiate needs a non-negative step count");
    Var<T> u = scale(velocity, static_cast<T>(std::ldexp(1.0, -steps)));
    for (int i = 0; i < steps; ++i) u = compose(u, u);
    return u;
}

template <typename T>
DeformationField<T> exponentiate(const Tensor<T>& velocity, int steps = 7)
{
    Tape<T> tape;
    return to_deformation(exponentiate(tape.constant(velocity), steps).value());
}

struct FoldingResult {
    Tensor<double> det_map; // [1, S...]
    double negative_fraction = 0.0;
};

/// Jacobian determinant of phi by central differences, one-sided at borders.
/// Border voxels count towards the negative fraction.
template <typename T>
FoldingResult jacobian_folding(const DeformationField<T>& phi)
{
    const Tensor<T>& c = phi.coords;
    const Grid g = Grid::of(c);
    if (c.channels() != g.rank)
        throw std::invalid_argument("deformation needs one channel per axis, got " + shape_string(c.shape()));
    for (std::size_t a = 0; a < g.rank; ++a)
        if (g.extent(a) < 2) throw std::invalid_argument("jacobian needs extents >= 2, got " + shape_string(c.shape()));

    const std::size_t V = g.voxels();
    const std::size_t off = g.rank == 3 ? 0 : 1;
    const std::array<std::size_t, 3> extent{g.d, g.h, g.w};
    const std::array<std::size_t, 3> stride{g.h * g.w, g.w, 1};
    FoldingResult r{Tensor<double>(with_channels(1, g)), 0.0};
    std::size_t negative = 0, i = 0;
    for (std::size_t z = 0; z < g.d; ++z)
        for (std::size_t y = 0; y < g.h; ++y)
            for (std::size_t x = 0; x < g.w; ++x, ++i) {
                const std::array<std::size_t, 3> pos{z, y, x};
                double J[3][3] = {{0}};
                for (std::size_t comp = 0; comp < g.rank; ++comp) {
                    const T* f = c.data() + comp * V;
                    for (std::size_t a = 0; a < g.rank; ++a) {
                        const std::size_t ax = a + off, n = extent[ax], p = pos[ax], st = stride[ax];
                        double d;
                        if (p == 0)
                            d = static_cast<double>(f[i + st]) - static_cast<double>(f[i]);
                        else if (p == n - 1)
                            d = static_cast<double>(f[i]) - static_cast<double>(f[i - st]);
                        else
                            d = 0.5 * (static_cast<double>(f[i + st]) - static_cast<double>(f[i - st]));
                        J[comp][a] = d;
                    }
                }
                double det;
                if (g.rank == 2)
                    det = J[0][0] * J[1][1] - J[0][1] * J[1][0];
                else
                    det = J[0][0] * (J[1][1] * J[2][2] - J[1][2] * J[2][1]) -
                          J[0][1] * (J[1][0] * J[2][2] - J[1][2] * J[2][0]) +
                          J[0][2] * (J[1][0] * J[2][1] - J[1][1] * J[2][0]);
                r.det_map[i] = det;
                if (det < 0.0) ++negative;
            }
    r.negative_fraction = static_cast<double>(negative) / static_cast<double>(V);
    return r;
}

/// Numerical inverse of a displacement by fixed-point iteration w <- -u o (Id + w).
/// Converges for smooth fields whose Jacobian stays well away from zero.
template <typename T>
Tensor<T> invert_displacement(const Tensor<T>& u, int iterations = 50)
{
    Tensor<T> w(u.shape());
    for (int it = 0; it < iterations; ++it) {
        Tensor<T> next = warp_linear(u, w);
        for (auto& v : next) v = -v;
        w = std::move(next);
    }
    return w;
}

} // namespace lessnet
