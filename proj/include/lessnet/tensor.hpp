#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lessnet {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_volume(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense channel-first array. Row-major, last axis fastest.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape))
    {
        validate();
        data_.assign(shape_volume(shape_), fill);
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data))
    {
        validate();
        if (data_.size() != shape_volume(shape_))
            throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                        " does not match shape " + shape_string(shape_));
    }

    static Tensor zeros(const Shape& shape) { return Tensor(shape); }
    static Tensor full(const Shape& shape, T value) { return Tensor(shape, value); }
    static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    auto begin() noexcept { return data_.begin(); }
    auto end() noexcept { return data_.end(); }
    auto begin() const noexcept { return data_.begin(); }
    auto end() const noexcept { return data_.end(); }

    /// Spatial extents (everything after the channel axis).
    Shape spatial() const { return Shape(shape_.begin() + 1, shape_.end()); }
    std::size_t channels() const { return shape_.at(0); }
    std::size_t channel_stride() const { return shape_.empty() ? 0 : data_.size() / shape_[0]; }

    std::span<T> channel(std::size_t c) { return {data_.data() + c * channel_stride(), channel_stride()}; }
    std::span<const T> channel(std::size_t c) const
    {
        return {data_.data() + c * channel_stride(), channel_stride()};
    }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    template <typename U>
    Tensor<U> cast() const
    {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

    Tensor reshaped(Shape shape) const
    {
        if (shape_volume(shape) != data_.size())
            throw std::invalid_argument("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        return Tensor(std::move(shape), data_);
    }

    bool all_finite() const
    {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    T max_abs() const
    {
        T m = 0;
        for (T v : data_) m = std::max(m, std::abs(v));
        return m;
    }

    bool operator==(const Tensor& other) const = default;

private:
    void validate() const
    {
        for (std::size_t e : shape_)
            if (e == 0) throw std::invalid_argument("tensor extents must be >= 1, got " + shape_string(shape_));
    }

    Shape shape_;
    std::vector<T> data_;
};

/// Spatial layout of a channel-first tensor with rank 2 or 3, embedded as depth x height x width.
/// 2D tensors get depth 1.
struct Grid {
    std::size_t rank = 0;
    std::size_t d = 1, h = 1, w = 1;

    std::size_t voxels() const noexcept { return d * h * w; }
    std::size_t extent(std::size_t axis) const { return rank == 2 ? (axis == 0 ? h : w) : (axis == 0 ? d : axis == 1 ? h : w); }
    Shape shape() const { return rank == 2 ? Shape{h, w} : Shape{d, h, w}; }
    bool operator==(const Grid&) const = default;

    static Grid of_spatial(const Shape& spatial)
    {
        if (spatial.size() == 2) return Grid{2, 1, spatial[0], spatial[1]};
        if (spatial.size() == 3) return Grid{3, spatial[0], spatial[1], spatial[2]};
        throw std::invalid_argument("spatial rank must be 2 or 3, got shape " + shape_string(spatial));
    }

    template <typename T>
    static Grid of(const Tensor<T>& t)
    {
        if (t.rank() < 3) throw std::invalid_argument("expected a channel-first 2D/3D tensor, got " + shape_string(t.shape()));
        return of_spatial(t.spatial());
    }

    Grid scaled_down(std::size_t k) const
    {
        Grid g = *this;
        g.h /= k;
        g.w /= k;
        if (rank == 3) g.d /= k;
        return g;
    }
    Grid scaled_up(std::size_t k) const
    {
        Grid g = *this;
        g.h *= k;
        g.w *= k;
        if (rank == 3) g.d *= k;
        return g;
    }
};

inline Shape with_channels(std::size_t channels, const Grid& grid)
{
    Shape s{channels};
    for (std::size_t e : grid.shape()) s.push_back(e);
    return s;
}

} // namespace lessnet
