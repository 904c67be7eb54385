#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "brainunet/error.hpp"

namespace brainunet {

/// Spatial extent of a volume, listed in file axis order (i, j, k).
/// Voxel storage is row-major over (x, y, z): z varies fastest.
struct Dims3 {
    std::int64_t x = 0;
    std::int64_t y = 0;
    std::int64_t z = 0;

    constexpr std::int64_t count() const { return x * y * z; }
    constexpr std::int64_t operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
    constexpr std::int64_t& operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }
    constexpr std::int64_t index(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return (i * y + j) * z + k;
    }
    friend constexpr bool operator==(const Dims3&, const Dims3&) = default;

    static constexpr Dims3 cube(std::int64_t n) { return {n, n, n}; }
};

inline std::string to_string(const Dims3& d) {
    std::ostringstream os;
    os << d.x << "x" << d.y << "x" << d.z;
    return os.str();
}

/// Dense row-major tensor with value semantics.
///
/// Feature maps use rank 4, laid out as [channels, x, y, z].
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> shape, T fill = T{}) : shape_(std::move(shape)) {
        for (auto d : shape_) {
            if (d < 0) throw ShapeError("negative tensor dimension");
        }
        data_.assign(static_cast<std::size_t>(element_count(shape_)), fill);
    }
    Tensor(std::int64_t channels, Dims3 spatial, T fill = T{})
        : Tensor(std::vector<std::int64_t>{channels, spatial.x, spatial.y, spatial.z}, fill) {}

    const std::vector<std::int64_t>& shape() const { return shape_; }
    std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t rank() const { return shape_.size(); }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // Rank-4 helpers.
    std::int64_t channels() const { return shape_.at(0); }
    Dims3 spatial() const {
        if (shape_.size() != 4) throw ShapeError("expected a rank-4 feature map");
        return {shape_[1], shape_[2], shape_[3]};
    }
    std::int64_t voxels() const { return shape_.size() == 4 ? shape_[1] * shape_[2] * shape_[3] : size(); }
    T* channel(std::int64_t c) { return data_.data() + c * voxels(); }
    const T* channel(std::int64_t c) const { return data_.data() + c * voxels(); }
    T& at(std::int64_t c, std::int64_t i, std::int64_t j, std::int64_t k) {
        return data_[static_cast<std::size_t>(((c * shape_[1] + i) * shape_[2] + j) * shape_[3] + k)];
    }
    const T& at(std::int64_t c, std::int64_t i, std::int64_t j, std::int64_t k) const {
        return data_[static_cast<std::size_t>(((c * shape_[1] + i) * shape_[2] + j) * shape_[3] + k)];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
        return out;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

    static std::int64_t element_count(const std::vector<std::int64_t>& shape) {
        return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
    }

private:
    std::vector<std::int64_t> shape_;
    std::vector<T> data_;
};

inline std::string shape_string(const std::vector<std::int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

}  // namespace brainunet
