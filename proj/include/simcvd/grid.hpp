#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "simcvd/error.hpp"

namespace simcvd {

/// Extent of a 3D grid. Slices are taken along the last axis (depth).
struct Shape3 {
    int nx = 0;
    int ny = 0;
    int nz = 0;

    [[nodiscard]] std::size_t voxels() const {
        return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * static_cast<std::size_t>(nz);
    }
    [[nodiscard]] std::size_t index(int x, int y, int z) const {
        return (static_cast<std::size_t>(x) * static_cast<std::size_t>(ny) + static_cast<std::size_t>(y)) *
                   static_cast<std::size_t>(nz) +
               static_cast<std::size_t>(z);
    }
    [[nodiscard]] bool contains(int x, int y, int z) const {
        return x >= 0 && y >= 0 && z >= 0 && x < nx && y < ny && z < nz;
    }
    [[nodiscard]] int operator[](int axis) const { return axis == 0 ? nx : (axis == 1 ? ny : nz); }
    [[nodiscard]] std::string str() const;

    friend bool operator==(const Shape3&, const Shape3&) = default;
};

using Spacing = std::array<double, 3>;

/// Dense 3D grid, z fastest.
template <class T>
class Grid3 {
public:
    Grid3() = default;
    explicit Grid3(Shape3 shape, T fill = T{}) : shape_(shape), data_(shape.voxels(), fill) {}
    Grid3(Shape3 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
        if (data_.size() != shape_.voxels()) {
            throw ShapeError("grid data size " + std::to_string(data_.size()) + " does not match shape " +
                             shape_.str());
        }
    }

    [[nodiscard]] const Shape3& shape() const { return shape_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }
    [[nodiscard]] bool empty() const { return data_.empty(); }

    T& operator()(int x, int y, int z) { return data_[shape_.index(x, y, z)]; }
    const T& operator()(int x, int y, int z) const { return data_[shape_.index(x, y, z)]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    [[nodiscard]] T* data() { return data_.data(); }
    [[nodiscard]] const T* data() const { return data_.data(); }
    [[nodiscard]] std::vector<T>& values() { return data_; }
    [[nodiscard]] const std::vector<T>& values() const { return data_; }

    auto begin() { return data_.begin(); }
    auto end() { return data_.end(); }
    auto begin() const { return data_.begin(); }
    auto end() const { return data_.end(); }

    friend bool operator==(const Grid3&, const Grid3&) = default;

private:
    Shape3 shape_{};
    std::vector<T> data_;
};

using RealGrid = Grid3<double>;
using MaskGrid = Grid3<std::uint8_t>;

inline void require_same_shape(const Shape3& a, const Shape3& b, const std::string& what) {
    if (!(a == b)) {
        throw ShapeError(what + ": shape mismatch " + a.str() + " vs " + b.str());
    }
}

inline std::string Shape3::str() const {
    return "(" + std::to_string(nx) + "," + std::to_string(ny) + "," + std::to_string(nz) + ")";
}

}  // namespace simcvd
