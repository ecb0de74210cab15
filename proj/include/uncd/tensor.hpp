#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "uncd/errors.hpp"

namespace uncd {

/// Dense rank-4 array in (batch, channel, height, width) row-major order.
/// The universal carrier for activations, weights and gradients.
template <typename T = float>
struct Tensor {
    std::array<std::size_t, 4> shape{0, 0, 0, 0};
    std::vector<T> data;

    Tensor() = default;
    Tensor(std::size_t n, std::size_t c, std::size_t h, std::size_t w)
        : shape{n, c, h, w}, data(n * c * h * w, T(0)) {}
    explicit Tensor(const std::array<std::size_t, 4>& s)
        : shape(s), data(s[0] * s[1] * s[2] * s[3], T(0)) {}

    std::size_t batch() const { return shape[0]; }
    std::size_t channels() const { return shape[1]; }
    std::size_t height() const { return shape[2]; }
    std::size_t width() const { return shape[3]; }
    std::size_t size() const { return data.size(); }

    T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    const T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }

    /// Pointer to the (n, c) spatial plane, h*w contiguous values.
    T* plane(std::size_t n, std::size_t c) {
        return data.data() + (n * shape[1] + c) * shape[2] * shape[3];
    }
    const T* plane(std::size_t n, std::size_t c) const {
        return data.data() + (n * shape[1] + c) * shape[2] * shape[3];
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

template <typename T>
Tensor<T> zeros_like(const Tensor<T>& t) {
    return Tensor<T>(t.shape);
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
    for (const T v : t.data) {
        if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
}

/// Copy-converts the element type (e.g. a float model to a double mirror).
template <typename U, typename T>
Tensor<U> tensor_cast(const Tensor<T>& t) {
    Tensor<U> out(t.shape);
    for (std::size_t i = 0; i < t.data.size(); ++i) out.data[i] = static_cast<U>(t.data[i]);
    return out;
}

inline std::string shape_str(const std::array<std::size_t, 4>& s) {
    return "(" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]) +
           "," + std::to_string(s[3]) + ")";
}

/// Per-pixel class indices for a batch of images.
struct ClassMap {
    std::size_t batch = 0, height = 0, width = 0;
    std::vector<std::uint8_t> v;

    ClassMap() = default;
    ClassMap(std::size_t n, std::size_t h, std::size_t w) : batch(n), height(h), width(w), v(n * h * w, 0) {}

    std::uint8_t& at(std::size_t n, std::size_t y, std::size_t x) {
        return v[(n * height + y) * width + x];
    }
    std::uint8_t at(std::size_t n, std::size_t y, std::size_t x) const {
        return v[(n * height + y) * width + x];
    }
    std::size_t size() const { return v.size(); }
};

/// Per-pixel boolean mask (0/1) for a batch of images.
struct BoolMask {
    std::size_t batch = 0, height = 0, width = 0;
    std::vector<std::uint8_t> v;

    BoolMask() = default;
    BoolMask(std::size_t n, std::size_t h, std::size_t w) : batch(n), height(h), width(w), v(n * h * w, 0) {}

    std::uint8_t& at(std::size_t n, std::size_t y, std::size_t x) {
        return v[(n * height + y) * width + x];
    }
    std::uint8_t at(std::size_t n, std::size_t y, std::size_t x) const {
        return v[(n * height + y) * width + x];
    }
    std::size_t size() const { return v.size(); }
    std::size_t popcount() const {
        std::size_t c = 0;
        for (auto b : v) c += b ? 1 : 0;
        return c;
    }
};

}  // namespace uncd
