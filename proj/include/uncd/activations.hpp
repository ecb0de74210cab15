#pragma once

#include <cmath>
#include <string>

#include "uncd/errors.hpp"
#include "uncd/parallel.hpp"
#include "uncd/tensor.hpp"

namespace uncd {

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.2)) {
    Tensor<T> y(x.shape);
    parallel_for(x.size(), [&](std::size_t b0, std::size_t b1) {
        for (std::size_t i = b0; i < b1; ++i) {
            const T v = x.data[i];
            y.data[i] = v > T(0) ? v : slope * v;
        }
    }, 4096);
    return y;
}

/// Gradient uses the negative-branch slope at exactly x == 0.
template <typename T>
Tensor<T> leaky_relu_grad(const Tensor<T>& x, const Tensor<T>& up, T slope = T(0.2)) {
    if (up.shape != x.shape)
        throw DimensionError("leaky_relu_grad: upstream shape " + shape_str(up.shape) + " expected " +
                             shape_str(x.shape));
    Tensor<T> g(x.shape);
    parallel_for(x.size(), [&](std::size_t b0, std::size_t b1) {
        for (std::size_t i = b0; i < b1; ++i) {
            g.data[i] = up.data[i] * (x.data[i] > T(0) ? T(1) : slope);
        }
    }, 4096);
    return g;
}

/// Per-pixel exp-normalization across the channel axis with max subtraction.
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& x) {
    const std::size_t N = x.batch(), C = x.channels(), H = x.height(), W = x.width();
    if (C == 0) throw DimensionError("softmax_channels: channel axis C=0");
    Tensor<T> y(x.shape);
    const std::size_t hw = H * W;
    parallel_for(N * hw, [&](std::size_t b0, std::size_t b1) {
        for (std::size_t idx = b0; idx < b1; ++idx) {
            const std::size_t n = idx / hw;
            const std::size_t pix = idx % hw;
            const T* in = x.data.data() + n * C * hw + pix;
            T* out = y.data.data() + n * C * hw + pix;
            T mx = in[0];
            for (std::size_t c = 1; c < C; ++c) {
                const T v = in[c * hw];
                if (v > mx) mx = v;
            }
            T total = T(0);
            for (std::size_t c = 0; c < C; ++c) {
                const T e = std::exp(in[c * hw] - mx);
                out[c * hw] = e;
                total += e;
            }
            for (std::size_t c = 0; c < C; ++c) out[c * hw] /= total;
        }
    }, 1024);
    return y;
}

/// Backward of softmax_channels given its own output.
template <typename T>
Tensor<T> softmax_channels_grad(const Tensor<T>& probs, const Tensor<T>& up) {
    if (up.shape != probs.shape)
        throw DimensionError("softmax_channels_grad: upstream shape " + shape_str(up.shape) + " expected " +
                             shape_str(probs.shape));
    const std::size_t N = probs.batch(), C = probs.channels(), H = probs.height(), W = probs.width();
    Tensor<T> g(probs.shape);
    const std::size_t hw = H * W;
    parallel_for(N * hw, [&](std::size_t b0, std::size_t b1) {
        for (std::size_t idx = b0; idx < b1; ++idx) {
            const std::size_t n = idx / hw;
            const std::size_t pix = idx % hw;
            const T* p = probs.data.data() + n * C * hw + pix;
            const T* u = up.data.data() + n * C * hw + pix;
            T* out = g.data.data() + n * C * hw + pix;
            T dot = T(0);
            for (std::size_t c = 0; c < C; ++c) dot += u[c * hw] * p[c * hw];
            for (std::size_t c = 0; c < C; ++c) out[c * hw] = p[c * hw] * (u[c * hw] - dot);
        }
    }, 1024);
    return g;
}

template <typename T>
struct CrossEntropyResult {
    double loss = 0.0;
    Tensor<T> probs_grad;
};

inline constexpr double kProbFloor = 1e-12;

/// Mean over batch and pixels of -log(max(p_true, 1e-12)). The scalar loss is
/// reduced in double; the gradient with respect to the probability input is
/// -1/(p*count) at the true class (zero where the floor clamps).
template <typename T>
CrossEntropyResult<T> cross_entropy_loss(const Tensor<T>& probs, const ClassMap& targets) {
    const std::size_t N = probs.batch(), C = probs.channels(), H = probs.height(), W = probs.width();
    if (targets.batch != N || targets.height != H || targets.width != W)
        throw DimensionError("cross_entropy_loss: target map (" + std::to_string(targets.batch) + "," +
                             std::to_string(targets.height) + "," + std::to_string(targets.width) +
                             ") does not match probs " + shape_str(probs.shape));
    const std::size_t count = N * H * W;
    if (count == 0) throw DataError("cross_entropy_loss: empty input");

    CrossEntropyResult<T> r;
    r.probs_grad = Tensor<T>(probs.shape);
    const std::size_t hw = H * W;
    double acc = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
        const T* pb = probs.data.data() + n * C * hw;
        T* gb = r.probs_grad.data.data() + n * C * hw;
        const std::uint8_t* tb = targets.v.data() + n * hw;
        for (std::size_t pix = 0; pix < hw; ++pix) {
            const std::uint8_t t = tb[pix];
            if (t >= C)
                throw DataError("cross_entropy_loss: class index " + std::to_string(int(t)) +
                                " out of range for " + std::to_string(C) + " classes");
            const double p = static_cast<double>(pb[t * hw + pix]);
            const double pf = p > kProbFloor ? p : kProbFloor;
            acc += -std::log(pf);
            if (p > kProbFloor) {
                gb[t * hw + pix] = static_cast<T>(-1.0 / (p * static_cast<double>(count)));
            }
        }
    }
    r.loss = acc / static_cast<double>(count);
    return r;
}

}  // namespace uncd
