#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "uncd/errors.hpp"
#include "uncd/parallel.hpp"
#include "uncd/tensor.hpp"

namespace uncd {

enum class Mode { train, eval };

/// Learned per-channel affine plus running statistics. Running stats are
/// updated only in train mode; eval mode is a pure function of them.
template <typename T>
struct BatchNormState {
    std::vector<T> gamma;
    std::vector<T> beta;
    std::vector<T> running_mean;
    std::vector<T> running_var;
    T momentum = T(0.1);
    T epsilon = T(1e-5);

    BatchNormState() = default;
    explicit BatchNormState(std::size_t channels)
        : gamma(channels, T(1)), beta(channels, T(0)), running_mean(channels, T(0)), running_var(channels, T(1)) {}

    std::size_t channels() const { return gamma.size(); }
};

/// Backward-pass cache: normalized activations and the per-channel batch
/// inverse standard deviation.
template <typename T>
struct BatchNormCache {
    Tensor<T> xhat;
    std::vector<T> inv_std;
    std::size_t count = 0;  // N*H*W per channel
};

template <typename T>
void check_bn_channels(const char* op, const Tensor<T>& x, const BatchNormState<T>& st) {
    if (x.channels() != st.channels())
        throw DimensionError(std::string(op) + ": channel axis C=" + std::to_string(x.channels()) +
                             " does not match state channels=" + std::to_string(st.channels()));
}

/// Eval-mode normalization: a pure function of the running statistics.
template <typename T>
Tensor<T> batchnorm_eval(const Tensor<T>& x, const BatchNormState<T>& st) {
    check_bn_channels("batchnorm", x, st);
    const std::size_t N = x.batch(), C = x.channels(), H = x.height(), W = x.width();
    Tensor<T> y(x.shape);
    parallel_for(C, [&](std::size_t c0, std::size_t c1) {
        for (std::size_t c = c0; c < c1; ++c) {
            const T mean = st.running_mean[c];
            const T inv = T(1) / std::sqrt(st.running_var[c] + st.epsilon);
            const T g = st.gamma[c], b = st.beta[c];
            for (std::size_t n = 0; n < N; ++n) {
                const T* in = x.plane(n, c);
                T* out = y.plane(n, c);
                for (std::size_t i = 0; i < H * W; ++i) out[i] = g * ((in[i] - mean) * inv) + b;
            }
        }
    });
    return y;
}

/// Train mode normalizes with batch statistics (mean and biased variance per
/// channel, accumulated in double) and updates the running statistics with an
/// exponential moving average; eval mode normalizes with the running stats.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, BatchNormState<T>& st, Mode mode, BatchNormCache<T>* cache = nullptr) {
    if (mode == Mode::eval) return batchnorm_eval(x, st);
    check_bn_channels("batchnorm", x, st);
    const std::size_t N = x.batch(), C = x.channels(), H = x.height(), W = x.width();
    const std::size_t m = N * H * W;
    Tensor<T> y(x.shape);

    if (m == 0) throw DataError("batchnorm: empty batch*spatial extent in train mode");
    if (cache) {
        cache->xhat = Tensor<T>(x.shape);
        cache->inv_std.assign(C, T(0));
        cache->count = m;
    }
    parallel_for(C, [&](std::size_t c0, std::size_t c1) {
        for (std::size_t c = c0; c < c1; ++c) {
            double sum = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
                const T* in = x.plane(n, c);
                for (std::size_t i = 0; i < H * W; ++i) sum += static_cast<double>(in[i]);
            }
            const double mean = sum / static_cast<double>(m);
            double sq = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
                const T* in = x.plane(n, c);
                for (std::size_t i = 0; i < H * W; ++i) {
                    const double d = static_cast<double>(in[i]) - mean;
                    sq += d * d;
                }
            }
            const double var = sq / static_cast<double>(m);
            const T meanT = static_cast<T>(mean);
            const T invT = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(st.epsilon)));
            const T g = st.gamma[c], b = st.beta[c];
            for (std::size_t n = 0; n < N; ++n) {
                const T* in = x.plane(n, c);
                T* out = y.plane(n, c);
                T* xh = cache ? cache->xhat.plane(n, c) : nullptr;
                for (std::size_t i = 0; i < H * W; ++i) {
                    const T v = (in[i] - meanT) * invT;
                    if (xh) xh[i] = v;
                    out[i] = g * v + b;
                }
            }
            if (cache) cache->inv_std[c] = invT;
            const double var_running = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
            st.running_mean[c] = (T(1) - st.momentum) * st.running_mean[c] + st.momentum * meanT;
            st.running_var[c] = (T(1) - st.momentum) * st.running_var[c] + st.momentum * static_cast<T>(var_running);
        }
    });
    return y;
}

template <typename T>
struct BatchNormGrads {
    Tensor<T> input;
    std::vector<T> gamma;
    std::vector<T> beta;
};

/// Train-mode backward through the batch statistics.
template <typename T>
BatchNormGrads<T> batchnorm_grad(const BatchNormCache<T>& cache, const BatchNormState<T>& st, const Tensor<T>& up) {
    if (up.shape != cache.xhat.shape)
        throw DimensionError("batchnorm_grad: upstream shape " + shape_str(up.shape) + " expected " +
                             shape_str(cache.xhat.shape));
    const std::size_t N = up.batch(), C = up.channels(), H = up.height(), W = up.width();
    const std::size_t m = cache.count;

    BatchNormGrads<T> g;
    g.input = Tensor<T>(up.shape);
    g.gamma.assign(C, T(0));
    g.beta.assign(C, T(0));

    parallel_for(C, [&](std::size_t c0, std::size_t c1) {
        for (std::size_t c = c0; c < c1; ++c) {
            double sum_up = 0.0, sum_up_xhat = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
                const T* u = up.plane(n, c);
                const T* xh = cache.xhat.plane(n, c);
                for (std::size_t i = 0; i < H * W; ++i) {
                    sum_up += static_cast<double>(u[i]);
                    sum_up_xhat += static_cast<double>(u[i]) * static_cast<double>(xh[i]);
                }
            }
            g.beta[c] = static_cast<T>(sum_up);
            g.gamma[c] = static_cast<T>(sum_up_xhat);
            const T mean_up = static_cast<T>(sum_up / static_cast<double>(m));
            const T mean_up_xhat = static_cast<T>(sum_up_xhat / static_cast<double>(m));
            const T scale = st.gamma[c] * cache.inv_std[c];
            for (std::size_t n = 0; n < N; ++n) {
                const T* u = up.plane(n, c);
                const T* xh = cache.xhat.plane(n, c);
                T* gi = g.input.plane(n, c);
                for (std::size_t i = 0; i < H * W; ++i) {
                    gi[i] = scale * (u[i] - mean_up - xh[i] * mean_up_xhat);
                }
            }
        }
    });
    return g;
}

}  // namespace uncd
