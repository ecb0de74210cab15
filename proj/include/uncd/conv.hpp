#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "uncd/errors.hpp"
#include "uncd/parallel.hpp"
#include "uncd/tensor.hpp"

namespace uncd {

/// Geometry of a (de)convolution. For a convolution the output extent of an
/// input extent n is m = floor((n - k + 2p) / s) + 1; for a deconvolution it
/// is m = (n - 1) * s + k.
struct ConvSpec {
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;

    std::size_t out_extent(std::size_t n) const {
        if (kernel == 0 || stride == 0) throw ConfigError("ConvSpec: kernel and stride must be positive");
        if (n + 2 * padding < kernel)
            throw DimensionError("conv output extent: input extent " + std::to_string(n) + " + 2*padding " +
                                 std::to_string(padding) + " smaller than kernel " + std::to_string(kernel));
        return (n - kernel + 2 * padding) / stride + 1;
    }

    std::size_t deconv_out_extent(std::size_t n) const {
        if (n == 0) throw DimensionError("deconv output extent: input extent is zero");
        return (n - 1) * stride + kernel;
    }
};

namespace detail {

/// Inclusive output-index range [lo, hi] such that i*stride + koff - pad lands
/// inside [0, in_extent); empty() when no index qualifies.
struct LoopRange {
    long lo = 0, hi = -1;
    bool empty() const { return lo > hi; }
};

inline LoopRange valid_out_range(long in_extent, long out_extent, long stride, long pad, long koff) {
    LoopRange r;
    r.lo = koff < pad ? (pad - koff + stride - 1) / stride : 0;
    const long num = in_extent - 1 + pad - koff;
    if (num < 0) return LoopRange{};  // empty
    r.hi = num / stride;
    if (r.hi >= out_extent) r.hi = out_extent - 1;
    return r;
}

inline void check_conv_args(const char* op, const std::array<std::size_t, 4>& xs,
                            const std::array<std::size_t, 4>& ws, std::size_t bias_size,
                            const ConvSpec& spec, bool transposed) {
    const std::size_t expect_w0 = transposed ? spec.in_channels : spec.out_channels;
    const std::size_t expect_w1 = transposed ? spec.out_channels : spec.in_channels;
    if (ws[0] != expect_w0 || ws[1] != expect_w1 || ws[2] != spec.kernel || ws[3] != spec.kernel)
        throw DimensionError(std::string(op) + ": weight shape " + shape_str(ws) + " does not match spec (" +
                             std::to_string(expect_w0) + "," + std::to_string(expect_w1) + "," +
                             std::to_string(spec.kernel) + "," + std::to_string(spec.kernel) + ")");
    if (xs[1] != spec.in_channels)
        throw DimensionError(std::string(op) + ": input channel axis C=" + std::to_string(xs[1]) +
                             " does not match spec.in_channels=" + std::to_string(spec.in_channels));
    if (bias_size != spec.out_channels)
        throw DimensionError(std::string(op) + ": bias length " + std::to_string(bias_size) +
                             " does not match out_channels=" + std::to_string(spec.out_channels));
}

}  // namespace detail

/// Direct 2-D convolution with zero padding. Each output element accumulates
/// its windowed inner product in fixed (ci, ky, kx) order, then adds the bias;
/// out-of-bounds (padding) taps are skipped, never added as zeros.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const std::vector<T>& bias, const ConvSpec& spec) {
    detail::check_conv_args("conv2d", x.shape, w.shape, bias.size(), spec, false);
    const std::size_t N = x.batch(), C = x.channels(), H = x.height(), W = x.width();
    const std::size_t Ho = spec.out_extent(H), Wo = spec.out_extent(W);
    const long k = static_cast<long>(spec.kernel), s = static_cast<long>(spec.stride),
               p = static_cast<long>(spec.padding);

    Tensor<T> y(N, spec.out_channels, Ho, Wo);
    parallel_for(N * spec.out_channels, [&](std::size_t b0, std::size_t b1) {
        for (std::size_t idx = b0; idx < b1; ++idx) {
            const std::size_t n = idx / spec.out_channels;
            const std::size_t co = idx % spec.out_channels;
            T* out = y.plane(n, co);
            for (std::size_t ci = 0; ci < C; ++ci) {
                const T* in = x.plane(n, ci);
                const T* wk = w.plane(co, ci);
                for (long ky = 0; ky < k; ++ky) {
                    const auto rh = detail::valid_out_range(static_cast<long>(H), static_cast<long>(Ho), s, p, ky);
                    if (rh.empty()) continue;
                    for (long kx = 0; kx < k; ++kx) {
                        const auto rw = detail::valid_out_range(static_cast<long>(W), static_cast<long>(Wo), s, p, kx);
                        if (rw.empty()) continue;
                        const T wv = wk[ky * k + kx];
                        for (long oh = rh.lo; oh <= rh.hi; ++oh) {
                            const T* inrow = in + (oh * s + ky - p) * static_cast<long>(W);
                            T* outrow = out + oh * static_cast<long>(Wo);
                            const long d = kx - p;
                            if (s == 1) {
                                for (long ow = rw.lo; ow <= rw.hi; ++ow) outrow[ow] += wv * inrow[ow + d];
                            } else {
                                for (long ow = rw.lo; ow <= rw.hi; ++ow) outrow[ow] += wv * inrow[ow * s + d];
                            }
                        }
                    }
                }
            }
            const T bv = bias[co];
            for (std::size_t i = 0; i < Ho * Wo; ++i) out[i] += bv;
        }
    });
    return y;
}

template <typename T>
struct Conv2dGrads {
    Tensor<T> input;
    Tensor<T> weight;
    std::vector<T> bias;
};

template <typename T>
Conv2dGrads<T> conv2d_grad(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& spec, const Tensor<T>& up) {
    detail::check_conv_args("conv2d_grad", x.shape, w.shape, spec.out_channels, spec, false);
    const std::size_t N = x.batch(), C = x.channels(), H = x.height(), W = x.width();
    const std::size_t Ho = spec.out_extent(H), Wo = spec.out_extent(W);
    if (up.shape != std::array<std::size_t, 4>{N, spec.out_channels, Ho, Wo})
        throw DimensionError("conv2d_grad: upstream shape " + shape_str(up.shape) + " expected " +
                             shape_str({N, spec.out_channels, Ho, Wo}));
    const long k = static_cast<long>(spec.kernel), s = static_cast<long>(spec.stride),
               p = static_cast<long>(spec.padding);
    const std::size_t Co = spec.out_channels;

    Conv2dGrads<T> g;
    g.input = Tensor<T>(x.shape);
    g.weight = Tensor<T>(w.shape);
    g.bias.assign(Co, T(0));

    // Input gradient: scatter each upstream element through the kernel back
    // into the (n, ci) plane owned by the current task.
    parallel_for(N * C, [&](std::size_t b0, std::size_t b1) {
        for (std::size_t idx = b0; idx < b1; ++idx) {
            const std::size_t n = idx / C;
            const std::size_t ci = idx % C;
            T* ig = g.input.plane(n, ci);
            for (std::size_t co = 0; co < Co; ++co) {
                const T* u = up.plane(n, co);
                const T* wk = w.plane(co, ci);
                for (long ky = 0; ky < k; ++ky) {
                    const auto rh = detail::valid_out_range(static_cast<long>(H), static_cast<long>(Ho), s, p, ky);
                    if (rh.empty()) continue;
                    for (long kx = 0; kx < k; ++kx) {
                        const auto rw = detail::valid_out_range(static_cast<long>(W), static_cast<long>(Wo), s, p, kx);
                        if (rw.empty()) continue;
                        const T wv = wk[ky * k + kx];
                        for (long oh = rh.lo; oh <= rh.hi; ++oh) {
                            T* igrow = ig + (oh * s + ky - p) * static_cast<long>(W);
                            const T* urow = u + oh * static_cast<long>(Wo);
                            const long d = kx - p;
                            if (s == 1) {
                                for (long ow = rw.lo; ow <= rw.hi; ++ow) igrow[ow + d] += wv * urow[ow];
                            } else {
                                for (long ow = rw.lo; ow <= rw.hi; ++ow) igrow[ow * s + d] += wv * urow[ow];
                            }
                        }
                    }
                }
            }
        }
    });

    // Weight gradient: for each (co, ci) pair keep the k*k accumulators live
    // across the (n, oh, ow) sweep.
    parallel_for(Co * C, [&](std::size_t b0, std::size_t b1) {
        std::vector<T> acc(static_cast<std::size_t>(k) * k);
        for (std::size_t idx = b0; idx < b1; ++idx) {
            const std::size_t co = idx / C;
            const std::size_t ci = idx % C;
            std::fill(acc.begin(), acc.end(), T(0));
            for (std::size_t n = 0; n < N; ++n) {
                const T* in = x.plane(n, ci);
                const T* u = up.plane(n, co);
                for (long ky = 0; ky < k; ++ky) {
                    const auto rh = detail::valid_out_range(static_cast<long>(H), static_cast<long>(Ho), s, p, ky);
                    if (rh.empty()) continue;
                    for (long kx = 0; kx < k; ++kx) {
                        const auto rw = detail::valid_out_range(static_cast<long>(W), static_cast<long>(Wo), s, p, kx);
                        if (rw.empty()) continue;
                        T a = acc[ky * k + kx];
                        for (long oh = rh.lo; oh <= rh.hi; ++oh) {
                            const T* inrow = in + (oh * s + ky - p) * static_cast<long>(W);
                            const T* urow = u + oh * static_cast<long>(Wo);
                            const long d = kx - p;
                            if (s == 1) {
                                for (long ow = rw.lo; ow <= rw.hi; ++ow) a += inrow[ow + d] * urow[ow];
                            } else {
                                for (long ow = rw.lo; ow <= rw.hi; ++ow) a += inrow[ow * s + d] * urow[ow];
                            }
                        }
                        acc[ky * k + kx] = a;
                    }
                }
            }
            T* wg = g.weight.plane(co, ci);
            for (long j = 0; j < k * k; ++j) wg[j] = acc[j];
        }
    });

    // Bias gradient: plain sum of upstream per output channel.
    parallel_for(Co, [&](std::size_t b0, std::size_t b1) {
        for (std::size_t co = b0; co < b1; ++co) {
            T a = T(0);
            for (std::size_t n = 0; n < N; ++n) {
                const T* u = up.plane(n, co);
                for (std::size_t i = 0; i < Ho * Wo; ++i) a += u[i];
            }
            g.bias[co] = a;
        }
    });
    return g;
}

/// Transposed convolution ("deconvolution"): the forward pass is the transpose
/// of conv2d's backward pass. Weight layout is (in_channels, out_channels, k, k).
/// Output extent m = (n - 1) * s + k; padding must be 0.
template <typename T>
Tensor<T> deconv2d(const Tensor<T>& x, const Tensor<T>& w, const std::vector<T>& bias, const ConvSpec& spec) {
    if (spec.padding != 0) throw ConfigError("deconv2d: only padding 0 is supported");
    detail::check_conv_args("deconv2d", x.shape, w.shape, bias.size(), spec, true);
    const std::size_t N = x.batch(), C = x.channels(), H = x.height(), W = x.width();
    const std::size_t Ho = spec.deconv_out_extent(H), Wo = spec.deconv_out_extent(W);
    const long k = static_cast<long>(spec.kernel), s = static_cast<long>(spec.stride);
    const std::size_t Co = spec.out_channels;

    Tensor<T> y(N, Co, Ho, Wo);
    parallel_for(N * Co, [&](std::size_t b0, std::size_t b1) {
        for (std::size_t idx = b0; idx < b1; ++idx) {
            const std::size_t n = idx / Co;
            const std::size_t co = idx % Co;
            T* out = y.plane(n, co);
            for (std::size_t ci = 0; ci < C; ++ci) {
                const T* in = x.plane(n, ci);
                const T* wk = w.plane(ci, co);
                for (long ky = 0; ky < k; ++ky) {
                    for (long kx = 0; kx < k; ++kx) {
                        const T wv = wk[ky * k + kx];
                        for (std::size_t ih = 0; ih < H; ++ih) {
                            const T* inrow = in + ih * W;
                            T* outrow = out + (static_cast<long>(ih) * s + ky) * static_cast<long>(Wo) + kx;
                            for (std::size_t iw = 0; iw < W; ++iw) outrow[iw * s] += wv * inrow[iw];
                        }
                    }
                }
            }
            const T bv = bias[co];
            for (std::size_t i = 0; i < Ho * Wo; ++i) out[i] += bv;
        }
    });
    return y;
}

template <typename T>
Conv2dGrads<T> deconv2d_grad(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& spec, const Tensor<T>& up) {
    if (spec.padding != 0) throw ConfigError("deconv2d_grad: only padding 0 is supported");
    detail::check_conv_args("deconv2d_grad", x.shape, w.shape, spec.out_channels, spec, true);
    const std::size_t N = x.batch(), C = x.channels(), H = x.height(), W = x.width();
    const std::size_t Ho = spec.deconv_out_extent(H), Wo = spec.deconv_out_extent(W);
    if (up.shape != std::array<std::size_t, 4>{N, spec.out_channels, Ho, Wo})
        throw DimensionError("deconv2d_grad: upstream shape " + shape_str(up.shape) + " expected " +
                             shape_str({N, spec.out_channels, Ho, Wo}));
    const long k = static_cast<long>(spec.kernel), s = static_cast<long>(spec.stride);
    const std::size_t Co = spec.out_channels;

    Conv2dGrads<T> g;
    g.input = Tensor<T>(x.shape);
    g.weight = Tensor<T>(w.shape);
    g.bias.assign(Co, T(0));

    // Input gradient is an ordinary (valid) convolution of the upstream with
    // the same kernel: every tap lands in bounds by construction.
    parallel_for(N * C, [&](std::size_t b0, std::size_t b1) {
        for (std::size_t idx = b0; idx < b1; ++idx) {
            const std::size_t n = idx / C;
            const std::size_t ci = idx % C;
            T* ig = g.input.plane(n, ci);
            for (std::size_t co = 0; co < Co; ++co) {
                const T* u = up.plane(n, co);
                const T* wk = w.plane(ci, co);
                for (long ky = 0; ky < k; ++ky) {
                    for (long kx = 0; kx < k; ++kx) {
                        const T wv = wk[ky * k + kx];
                        for (std::size_t ih = 0; ih < H; ++ih) {
                            T* igrow = ig + ih * W;
                            const T* urow = u + (static_cast<long>(ih) * s + ky) * static_cast<long>(Wo) + kx;
                            for (std::size_t iw = 0; iw < W; ++iw) igrow[iw] += wv * urow[iw * s];
                        }
                    }
                }
            }
        }
    });

    parallel_for(C * Co, [&](std::size_t b0, std::size_t b1) {
        std::vector<T> acc(static_cast<std::size_t>(k) * k);
        for (std::size_t idx = b0; idx < b1; ++idx) {
            const std::size_t ci = idx / Co;
            const std::size_t co = idx % Co;
            std::fill(acc.begin(), acc.end(), T(0));
            for (std::size_t n = 0; n < N; ++n) {
                const T* in = x.plane(n, ci);
                const T* u = up.plane(n, co);
                for (long ky = 0; ky < k; ++ky) {
                    for (long kx = 0; kx < k; ++kx) {
                        T a = acc[ky * k + kx];
                        for (std::size_t ih = 0; ih < H; ++ih) {
                            const T* inrow = in + ih * W;
                            const T* urow = u + (static_cast<long>(ih) * s + ky) * static_cast<long>(Wo) + kx;
                            for (std::size_t iw = 0; iw < W; ++iw) a += inrow[iw] * urow[iw * s];
                        }
                        acc[ky * k + kx] = a;
                    }
                }
            }
            T* wg = g.weight.plane(ci, co);
            for (long j = 0; j < k * k; ++j) wg[j] = acc[j];
        }
    });

    parallel_for(Co, [&](std::size_t b0, std::size_t b1) {
        for (std::size_t co = b0; co < b1; ++co) {
            T a = T(0);
            for (std::size_t n = 0; n < N; ++n) {
                const T* u = up.plane(n, co);
                for (std::size_t i = 0; i < Ho * Wo; ++i) a += u[i];
            }
            g.bias[co] = a;
        }
    });
    return g;
}

}  // namespace uncd
