#pragma once

#include <cstdint>
#include <limits>
#include <string>

#include "uncd/errors.hpp"
#include "uncd/parallel.hpp"
#include "uncd/tensor.hpp"

namespace uncd {

/// Max-pooling result plus, for every output element, the flat index of the
/// input element that won its window. Ties break to the lowest flat index.
template <typename T>
struct PoolRecord {
    Tensor<T> output;
    std::vector<std::uint32_t> argmax;
    std::array<std::size_t, 4> in_shape{0, 0, 0, 0};
    std::size_t kernel = 3;
    std::size_t stride = 2;
};

template <typename T>
PoolRecord<T> maxpool(const Tensor<T>& x, std::size_t k = 3, std::size_t s = 2) {
    const std::size_t N = x.batch(), C = x.channels(), H = x.height(), W = x.width();
    if (H < k || W < k)
        throw DimensionError("maxpool: spatial extent (" + std::to_string(H) + "," + std::to_string(W) +
                             ") smaller than kernel " + std::to_string(k));
    if (x.size() > std::numeric_limits<std::uint32_t>::max())
        throw DimensionError("maxpool: tensor too large for 32-bit argmax indices");
    const std::size_t Ho = (H - k) / s + 1, Wo = (W - k) / s + 1;

    PoolRecord<T> r;
    r.output = Tensor<T>(N, C, Ho, Wo);
    r.argmax.assign(N * C * Ho * Wo, 0);
    r.in_shape = x.shape;
    r.kernel = k;
    r.stride = s;

    parallel_for(N * C, [&](std::size_t b0, std::size_t b1) {
        for (std::size_t idx = b0; idx < b1; ++idx) {
            const std::size_t n = idx / C, c = idx % C;
            const T* in = x.plane(n, c);
            const std::size_t plane_base = (n * C + c) * H * W;
            T* out = r.output.plane(n, c);
            std::uint32_t* am = r.argmax.data() + (n * C + c) * Ho * Wo;
            for (std::size_t oh = 0; oh < Ho; ++oh) {
                for (std::size_t ow = 0; ow < Wo; ++ow) {
                    const std::size_t ih0 = oh * s, iw0 = ow * s;
                    T best = in[ih0 * W + iw0];
                    std::size_t best_idx = ih0 * W + iw0;
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        const T* row = in + (ih0 + ky) * W + iw0;
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            if (row[kx] > best) {
                                best = row[kx];
                                best_idx = (ih0 + ky) * W + iw0 + kx;
                            }
                        }
                    }
                    out[oh * Wo + ow] = best;
                    am[oh * Wo + ow] = static_cast<std::uint32_t>(plane_base + best_idx);
                }
            }
        }
    });
    return r;
}

/// Routes each upstream value to its recorded argmax position; overlapping
/// windows that picked the same input element accumulate.
template <typename T>
Tensor<T> maxpool_grad(const PoolRecord<T>& record, const Tensor<T>& up) {
    if (up.shape != record.output.shape)
        throw DimensionError("maxpool_grad: upstream shape " + shape_str(up.shape) + " expected " +
                             shape_str(record.output.shape));
    Tensor<T> g(record.in_shape);
    const std::size_t C = record.in_shape[1];
    const std::size_t plane_out = record.output.height() * record.output.width();
    // Argmax indices always stay inside their own (n, c) plane, so routing per
    // plane is race-free.
    parallel_for(record.in_shape[0] * C, [&](std::size_t b0, std::size_t b1) {
        for (std::size_t idx = b0; idx < b1; ++idx) {
            const std::size_t base = idx * plane_out;
            for (std::size_t i = 0; i < plane_out; ++i) {
                g.data[record.argmax[base + i]] += up.data[base + i];
            }
        }
    });
    return g;
}

}  // namespace uncd
