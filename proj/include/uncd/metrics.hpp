#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "uncd/errors.hpp"
#include "uncd/tensor.hpp"

namespace uncd {

/// Per pixel, the index of the maximal channel; ties break to the lowest
/// class index.
template <typename T>
ClassMap argmax_map(const Tensor<T>& probs) {
    const std::size_t N = probs.batch(), C = probs.channels(), H = probs.height(), W = probs.width();
    if (C == 0 || C > 255) throw DimensionError("argmax_map: channel axis C=" + std::to_string(C));
    ClassMap out(N, H, W);
    const std::size_t hw = H * W;
    for (std::size_t n = 0; n < N; ++n) {
        const T* base = probs.data.data() + n * C * hw;
        std::uint8_t* dst = out.v.data() + n * hw;
        for (std::size_t i = 0; i < hw; ++i) {
            T best = base[i];
            std::uint8_t best_c = 0;
            for (std::size_t c = 1; c < C; ++c) {
                const T v = base[c * hw + i];
                if (v > best) {
                    best = v;
                    best_c = static_cast<std::uint8_t>(c);
                }
            }
            dst[i] = best_c;
        }
    }
    return out;
}

/// Change-detection confusion counts (Eq. 1 inputs).
struct ChangeConfusion {
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
    std::size_t total() const { return tp + tn + fp + fn; }
};

struct Pcc1Result {
    double score = 0.0;
    ChangeConfusion confusion;
};

/// PCC1 = (TP + TN) / (TP + FP + TN + FN).
inline Pcc1Result pcc1(const BoolMask& pred, const BoolMask& truth) {
    if (pred.batch != truth.batch || pred.height != truth.height || pred.width != truth.width)
        throw DimensionError("pcc1: mask dims (" + std::to_string(pred.batch) + "," + std::to_string(pred.height) +
                             "," + std::to_string(pred.width) + ") vs (" + std::to_string(truth.batch) + "," +
                             std::to_string(truth.height) + "," + std::to_string(truth.width) + ")");
    if (pred.v.empty()) throw MetricError("pcc1: undefined on empty masks");
    Pcc1Result r;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        const bool p = pred.v[i] != 0, t = truth.v[i] != 0;
        if (p && t) {
            ++r.confusion.tp;
        } else if (!p && !t) {
            ++r.confusion.tn;
        } else if (p && !t) {
            ++r.confusion.fp;
        } else {
            ++r.confusion.fn;
        }
    }
    r.score = static_cast<double>(r.confusion.tp + r.confusion.tn) / static_cast<double>(r.confusion.total());
    return r;
}

/// Semantic classification confusion (Eq. 2 inputs): correctly/incorrectly
/// classified counts plus the full per-class matrix (rows: truth class).
struct ClassConfusion {
    std::size_t cc = 0, ic = 0;
    std::array<std::array<std::size_t, 3>, 3> matrix{};
    std::size_t total() const { return cc + ic; }
};

struct Pcc2Result {
    double score = 0.0;
    ClassConfusion confusion;
};

/// PCC2 = CC / (CC + IC) over the masked pixel set (all pixels when mask is
/// null).
inline Pcc2Result pcc2(const ClassMap& pred, const ClassMap& truth, const BoolMask* mask = nullptr) {
    if (pred.batch != truth.batch || pred.height != truth.height || pred.width != truth.width)
        throw DimensionError("pcc2: class map dims (" + std::to_string(pred.batch) + "," +
                             std::to_string(pred.height) + "," + std::to_string(pred.width) + ") vs (" +
                             std::to_string(truth.batch) + "," + std::to_string(truth.height) + "," +
                             std::to_string(truth.width) + ")");
    if (mask && (mask->batch != pred.batch || mask->height != pred.height || mask->width != pred.width))
        throw DimensionError("pcc2: mask dims do not match class maps");
    Pcc2Result r;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        if (mask && !mask->v[i]) continue;
        const std::uint8_t p = pred.v[i], t = truth.v[i];
        if (p < 3 && t < 3) r.confusion.matrix[t][p] += 1;
        if (p == t) {
            ++r.confusion.cc;
        } else {
            ++r.confusion.ic;
        }
    }
    if (r.confusion.total() == 0) throw MetricError("pcc2: undefined on an empty evaluated pixel set");
    r.score = static_cast<double>(r.confusion.cc) / static_cast<double>(r.confusion.total());
    return r;
}

}  // namespace uncd
