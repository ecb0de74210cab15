#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "uncd/adam.hpp"
#include "uncd/checkpoint.hpp"
#include "uncd/errors.hpp"
#include "uncd/metrics.hpp"
#include "uncd/unet.hpp"

namespace uncd {

/// One normalized training example.
struct Sample {
    Tensor<float> x;  // (1, 3, S, S)
    ClassMap y;       // (1, S, S)
};

struct TrainResult {
    UNetModel<float> best;  // parameters at the best-holdout epoch (final epoch when no holdout)
    TrainHistory history;
};

namespace detail {

inline void stack_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& idx,
                        std::size_t begin, std::size_t end, Tensor<float>& x, ClassMap& y) {
    const auto& first = samples[idx[begin]];
    const std::size_t b = end - begin;
    const std::size_t c = first.x.channels(), h = first.x.height(), w = first.x.width();
    x = Tensor<float>(b, c, h, w);
    y = ClassMap(b, h, w);
    for (std::size_t i = 0; i < b; ++i) {
        const auto& s = samples[idx[begin + i]];
        if (s.x.shape != first.x.shape)
            throw DimensionError("train: sample " + std::to_string(idx[begin + i]) + " shape " +
                                 shape_str(s.x.shape) + " differs from batch shape " + shape_str(first.x.shape));
        std::copy(s.x.data.begin(), s.x.data.end(), x.data.begin() + i * s.x.size());
        std::copy(s.y.v.begin(), s.y.v.end(), y.v.begin() + i * s.y.size());
    }
}

}  // namespace detail

/// Per-pixel accuracy of eval-mode segmentation over a sample set (the
/// no-mask PCC2 of the argmax decision against the ground-truth classes).
inline double holdout_accuracy(const UNetModel<float>& model, const std::vector<Sample>& holdout) {
    if (holdout.empty()) return 0.0;
    std::size_t correct = 0, total = 0;
    for (const auto& s : holdout) {
        const auto probs = segment(model, s.x);
        const auto pred = argmax_map(probs);
        for (std::size_t i = 0; i < pred.v.size(); ++i) {
            correct += pred.v[i] == s.y.v[i];
        }
        total += pred.v.size();
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

/// Adam-based supervised training: per-epoch uniform shuffle from the run
/// seed, mini-batches (last partial batch kept), per-epoch history, and
/// best-holdout model selection.
inline TrainResult train(UNetModel<float>& model, const std::vector<Sample>& train_set,
                         const std::vector<Sample>& holdout, const TrainConfig& cfg,
                         const std::function<void(const EpochStats&)>& on_epoch = {}) {
    cfg.validate();
    if (train_set.empty()) throw DataError("train: empty dataset");

    auto params = model.params();
    auto adam = AdamState::for_params(params);
    std::mt19937 rng(static_cast<std::uint32_t>(cfg.seed ^ (cfg.seed >> 32)));
    std::vector<std::size_t> idx(train_set.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;

    TrainResult result;
    double best_acc = -1.0;
    result.best = model;
    result.history.best_epoch = 0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(idx.begin(), idx.end(), rng);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t begin = 0; begin < idx.size(); begin += cfg.batch_size) {
            const std::size_t end = std::min(begin + cfg.batch_size, idx.size());
            Tensor<float> bx;
            ClassMap by;
            detail::stack_batch(train_set, idx, begin, end, bx, by);
            model.zero_grads();
            const double loss = forward_train(model, bx, by);
            adam_step(params, adam, cfg);
            loss_sum += loss * static_cast<double>(end - begin);
            seen += end - begin;
        }
        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(seen);
        stats.holdout_acc = holdout.empty() ? 0.0 : holdout_accuracy(model, holdout);
        result.history.epochs.push_back(stats);
        if (!holdout.empty() && stats.holdout_acc > best_acc) {
            best_acc = stats.holdout_acc;
            result.best = model;
            result.history.best_epoch = epoch;
        }
        if (on_epoch) on_epoch(stats);
    }
    if (holdout.empty()) {
        result.best = model;
        result.history.best_epoch = cfg.epochs;
    }
    return result;
}

struct GradCheckReport {
    struct TypeStats {
        std::string type;
        std::size_t checked = 0;
        std::size_t skipped_ties = 0;
        double max_rel_error = 0.0;
        std::string worst_param;
    };
    std::vector<TypeStats> per_type;
    double max_rel_error = 0.0;
    std::string worst_param;
    double tolerance = 0.0;
    bool pass = false;
};

namespace detail {

inline std::string param_type_of(const std::string& name) {
    const bool deconv = name.find(".up") != std::string::npos;
    if (name.ends_with(".gamma")) return "bn.gamma";
    if (name.ends_with(".beta")) return "bn.beta";
    if (name.ends_with(".weight")) return deconv ? "deconv.weight" : "conv.weight";
    if (name.ends_with(".bias")) return deconv ? "deconv.bias" : "conv.bias";
    return "other";
}

}  // namespace detail

/// Builds a tiny model (base 4, input 32) and verifies its backward pass: the
/// analytic gradients of a random batch, taken from the double instantiation
/// of the same templated layer code, are compared against central finite
/// differences for >= 20 random parameters per layer type, reporting the max
/// relative error. Samples whose one-sided quotients straddle a pool/ReLU
/// kink are tie points and get resampled. (Float-path fidelity is pinned
/// separately by the bitwise kernel oracles and per-kernel FD checks.)
inline GradCheckReport grad_check(double tolerance, std::uint64_t seed = 12345) {
    UNetConfig cfg;
    cfg.input_size = 32;
    cfg.base_channels = 4;
    auto model = init_model(cfg, seed);

    std::mt19937 rng(static_cast<std::uint32_t>(seed));
    Tensor<float> x(2, 3, 32, 32);
    std::uniform_real_distribution<float> xd(-1.0f, 1.0f);
    for (auto& v : x.data) v = xd(rng);
    ClassMap targets(2, 32, 32);
    std::uniform_int_distribution<int> cd(0, 2);
    for (auto& v : targets.v) v = static_cast<std::uint8_t>(cd(rng));

    auto dmodel = model_cast<double>(model);
    dmodel.zero_grads();
    const auto xdbl = tensor_cast<double>(x);
    forward_train(dmodel, xdbl, targets);
    auto views = dmodel.params();

    auto fd_model = model_cast<double>(model);
    auto dviews = fd_model.params();
    auto loss_d = [&]() { return forward_loss(fd_model, xdbl, targets); };

    std::map<std::string, std::vector<std::size_t>> by_type;
    for (std::size_t i = 0; i < views.size(); ++i) by_type[detail::param_type_of(views[i].name)].push_back(i);

    GradCheckReport report;
    report.tolerance = tolerance;
    constexpr double kAbsFloor = 1e-5;
    for (auto& [type, layer_ids] : by_type) {
        GradCheckReport::TypeStats ts;
        ts.type = type;
        std::uniform_int_distribution<std::size_t> pick_layer(0, layer_ids.size() - 1);
        std::size_t attempts = 0;
        while (ts.checked < 20 && attempts < 400) {
            ++attempts;
            const std::size_t li = layer_ids[pick_layer(rng)];
            std::uniform_int_distribution<std::size_t> pick_idx(0, views[li].count - 1);
            const std::size_t idx = pick_idx(rng);
            constexpr double h = 1e-5;
            double* cell = &dviews[li].value[idx];
            const double saved = *cell;
            const double f0 = loss_d();
            *cell = saved + h;
            const double fp = loss_d();
            *cell = saved - h;
            const double fm = loss_d();
            *cell = saved;
            const double fwd = (fp - f0) / h, bwd = (f0 - fm) / h;
            if (std::abs(fwd - bwd) > std::max(1e-4, 2e-3 * std::max(std::abs(fwd), std::abs(bwd)))) {
                ++ts.skipped_ties;
                continue;
            }
            const double numeric = (fp - fm) / (2.0 * h);
            const double analytic = views[li].grad[idx];
            const double diff = std::abs(analytic - numeric);
            const double rel = diff / std::max({std::abs(analytic), std::abs(numeric), kAbsFloor});
            if (rel > ts.max_rel_error) {
                ts.max_rel_error = rel;
                ts.worst_param = views[li].name + "[" + std::to_string(idx) + "]";
            }
            ++ts.checked;
        }
        if (ts.max_rel_error > report.max_rel_error) {
            report.max_rel_error = ts.max_rel_error;
            report.worst_param = ts.worst_param;
        }
        report.per_type.push_back(std::move(ts));
    }
    report.pass = report.max_rel_error <= tolerance;
    for (const auto& ts : report.per_type) {
        if (ts.checked < 20) report.pass = false;  // could not collect enough tie-free samples
    }
    return report;
}

}  // namespace uncd
