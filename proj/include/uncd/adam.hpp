#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "uncd/errors.hpp"
#include "uncd/parallel.hpp"
#include "uncd/unet.hpp"

namespace uncd {

/// Training hyperparameters; defaults follow the reference setup
/// (lr 2e-4, batch 4, 20 epochs).
struct TrainConfig {
    float learning_rate = 2e-4f;
    std::size_t batch_size = 4;
    std::size_t epochs = 20;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float epsilon = 1e-8f;
    std::uint64_t seed = 0;
    double holdout_fraction = 0.15;  // used when the caller does not pass an explicit holdout

    void validate() const {
        if (!(learning_rate > 0)) throw ConfigError("TrainConfig: learning_rate must be positive");
        if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
            throw ConfigError("TrainConfig: betas must lie in [0,1)");
        if (batch_size == 0) throw ConfigError("TrainConfig: batch_size must be positive");
        if (epochs == 0) throw ConfigError("TrainConfig: epochs must be positive");
    }
};

/// Per-parameter first/second moment accumulators plus the shared step count.
struct AdamState {
    struct Slot {
        std::vector<float> m, v;
    };
    std::vector<Slot> slots;
    std::uint64_t step = 0;

    static AdamState for_params(const std::vector<ParamView<float>>& params) {
        AdamState st;
        st.slots.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            st.slots[i].m.assign(params[i].count, 0.0f);
            st.slots[i].v.assign(params[i].count, 0.0f);
        }
        return st;
    }
};

/// Standard bias-corrected Adam update, elementwise over every parameter view.
inline void adam_step(std::vector<ParamView<float>>& params, AdamState& state, const TrainConfig& cfg) {
    if (state.slots.size() != params.size())
        throw DimensionError("adam_step: state has " + std::to_string(state.slots.size()) + " slots for " +
                             std::to_string(params.size()) + " parameters");
    state.step += 1;
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double corr1 = 1.0 - std::pow(b1, double(state.step));
    const double corr2 = 1.0 - std::pow(b2, double(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        auto& slot = state.slots[i];
        if (slot.m.size() != p.count)
            throw DimensionError("adam_step: slot " + std::to_string(i) + " size " + std::to_string(slot.m.size()) +
                                 " does not match parameter " + p.name + " size " + std::to_string(p.count));
        const float lr = cfg.learning_rate;
        const float eps = cfg.epsilon;
        parallel_for(p.count, [&](std::size_t b0, std::size_t b1_) {
            for (std::size_t j = b0; j < b1_; ++j) {
                const float g = p.grad[j];
                slot.m[j] = cfg.beta1 * slot.m[j] + (1.0f - cfg.beta1) * g;
                slot.v[j] = cfg.beta2 * slot.v[j] + (1.0f - cfg.beta2) * g * g;
                const float mhat = static_cast<float>(slot.m[j] / corr1);
                const float vhat = static_cast<float>(slot.v[j] / corr2);
                p.value[j] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }, 4096);
    }
}

}  // namespace uncd
