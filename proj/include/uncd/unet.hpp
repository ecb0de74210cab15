#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "uncd/activations.hpp"
#include "uncd/batchnorm.hpp"
#include "uncd/conv.hpp"
#include "uncd/errors.hpp"
#include "uncd/image.hpp"
#include "uncd/pool.hpp"
#include "uncd/tensor.hpp"

namespace uncd {

/// Architecture parameters of the 5-level encoder / 4-level decoder U-net.
/// Channel width at level L is base_channels * 2^(L-1); level 5 (the bridge)
/// has no pooling.
struct UNetConfig {
    std::size_t input_size = 320;
    std::size_t input_channels = 3;
    std::size_t num_classes = 3;
    std::size_t base_channels = 64;
    std::size_t levels = 5;
    float leaky_slope = 0.2f;

    /// Tap spatial extents per level: extent before that level's pool.
    std::array<std::size_t, 5> tap_extents() const {
        std::array<std::size_t, 5> t{};
        std::size_t e = input_size;
        for (std::size_t i = 0; i < 5; ++i) {
            t[i] = e;
            if (i < 4) {
                if (e < 3) throw ConfigError("UNetConfig: extent " + std::to_string(e) + " at level " +
                                             std::to_string(i + 1) + " too small to pool");
                e = (e - 3) / 2 + 1;
            }
        }
        return t;
    }

    std::size_t channels_at(std::size_t level_index) const {  // 0-based
        return base_channels << level_index;
    }

    void validate() const {
        if (levels != 5) throw ConfigError("UNetConfig: levels must be 5");
        if (input_channels == 0 || num_classes == 0 || base_channels == 0)
            throw ConfigError("UNetConfig: channel counts must be positive");
        if (input_size == 0 || input_size % 2 != 0)
            throw ConfigError("UNetConfig: input_size must be a positive even integer");
        if (!(leaky_slope > 0.0f) || !(leaky_slope < 1.0f))
            throw ConfigError("UNetConfig: leaky_slope must lie in (0,1)");
        const auto t = tap_extents();  // throws when a pool would underflow
        if (t[4] < 1) throw ConfigError("UNetConfig: bridge extent must be at least 1");
    }
};

/// The five per-level feature maps saved during a forward pass:
/// levels 1-4 post-second-conv-block (post-BN, post-activation, pre-pool),
/// level 5 the bridge output. Also the carrier for the per-level difference
/// images fed back through the decoder.
template <typename T>
struct EncoderTaps {
    std::array<Tensor<T>, 5> level;
};

template <typename T>
struct BlockCache {
    Tensor<T> input;
    BatchNormCache<T> bn;
    Tensor<T> bn_out;
};

namespace detail {

template <typename T>
void accumulate(std::vector<T>& dst, const std::vector<T>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace detail

/// conv(3x3, s1, p1) + batch norm + leaky ReLU.
template <typename T>
struct ConvBnBlock {
    ConvSpec spec;
    Tensor<T> w;
    std::vector<T> b;
    BatchNormState<T> bn;

    Tensor<T> w_grad;
    std::vector<T> b_grad, gamma_grad, beta_grad;

    void init_shapes(std::size_t in_ch, std::size_t out_ch, std::size_t kernel = 3, std::size_t stride = 1,
                     std::size_t padding = 1) {
        spec = ConvSpec{kernel, stride, padding, in_ch, out_ch};
        w = Tensor<T>(out_ch, in_ch, kernel, kernel);
        b.assign(out_ch, T(0));
        bn = BatchNormState<T>(out_ch);
    }

    void ensure_grads() {
        if (w_grad.shape != w.shape) w_grad = Tensor<T>(w.shape);
        if (b_grad.size() != b.size()) b_grad.assign(b.size(), T(0));
        if (gamma_grad.size() != bn.gamma.size()) gamma_grad.assign(bn.gamma.size(), T(0));
        if (beta_grad.size() != bn.beta.size()) beta_grad.assign(bn.beta.size(), T(0));
    }

    void zero_grads() {
        ensure_grads();
        std::fill(w_grad.data.begin(), w_grad.data.end(), T(0));
        std::fill(b_grad.begin(), b_grad.end(), T(0));
        std::fill(gamma_grad.begin(), gamma_grad.end(), T(0));
        std::fill(beta_grad.begin(), beta_grad.end(), T(0));
    }

    Tensor<T> forward_eval(const Tensor<T>& x, T slope) const {
        auto z = conv2d(x, w, b, spec);
        auto h = batchnorm_eval(z, bn);
        return leaky_relu(h, slope);
    }

    Tensor<T> forward_train(const Tensor<T>& x, T slope, BlockCache<T>* c) {
        if (c) c->input = x;
        auto z = conv2d(x, w, b, spec);
        auto h = batchnorm(z, bn, Mode::train, c ? &c->bn : nullptr);
        if (c) c->bn_out = h;
        return leaky_relu(h, slope);
    }

    Tensor<T> backward(const BlockCache<T>& c, const Tensor<T>& d_out, T slope) {
        ensure_grads();
        auto d_bn_out = leaky_relu_grad(c.bn_out, d_out, slope);
        auto bg = batchnorm_grad(c.bn, bn, d_bn_out);
        detail::accumulate(gamma_grad, bg.gamma);
        detail::accumulate(beta_grad, bg.beta);
        auto cg = conv2d_grad(c.input, w, spec, bg.input);
        detail::accumulate(w_grad, cg.weight);
        detail::accumulate(b_grad, cg.bias);
        return std::move(cg.input);
    }
};

/// deconv(3x3, s2, p0) + batch norm + leaky ReLU.
template <typename T>
struct DeconvBnBlock {
    ConvSpec spec;
    Tensor<T> w;  // (in_channels, out_channels, k, k)
    std::vector<T> b;
    BatchNormState<T> bn;

    Tensor<T> w_grad;
    std::vector<T> b_grad, gamma_grad, beta_grad;

    void init_shapes(std::size_t in_ch, std::size_t out_ch) {
        spec = ConvSpec{3, 2, 0, in_ch, out_ch};
        w = Tensor<T>(in_ch, out_ch, 3, 3);
        b.assign(out_ch, T(0));
        bn = BatchNormState<T>(out_ch);
    }

    void ensure_grads() {
        if (w_grad.shape != w.shape) w_grad = Tensor<T>(w.shape);
        if (b_grad.size() != b.size()) b_grad.assign(b.size(), T(0));
        if (gamma_grad.size() != bn.gamma.size()) gamma_grad.assign(bn.gamma.size(), T(0));
        if (beta_grad.size() != bn.beta.size()) beta_grad.assign(bn.beta.size(), T(0));
    }

    void zero_grads() {
        ensure_grads();
        std::fill(w_grad.data.begin(), w_grad.data.end(), T(0));
        std::fill(b_grad.begin(), b_grad.end(), T(0));
        std::fill(gamma_grad.begin(), gamma_grad.end(), T(0));
        std::fill(beta_grad.begin(), beta_grad.end(), T(0));
    }

    Tensor<T> forward_eval(const Tensor<T>& x, T slope) const {
        auto z = deconv2d(x, w, b, spec);
        auto h = batchnorm_eval(z, bn);
        return leaky_relu(h, slope);
    }

    Tensor<T> forward_train(const Tensor<T>& x, T slope, BlockCache<T>* c) {
        if (c) c->input = x;
        auto z = deconv2d(x, w, b, spec);
        auto h = batchnorm(z, bn, Mode::train, c ? &c->bn : nullptr);
        if (c) c->bn_out = h;
        return leaky_relu(h, slope);
    }

    Tensor<T> backward(const BlockCache<T>& c, const Tensor<T>& d_out, T slope) {
        ensure_grads();
        auto d_bn_out = leaky_relu_grad(c.bn_out, d_out, slope);
        auto bg = batchnorm_grad(c.bn, bn, d_bn_out);
        detail::accumulate(gamma_grad, bg.gamma);
        detail::accumulate(beta_grad, bg.beta);
        auto dg = deconv2d_grad(c.input, w, spec, bg.input);
        detail::accumulate(w_grad, dg.weight);
        detail::accumulate(b_grad, dg.bias);
        return std::move(dg.input);
    }
};

template <typename T>
struct ParamView {
    std::string name;
    T* value = nullptr;
    T* grad = nullptr;
    std::size_t count = 0;
    std::vector<std::size_t> dims;
};

/// Parameters, batch-norm state and training-data normalization statistics
/// for the full model. Immutable during eval-mode inference; training mutates
/// parameters and running statistics and requires exclusive access.
template <typename T = float>
struct UNetModel {
    UNetConfig config;
    NormalizationStats norm;

    struct EncLevel {
        ConvBnBlock<T> c1, c2;
    };
    struct DecLevel {
        DeconvBnBlock<T> up;
        ConvBnBlock<T> c1, c2;
    };

    std::array<EncLevel, 5> enc;
    std::array<DecLevel, 4> dec;
    ConvSpec out_spec;
    Tensor<T> out_w;
    std::vector<T> out_b;
    Tensor<T> out_w_grad;
    std::vector<T> out_b_grad;

    void build(const UNetConfig& cfg) {
        cfg.validate();
        config = cfg;
        std::size_t in_ch = cfg.input_channels;
        for (std::size_t i = 0; i < 5; ++i) {
            const std::size_t ch = cfg.channels_at(i);
            enc[i].c1.init_shapes(in_ch, ch);
            enc[i].c2.init_shapes(ch, ch);
            in_ch = ch;
        }
        for (std::size_t j = 0; j < 4; ++j) {
            const std::size_t ch_in = cfg.channels_at(4 - j);   // 16b, 8b, 4b, 2b
            const std::size_t ch_out = cfg.channels_at(3 - j);  // 8b, 4b, 2b, b
            dec[j].up.init_shapes(ch_in, ch_out);
            dec[j].c1.init_shapes(2 * ch_out, ch_out);
            dec[j].c2.init_shapes(ch_out, ch_out);
        }
        out_spec = ConvSpec{3, 1, 1, cfg.base_channels, cfg.num_classes};
        out_w = Tensor<T>(cfg.num_classes, cfg.base_channels, 3, 3);
        out_b.assign(cfg.num_classes, T(0));
    }

    void ensure_grads() {
        for (auto& l : enc) {
            l.c1.ensure_grads();
            l.c2.ensure_grads();
        }
        for (auto& l : dec) {
            l.up.ensure_grads();
            l.c1.ensure_grads();
            l.c2.ensure_grads();
        }
        if (out_w_grad.shape != out_w.shape) out_w_grad = Tensor<T>(out_w.shape);
        if (out_b_grad.size() != out_b.size()) out_b_grad.assign(out_b.size(), T(0));
    }

    void zero_grads() {
        for (auto& l : enc) {
            l.c1.zero_grads();
            l.c2.zero_grads();
        }
        for (auto& l : dec) {
            l.up.zero_grads();
            l.c1.zero_grads();
            l.c2.zero_grads();
        }
        ensure_grads();
        std::fill(out_w_grad.data.begin(), out_w_grad.data.end(), T(0));
        std::fill(out_b_grad.begin(), out_b_grad.end(), T(0));
    }

    /// Trainable parameters with their gradient buffers, in a stable order.
    std::vector<ParamView<T>> params() {
        ensure_grads();
        std::vector<ParamView<T>> out;
        auto add_tensor = [&](const std::string& name, Tensor<T>& v, Tensor<T>& g) {
            out.push_back({name, v.data.data(), g.data.data(), v.size(),
                           {v.shape[0], v.shape[1], v.shape[2], v.shape[3]}});
        };
        auto add_vec = [&](const std::string& name, std::vector<T>& v, std::vector<T>& g) {
            out.push_back({name, v.data(), g.data(), v.size(), {v.size()}});
        };
        auto add_conv_block = [&](const std::string& prefix, const std::string& bn_prefix, ConvBnBlock<T>& blk) {
            add_tensor(prefix + ".weight", blk.w, blk.w_grad);
            add_vec(prefix + ".bias", blk.b, blk.b_grad);
            add_vec(bn_prefix + ".gamma", blk.bn.gamma, blk.gamma_grad);
            add_vec(bn_prefix + ".beta", blk.bn.beta, blk.beta_grad);
        };
        auto add_deconv_block = [&](const std::string& prefix, const std::string& bn_prefix, DeconvBnBlock<T>& blk) {
            add_tensor(prefix + ".weight", blk.w, blk.w_grad);
            add_vec(prefix + ".bias", blk.b, blk.b_grad);
            add_vec(bn_prefix + ".gamma", blk.bn.gamma, blk.gamma_grad);
            add_vec(bn_prefix + ".beta", blk.bn.beta, blk.beta_grad);
        };
        for (std::size_t i = 0; i < 5; ++i) {
            const std::string lv = "enc" + std::to_string(i + 1);
            add_conv_block(lv + ".conv1", lv + ".bn1", enc[i].c1);
            add_conv_block(lv + ".conv2", lv + ".bn2", enc[i].c2);
        }
        for (std::size_t j = 0; j < 4; ++j) {
            const std::string lv = "dec" + std::to_string(j + 1);
            add_deconv_block(lv + ".up", lv + ".upbn", dec[j].up);
            add_conv_block(lv + ".conv1", lv + ".bn1", dec[j].c1);
            add_conv_block(lv + ".conv2", lv + ".bn2", dec[j].c2);
        }
        add_tensor("out.weight", out_w, out_w_grad);
        add_vec("out.bias", out_b, out_b_grad);
        return out;
    }

    /// Every persisted record: trainable parameters plus running statistics.
    /// (Normalization statistics are serialized separately by the checkpoint
    /// writer since they stay float for any T.)
    template <typename F>
    void for_each_state(F&& f) {
        auto tensor_rec = [&](const std::string& name, Tensor<T>& v) {
            f(name, v.data.data(), v.size(), std::vector<std::size_t>{v.shape[0], v.shape[1], v.shape[2], v.shape[3]});
        };
        auto vec_rec = [&](const std::string& name, std::vector<T>& v) {
            f(name, v.data(), v.size(), std::vector<std::size_t>{v.size()});
        };
        auto conv_block = [&](const std::string& prefix, const std::string& bn_prefix, ConvBnBlock<T>& blk) {
            tensor_rec(prefix + ".weight", blk.w);
            vec_rec(prefix + ".bias", blk.b);
            vec_rec(bn_prefix + ".gamma", blk.bn.gamma);
            vec_rec(bn_prefix + ".beta", blk.bn.beta);
            vec_rec(bn_prefix + ".running_mean", blk.bn.running_mean);
            vec_rec(bn_prefix + ".running_var", blk.bn.running_var);
        };
        auto deconv_block = [&](const std::string& prefix, const std::string& bn_prefix, DeconvBnBlock<T>& blk) {
            tensor_rec(prefix + ".weight", blk.w);
            vec_rec(prefix + ".bias", blk.b);
            vec_rec(bn_prefix + ".gamma", blk.bn.gamma);
            vec_rec(bn_prefix + ".beta", blk.bn.beta);
            vec_rec(bn_prefix + ".running_mean", blk.bn.running_mean);
            vec_rec(bn_prefix + ".running_var", blk.bn.running_var);
        };
        for (std::size_t i = 0; i < 5; ++i) {
            const std::string lv = "enc" + std::to_string(i + 1);
            conv_block(lv + ".conv1", lv + ".bn1", enc[i].c1);
            conv_block(lv + ".conv2", lv + ".bn2", enc[i].c2);
        }
        for (std::size_t j = 0; j < 4; ++j) {
            const std::string lv = "dec" + std::to_string(j + 1);
            deconv_block(lv + ".up", lv + ".upbn", dec[j].up);
            conv_block(lv + ".conv1", lv + ".bn1", dec[j].c1);
            conv_block(lv + ".conv2", lv + ".bn2", dec[j].c2);
        }
        tensor_rec("out.weight", out_w);
        vec_rec("out.bias", out_b);
    }

    std::size_t param_count() {
        std::size_t n = 0;
        for (auto& p : params()) n += p.count;
        return n;
    }
};

/// Copy-converts a model to another scalar type (exact for float -> double).
template <typename U, typename T>
UNetModel<U> model_cast(const UNetModel<T>& src) {
    UNetModel<U> dst;
    dst.build(src.config);
    dst.norm = src.norm;
    auto conv_blk = [](ConvBnBlock<U>& d, const ConvBnBlock<T>& s) {
        d.w = tensor_cast<U>(s.w);
        d.b.assign(s.b.begin(), s.b.end());
        d.bn.gamma.assign(s.bn.gamma.begin(), s.bn.gamma.end());
        d.bn.beta.assign(s.bn.beta.begin(), s.bn.beta.end());
        d.bn.running_mean.assign(s.bn.running_mean.begin(), s.bn.running_mean.end());
        d.bn.running_var.assign(s.bn.running_var.begin(), s.bn.running_var.end());
        d.bn.momentum = static_cast<U>(s.bn.momentum);
        d.bn.epsilon = static_cast<U>(s.bn.epsilon);
    };
    auto deconv_blk = [](DeconvBnBlock<U>& d, const DeconvBnBlock<T>& s) {
        d.w = tensor_cast<U>(s.w);
        d.b.assign(s.b.begin(), s.b.end());
        d.bn.gamma.assign(s.bn.gamma.begin(), s.bn.gamma.end());
        d.bn.beta.assign(s.bn.beta.begin(), s.bn.beta.end());
        d.bn.running_mean.assign(s.bn.running_mean.begin(), s.bn.running_mean.end());
        d.bn.running_var.assign(s.bn.running_var.begin(), s.bn.running_var.end());
        d.bn.momentum = static_cast<U>(s.bn.momentum);
        d.bn.epsilon = static_cast<U>(s.bn.epsilon);
    };
    for (std::size_t i = 0; i < 5; ++i) {
        conv_blk(dst.enc[i].c1, src.enc[i].c1);
        conv_blk(dst.enc[i].c2, src.enc[i].c2);
    }
    for (std::size_t j = 0; j < 4; ++j) {
        deconv_blk(dst.dec[j].up, src.dec[j].up);
        conv_blk(dst.dec[j].c1, src.dec[j].c1);
        conv_blk(dst.dec[j].c2, src.dec[j].c2);
    }
    dst.out_w = tensor_cast<U>(src.out_w);
    dst.out_b.assign(src.out_b.begin(), src.out_b.end());
    return dst;
}

/// Fan-in-scaled uniform initialization suited to leaky-ReLU networks:
/// bound = sqrt(6 / ((1 + slope^2) * fan_in)). Biases zero, BN scale 1 shift 0.
inline UNetModel<float> init_model(const UNetConfig& cfg, std::uint64_t seed) {
    UNetModel<float> m;
    m.build(cfg);
    std::mt19937 rng(static_cast<std::uint32_t>(seed ^ (seed >> 32)));
    const double slope = static_cast<double>(cfg.leaky_slope);
    auto fill_weight = [&](Tensor<float>& w, std::size_t fan_in) {
        const float bound = static_cast<float>(std::sqrt(6.0 / ((1.0 + slope * slope) * double(fan_in))));
        std::uniform_real_distribution<float> dist(-bound, bound);
        for (auto& v : w.data) v = dist(rng);
    };
    for (auto& l : m.enc) {
        fill_weight(l.c1.w, l.c1.spec.in_channels * l.c1.spec.kernel * l.c1.spec.kernel);
        fill_weight(l.c2.w, l.c2.spec.in_channels * l.c2.spec.kernel * l.c2.spec.kernel);
    }
    for (auto& l : m.dec) {
        fill_weight(l.up.w, l.up.spec.in_channels * l.up.spec.kernel * l.up.spec.kernel);
        fill_weight(l.c1.w, l.c1.spec.in_channels * l.c1.spec.kernel * l.c1.spec.kernel);
        fill_weight(l.c2.w, l.c2.spec.in_channels * l.c2.spec.kernel * l.c2.spec.kernel);
    }
    // Output layer starts an order of magnitude cooler so the initial
    // prediction is near-uniform (initial loss ~ ln(num_classes)).
    fill_weight(m.out_w, m.out_spec.in_channels * 9);
    for (auto& v : m.out_w.data) v *= 0.1f;
    return m;
}

template <typename T>
struct EncoderCache {
    struct Level {
        BlockCache<T> c1, c2;
    };
    std::array<Level, 5> lvl;
    std::array<PoolRecord<T>, 4> pool;
};

template <typename T>
struct DecoderCache {
    struct Level {
        BlockCache<T> up;
        long pad_h = 0, pad_w = 0;  // positive: rows/cols zero-padded onto the deconv output
        BlockCache<T> c1, c2;
    };
    std::array<Level, 4> lvl;
    Tensor<T> out_input;
    Tensor<T> probs;
};

namespace detail {

template <typename T>
void check_unet_input(const UNetConfig& cfg, const Tensor<T>& x) {
    if (x.channels() != cfg.input_channels)
        throw DimensionError("unet: input channel axis C=" + std::to_string(x.channels()) + " expected " +
                             std::to_string(cfg.input_channels));
    if (x.height() != cfg.input_size || x.width() != cfg.input_size)
        throw DimensionError("unet: input spatial axes (H,W)=(" + std::to_string(x.height()) + "," +
                             std::to_string(x.width()) + ") expected (" + std::to_string(cfg.input_size) + "," +
                             std::to_string(cfg.input_size) + ")");
    if (x.batch() == 0) throw DimensionError("unet: input batch axis N=0");
}

/// Pads with zeros or crops on the bottom/right so the tensor matches the
/// target spatial extents; pixel registration stays anchored at the top-left.
template <typename T>
Tensor<T> align_to(const Tensor<T>& t, std::size_t th, std::size_t tw, long* pad_h, long* pad_w) {
    if (pad_h) *pad_h = static_cast<long>(th) - static_cast<long>(t.height());
    if (pad_w) *pad_w = static_cast<long>(tw) - static_cast<long>(t.width());
    if (t.height() == th && t.width() == tw) return t;
    Tensor<T> out(t.batch(), t.channels(), th, tw);
    const std::size_t copy_h = std::min(th, t.height());
    const std::size_t copy_w = std::min(tw, t.width());
    for (std::size_t n = 0; n < t.batch(); ++n)
        for (std::size_t c = 0; c < t.channels(); ++c) {
            const T* src = t.plane(n, c);
            T* dst = out.plane(n, c);
            for (std::size_t y = 0; y < copy_h; ++y)
                for (std::size_t x = 0; x < copy_w; ++x) dst[y * tw + x] = src[y * t.width() + x];
        }
    return out;
}

/// Inverse of align_to for gradients: restores the original spatial extents.
template <typename T>
Tensor<T> unalign(const Tensor<T>& g, std::size_t orig_h, std::size_t orig_w) {
    if (g.height() == orig_h && g.width() == orig_w) return g;
    long unused_h = 0, unused_w = 0;
    return align_to(g, orig_h, orig_w, &unused_h, &unused_w);
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.batch() != b.batch())
        throw DimensionError("concat: batch axis N mismatch " + std::to_string(a.batch()) + " vs " +
                             std::to_string(b.batch()));
    if (a.height() != b.height() || a.width() != b.width())
        throw DimensionError("concat: spatial axes (H,W) mismatch " + shape_str(a.shape) + " vs " +
                             shape_str(b.shape));
    Tensor<T> out(a.batch(), a.channels() + b.channels(), a.height(), a.width());
    const std::size_t hw = a.height() * a.width();
    for (std::size_t n = 0; n < a.batch(); ++n) {
        for (std::size_t c = 0; c < a.channels(); ++c)
            std::copy(a.plane(n, c), a.plane(n, c) + hw, out.plane(n, c));
        for (std::size_t c = 0; c < b.channels(); ++c)
            std::copy(b.plane(n, c), b.plane(n, c) + hw, out.plane(n, a.channels() + c));
    }
    return out;
}

template <typename T>
void split_channels(const Tensor<T>& cat, std::size_t ca, Tensor<T>& a, Tensor<T>& b) {
    a = Tensor<T>(cat.batch(), ca, cat.height(), cat.width());
    b = Tensor<T>(cat.batch(), cat.channels() - ca, cat.height(), cat.width());
    const std::size_t hw = cat.height() * cat.width();
    for (std::size_t n = 0; n < cat.batch(); ++n) {
        for (std::size_t c = 0; c < ca; ++c)
            std::copy(cat.plane(n, c), cat.plane(n, c) + hw, a.plane(n, c));
        for (std::size_t c = ca; c < cat.channels(); ++c)
            std::copy(cat.plane(n, c), cat.plane(n, c) + hw, b.plane(n, c - ca));
    }
}

}  // namespace detail

/// Eval-mode encoder pass; pure function of (parameters, running stats, input).
template <typename T>
EncoderTaps<T> encoder_forward(const UNetModel<T>& m, const Tensor<T>& x) {
    detail::check_unet_input(m.config, x);
    const T slope = static_cast<T>(m.config.leaky_slope);
    EncoderTaps<T> taps;
    Tensor<T> cur = x;
    for (std::size_t i = 0; i < 5; ++i) {
        auto t1 = m.enc[i].c1.forward_eval(cur, slope);
        taps.level[i] = m.enc[i].c2.forward_eval(t1, slope);
        if (i < 4) {
            auto pr = maxpool(taps.level[i]);
            cur = std::move(pr.output);
        }
    }
    return taps;
}

/// Train-mode encoder pass; updates BN running stats, fills cache when given.
template <typename T>
EncoderTaps<T> encoder_forward_train(UNetModel<T>& m, const Tensor<T>& x, EncoderCache<T>* cache) {
    detail::check_unet_input(m.config, x);
    const T slope = static_cast<T>(m.config.leaky_slope);
    EncoderTaps<T> taps;
    Tensor<T> cur = x;
    for (std::size_t i = 0; i < 5; ++i) {
        auto t1 = m.enc[i].c1.forward_train(cur, slope, cache ? &cache->lvl[i].c1 : nullptr);
        taps.level[i] = m.enc[i].c2.forward_train(t1, slope, cache ? &cache->lvl[i].c2 : nullptr);
        if (i < 4) {
            auto pr = maxpool(taps.level[i]);
            cur = std::move(pr.output);
            if (cache) {
                cache->pool[i] = PoolRecord<T>{Tensor<T>(), std::move(pr.argmax), pr.in_shape, pr.kernel, pr.stride};
                cache->pool[i].output = Tensor<T>(cur.shape);  // shape only, for upstream validation
            }
        }
    }
    return taps;
}

/// Decoder pass over the five per-level inputs (encoder taps or difference
/// images): level[4] feeds the first deconv, level[3..0] are the skips, from
/// deepest to shallowest. Output is per-pixel class probabilities.
template <typename T>
Tensor<T> decoder_forward(const UNetModel<T>& m, const EncoderTaps<T>& in) {
    const T slope = static_cast<T>(m.config.leaky_slope);
    Tensor<T> cur = in.level[4];
    for (std::size_t j = 0; j < 4; ++j) {
        const Tensor<T>& skip = in.level[3 - j];
        auto u = m.dec[j].up.forward_eval(cur, slope);
        auto u2 = detail::align_to(u, skip.height(), skip.width(), nullptr, nullptr);
        auto cat = detail::concat_channels(skip, u2);
        auto t1 = m.dec[j].c1.forward_eval(cat, slope);
        cur = m.dec[j].c2.forward_eval(t1, slope);
    }
    auto logits = conv2d(cur, m.out_w, m.out_b, m.out_spec);
    return softmax_channels(logits);
}

template <typename T>
Tensor<T> decoder_forward_train(UNetModel<T>& m, const EncoderTaps<T>& in, DecoderCache<T>* cache) {
    const T slope = static_cast<T>(m.config.leaky_slope);
    Tensor<T> cur = in.level[4];
    for (std::size_t j = 0; j < 4; ++j) {
        const Tensor<T>& skip = in.level[3 - j];
        auto u = m.dec[j].up.forward_train(cur, slope, cache ? &cache->lvl[j].up : nullptr);
        long ph = 0, pw = 0;
        auto u2 = detail::align_to(u, skip.height(), skip.width(), &ph, &pw);
        if (cache) {
            cache->lvl[j].pad_h = ph;
            cache->lvl[j].pad_w = pw;
        }
        auto cat = detail::concat_channels(skip, u2);
        auto t1 = m.dec[j].c1.forward_train(cat, slope, cache ? &cache->lvl[j].c1 : nullptr);
        cur = m.dec[j].c2.forward_train(t1, slope, cache ? &cache->lvl[j].c2 : nullptr);
    }
    if (cache) cache->out_input = cur;
    auto logits = conv2d(cur, m.out_w, m.out_b, m.out_spec);
    auto probs = softmax_channels(logits);
    if (cache) cache->probs = probs;
    return probs;
}

/// Backward through the decoder. Returns gradients with respect to the five
/// decoder inputs (skips and bridge), shaped like EncoderTaps.
template <typename T>
EncoderTaps<T> decoder_backward(UNetModel<T>& m, const DecoderCache<T>& cache, const Tensor<T>& d_probs) {
    const T slope = static_cast<T>(m.config.leaky_slope);
    m.ensure_grads();
    EncoderTaps<T> d_in;
    auto d_logits = softmax_channels_grad(cache.probs, d_probs);
    auto cg = conv2d_grad(cache.out_input, m.out_w, m.out_spec, d_logits);
    detail::accumulate(m.out_w_grad, cg.weight);
    detail::accumulate(m.out_b_grad, cg.bias);
    Tensor<T> d_cur = std::move(cg.input);
    for (std::size_t j = 4; j-- > 0;) {
        auto d_t1 = m.dec[j].c2.backward(cache.lvl[j].c2, d_cur, slope);
        auto d_cat = m.dec[j].c1.backward(cache.lvl[j].c1, d_t1, slope);
        const std::size_t skip_ch = m.dec[j].c1.spec.in_channels / 2;
        Tensor<T> d_skip, d_u2;
        detail::split_channels(d_cat, skip_ch, d_skip, d_u2);
        d_in.level[3 - j] = std::move(d_skip);
        const auto& up_cache = cache.lvl[j].up;
        const auto uh = static_cast<std::size_t>(static_cast<long>(d_u2.height()) - cache.lvl[j].pad_h);
        const auto uw = static_cast<std::size_t>(static_cast<long>(d_u2.width()) - cache.lvl[j].pad_w);
        auto d_u = detail::unalign(d_u2, uh, uw);
        d_cur = m.dec[j].up.backward(up_cache, d_u, slope);
    }
    d_in.level[4] = std::move(d_cur);
    return d_in;
}

/// Backward through the encoder given gradients on the five taps.
template <typename T>
Tensor<T> encoder_backward(UNetModel<T>& m, const EncoderCache<T>& cache, const EncoderTaps<T>& d_taps) {
    const T slope = static_cast<T>(m.config.leaky_slope);
    m.ensure_grads();
    Tensor<T> d_cur = d_taps.level[4];
    for (std::size_t i = 5; i-- > 0;) {
        auto d_t1 = m.enc[i].c2.backward(cache.lvl[i].c2, d_cur, slope);
        auto d_in = m.enc[i].c1.backward(cache.lvl[i].c1, d_t1, slope);
        if (i == 0) return d_in;
        auto d_tap = maxpool_grad(cache.pool[i - 1], d_in);
        detail::accumulate(d_tap, d_taps.level[i - 1]);
        d_cur = std::move(d_tap);
    }
    return Tensor<T>();
}

/// The standard U-net pass: eval-mode encoder + decoder with the model's own
/// taps as skips.
template <typename T>
Tensor<T> segment(const UNetModel<T>& m, const Tensor<T>& x) {
    return decoder_forward(m, encoder_forward(m, x));
}

/// Train-mode forward only (used by finite-difference checks).
template <typename T>
double forward_loss(UNetModel<T>& m, const Tensor<T>& x, const ClassMap& targets) {
    auto taps = encoder_forward_train(m, x, static_cast<EncoderCache<T>*>(nullptr));
    auto probs = decoder_forward_train(m, taps, static_cast<DecoderCache<T>*>(nullptr));
    return cross_entropy_loss(probs, targets).loss;
}

/// Full training step math: forward in train mode, cross-entropy, backward.
/// Gradients accumulate into the model's gradient buffers.
template <typename T>
double forward_train(UNetModel<T>& m, const Tensor<T>& x, const ClassMap& targets) {
    EncoderCache<T> ec;
    DecoderCache<T> dc;
    auto taps = encoder_forward_train(m, x, &ec);
    auto probs = decoder_forward_train(m, taps, &dc);
    auto ce = cross_entropy_loss(probs, targets);
    auto d_taps = decoder_backward(m, dc, ce.probs_grad);
    encoder_backward(m, ec, d_taps);
    return ce.loss;
}

}  // namespace uncd
