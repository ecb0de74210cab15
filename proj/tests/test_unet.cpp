#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "oracle.hpp"
#include "uncd/unet.hpp"

using uncd::EncoderTaps;
using uncd::Tensor;
using uncd::UNetConfig;
using uncd::UNetModel;

namespace {

UNetConfig tiny_config(std::size_t input = 32, std::size_t base = 4) {
    UNetConfig cfg;
    cfg.input_size = input;
    cfg.base_channels = base;
    return cfg;
}

}  // namespace

TEST_CASE("config: tap extents follow the pooling chain") {
    REQUIRE(tiny_config(320).tap_extents() == std::array<std::size_t, 5>{320, 159, 79, 39, 19});
    REQUIRE(tiny_config(64).tap_extents() == std::array<std::size_t, 5>{64, 31, 15, 7, 3});
    REQUIRE(tiny_config(32).tap_extents() == std::array<std::size_t, 5>{32, 15, 7, 3, 1});
}

TEST_CASE("config: invalid sizes are rejected") {
    REQUIRE_THROWS_AS(tiny_config(30).validate(), uncd::ConfigError);  // third pool underflows
    REQUIRE_THROWS_AS(tiny_config(33).validate(), uncd::ConfigError);  // odd
    REQUIRE_THROWS_AS(tiny_config(0).validate(), uncd::ConfigError);
    REQUIRE_NOTHROW(tiny_config(32).validate());
    REQUIRE_NOTHROW(tiny_config(320).validate());
}

TEST_CASE("init_model: same seed gives bit-identical parameters") {
    auto a = uncd::init_model(tiny_config(), 17);
    auto b = uncd::init_model(tiny_config(), 17);
    auto c = uncd::init_model(tiny_config(), 18);
    auto pa = a.params(), pb = b.params(), pc = c.params();
    REQUIRE(pa.size() == pb.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        REQUIRE(pa[i].name == pb[i].name);
        REQUIRE(pa[i].count == pb[i].count);
        for (std::size_t j = 0; j < pa[i].count; ++j) {
            REQUIRE(pa[i].value[j] == pb[i].value[j]);
            if (pa[i].value[j] != pc[i].value[j]) any_diff = true;
        }
    }
    REQUIRE(any_diff);
}

TEST_CASE("init_model: paper-scale channel plan reaches 1024 at the bridge") {
    UNetConfig cfg;  // base 64, input 320
    auto m = uncd::init_model(cfg, 1);
    REQUIRE(m.enc[4].c2.w.shape == std::array<std::size_t, 4>{1024, 1024, 3, 3});
    REQUIRE(m.enc[0].c1.w.shape == std::array<std::size_t, 4>{64, 3, 3, 3});
    REQUIRE(m.dec[0].up.w.shape == std::array<std::size_t, 4>{1024, 512, 3, 3});
    REQUIRE(m.dec[0].c1.w.shape == std::array<std::size_t, 4>{512, 1024, 3, 3});
    REQUIRE(m.dec[3].c2.w.shape == std::array<std::size_t, 4>{64, 64, 3, 3});
    REQUIRE(m.out_w.shape == std::array<std::size_t, 4>{3, 64, 3, 3});
}

TEST_CASE("init_model: desk-scale model runs a forward pass") {
    auto m = uncd::init_model(tiny_config(32, 4), 3);
    std::mt19937 rng(5);
    const auto x = oracle::random_tensor<float>(rng, 1, 3, 32, 32, 0.0f, 1.0f);
    const auto probs = uncd::segment(m, x);
    REQUIRE(probs.shape == std::array<std::size_t, 4>{1, 3, 32, 32});
    REQUIRE(uncd::all_finite(probs));
}

TEST_CASE("encoder taps: extents shrink and channels double per level") {
    auto m = uncd::init_model(tiny_config(64, 4), 9);
    std::mt19937 rng(6);
    const auto x = oracle::random_tensor<float>(rng, 2, 3, 64, 64, 0.0f, 1.0f);
    const auto taps = uncd::encoder_forward(m, x);
    const std::array<std::size_t, 5> extents{64, 31, 15, 7, 3};
    for (std::size_t i = 0; i < 5; ++i) {
        REQUIRE(taps.level[i].height() == extents[i]);
        REQUIRE(taps.level[i].width() == extents[i]);
        REQUIRE(taps.level[i].channels() == (std::size_t(4) << i));
        REQUIRE(taps.level[i].batch() == 2);
    }
}

TEST_CASE("encoder: eval mode is deterministic across calls") {
    auto m = uncd::init_model(tiny_config(32, 4), 11);
    std::mt19937 rng(7);
    const auto x = oracle::random_tensor<float>(rng, 1, 3, 32, 32, 0.0f, 1.0f);
    const auto t1 = uncd::encoder_forward(m, x);
    const auto t2 = uncd::encoder_forward(m, x);
    for (std::size_t i = 0; i < 5; ++i) {
        REQUIRE(t1.level[i].data == t2.level[i].data);
    }
}

TEST_CASE("encoder: wrong input shape names the axis") {
    auto m = uncd::init_model(tiny_config(32, 4), 1);
    Tensor<float> bad(1, 3, 16, 16);
    REQUIRE_THROWS_AS(uncd::encoder_forward(m, bad), uncd::DimensionError);
    Tensor<float> bad2(1, 4, 32, 32);
    REQUIRE_THROWS_AS(uncd::encoder_forward(m, bad2), uncd::DimensionError);
}

TEST_CASE("decoder: all-zero inputs produce a deterministic normalized null response") {
    auto m = uncd::init_model(tiny_config(32, 4), 13);
    const auto extents = m.config.tap_extents();
    EncoderTaps<float> zeros;
    for (std::size_t i = 0; i < 5; ++i) {
        zeros.level[i] = Tensor<float>(1, m.config.channels_at(i), extents[i], extents[i]);
    }
    const auto null1 = uncd::decoder_forward(m, zeros);
    const auto null2 = uncd::decoder_forward(m, zeros);
    REQUIRE(null1.shape == std::array<std::size_t, 4>{1, 3, 32, 32});
    REQUIRE(null1.data == null2.data);
    for (std::size_t i = 0; i < 32 * 32; ++i) {
        double total = 0.0;
        for (std::size_t c = 0; c < 3; ++c) total += null1.plane(0, c)[i];
        REQUIRE_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-5));
    }
}

TEST_CASE("decoder: top-level deconv output 31 is padded to skip extent 32") {
    auto m = uncd::init_model(tiny_config(32, 4), 13);
    std::mt19937 rng(8);
    const auto x = oracle::random_tensor<float>(rng, 1, 3, 32, 32, 0.0f, 1.0f);
    uncd::EncoderCache<float> ec;
    uncd::DecoderCache<float> dc;
    auto taps = uncd::encoder_forward_train(m, x, &ec);
    uncd::decoder_forward_train(m, taps, &dc);
    REQUIRE(dc.lvl[3].pad_h == 1);
    REQUIRE(dc.lvl[3].pad_w == 1);
    REQUIRE(dc.lvl[0].pad_h == 0);  // odd extents reconstruct exactly
    REQUIRE(dc.lvl[1].pad_h == 0);
    REQUIRE(dc.lvl[2].pad_h == 0);
}

TEST_CASE("segment: probabilities normalized per pixel even untrained") {
    auto m = uncd::init_model(tiny_config(32, 4), 21);
    std::mt19937 rng(9);
    const auto x = oracle::random_tensor<float>(rng, 2, 3, 32, 32, 0.0f, 1.0f);
    const auto probs = uncd::segment(m, x);
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t i = 0; i < 32 * 32; ++i) {
            double total = 0.0;
            for (std::size_t c = 0; c < 3; ++c) total += probs.plane(n, c)[i];
            REQUIRE_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-5));
        }
}

TEST_CASE("segment: invariant to batch packing in eval mode") {
    auto m = uncd::init_model(tiny_config(32, 4), 23);
    std::mt19937 rng(10);
    const auto xa = oracle::random_tensor<float>(rng, 1, 3, 32, 32, 0.0f, 1.0f);
    const auto xb = oracle::random_tensor<float>(rng, 1, 3, 32, 32, 0.0f, 1.0f);
    Tensor<float> both(2, 3, 32, 32);
    std::copy(xa.data.begin(), xa.data.end(), both.data.begin());
    std::copy(xb.data.begin(), xb.data.end(), both.data.begin() + xa.size());
    const auto pa = uncd::segment(m, xa);
    const auto pb = uncd::segment(m, xb);
    const auto pboth = uncd::segment(m, both);
    for (std::size_t i = 0; i < pa.size(); ++i) {
        REQUIRE_THAT(pboth.data[i], Catch::Matchers::WithinAbs(pa.data[i], 1e-5));
        REQUIRE_THAT(pboth.data[pa.size() + i], Catch::Matchers::WithinAbs(pb.data[i], 1e-5));
    }
}

TEST_CASE("segment equals encoder taps piped through decoder, bitwise") {
    auto m = uncd::init_model(tiny_config(32, 4), 29);
    std::mt19937 rng(12);
    const auto x = oracle::random_tensor<float>(rng, 1, 3, 32, 32, 0.0f, 1.0f);
    const auto via_parts = uncd::decoder_forward(m, uncd::encoder_forward(m, x));
    const auto via_segment = uncd::segment(m, x);
    REQUIRE(via_parts.data == via_segment.data);
}

TEST_CASE("forward_train: loss near ln 3 at init and finite gradients") {
    auto m = uncd::init_model(tiny_config(32, 4), 31);
    std::mt19937 rng(13);
    const auto x = oracle::random_tensor<float>(rng, 2, 3, 32, 32, 0.0f, 1.0f);
    uncd::ClassMap t(2, 32, 32);
    std::uniform_int_distribution<int> cd(0, 2);
    for (auto& v : t.v) v = static_cast<std::uint8_t>(cd(rng));
    m.zero_grads();
    const double loss = uncd::forward_train(m, x, t);
    REQUIRE_THAT(loss, Catch::Matchers::WithinAbs(std::log(3.0), 0.2));
    for (auto& p : m.params()) {
        bool any_nonzero = false;
        for (std::size_t i = 0; i < p.count; ++i) {
            REQUIRE(std::isfinite(p.grad[i]));
            if (p.grad[i] != 0.0f) any_nonzero = true;
        }
        REQUIRE(any_nonzero);
    }
}

TEST_CASE("forward_train: composite finite-difference spot check") {
    auto m = uncd::init_model(tiny_config(32, 4), 37);
    std::mt19937 rng(14);
    const auto x = oracle::random_tensor<float>(rng, 2, 3, 32, 32, -1.0f, 1.0f);
    uncd::ClassMap t(2, 32, 32);
    std::uniform_int_distribution<int> cd(0, 2);
    for (auto& v : t.v) v = static_cast<std::uint8_t>(cd(rng));

    m.zero_grads();
    uncd::forward_train(m, x, t);
    auto views = m.params();

    auto dm = uncd::model_cast<double>(m);
    auto dviews = dm.params();
    const auto xd = uncd::tensor_cast<double>(x);
    auto loss_d = [&]() { return uncd::forward_loss(dm, xd, t); };

    // >= 20 random parameters across all layers. Samples whose difference
    // quotient crosses a pool/ReLU kink (detected by step halving) are tie
    // points and get resampled.
    std::uniform_int_distribution<std::size_t> pick_layer(0, views.size() - 1);
    int checked = 0, skipped = 0;
    while (checked < 24 && skipped < 200) {
        const std::size_t li = pick_layer(rng);
        std::uniform_int_distribution<std::size_t> pick_idx(0, views[li].count - 1);
        const std::size_t idx = pick_idx(rng);
        const double analytic = views[li].grad[idx];
        const auto numeric = oracle::central_diff_filtered(&dviews[li].value[idx], loss_d);
        if (!numeric.reliable) {
            ++skipped;
            continue;
        }
        INFO(views[li].name << "[" << idx << "] analytic=" << analytic << " numeric=" << numeric.value);
        REQUIRE(oracle::grad_close(analytic, numeric.value, 1e-2));
        ++checked;
    }
    REQUIRE(checked == 24);
}

TEST_CASE("model_cast: double mirror reproduces the float loss closely") {
    auto m = uncd::init_model(tiny_config(32, 4), 41);
    std::mt19937 rng(15);
    const auto x = oracle::random_tensor<float>(rng, 1, 3, 32, 32, 0.0f, 1.0f);
    uncd::ClassMap t(1, 32, 32);
    const double lf = uncd::forward_loss(m, x, t);
    auto dm = uncd::model_cast<double>(m);
    const double ld = uncd::forward_loss(dm, uncd::tensor_cast<double>(x), t);
    REQUIRE_THAT(lf, Catch::Matchers::WithinAbs(ld, 1e-4));
}
