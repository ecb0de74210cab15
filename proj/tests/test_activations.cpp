#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "oracle.hpp"
#include "uncd/activations.hpp"

using uncd::Tensor;

TEST_CASE("leaky_relu: slope 0.2 on the negative branch") {
    Tensor<float> x(1, 1, 1, 3);
    x.data = {-1.0f, 3.5f, 0.0f};
    const auto y = uncd::leaky_relu(x);
    REQUIRE(y.data[0] == -0.2f);
    REQUIRE(y.data[1] == 3.5f);
    REQUIRE(y.data[2] == 0.0f);

    Tensor<float> up(1, 1, 1, 3);
    up.data = {1.0f, 1.0f, 1.0f};
    const auto g = uncd::leaky_relu_grad(x, up);
    REQUIRE(g.data[0] == 0.2f);
    REQUIRE(g.data[1] == 1.0f);
    REQUIRE(g.data[2] == 0.2f);  // tie rule: negative-branch slope at exactly 0
}

TEST_CASE("softmax_channels: equal logits give uniform probabilities") {
    Tensor<float> x(1, 3, 2, 2);
    for (auto& v : x.data) v = 0.7f;
    const auto y = uncd::softmax_channels(x);
    for (float v : y.data) REQUIRE_THAT(v, Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-6));
}

TEST_CASE("softmax_channels: huge logit does not overflow") {
    Tensor<float> x(1, 3, 1, 1);
    x.data = {1000.0f, 0.0f, 0.0f};
    const auto y = uncd::softmax_channels(x);
    REQUIRE(uncd::all_finite(y));
    REQUIRE_THAT(y.data[0], Catch::Matchers::WithinAbs(1.0, 1e-6));
    REQUIRE_THAT(y.data[1], Catch::Matchers::WithinAbs(0.0, 1e-6));
}

TEST_CASE("softmax_channels: logits (1,2,3)") {
    Tensor<float> x(1, 3, 1, 1);
    x.data = {1.0f, 2.0f, 3.0f};
    const auto y = uncd::softmax_channels(x);
    REQUIRE_THAT(y.data[0], Catch::Matchers::WithinAbs(0.0900, 1e-4));
    REQUIRE_THAT(y.data[1], Catch::Matchers::WithinAbs(0.2447, 1e-4));
    REQUIRE_THAT(y.data[2], Catch::Matchers::WithinAbs(0.6652, 1e-4));
}

TEST_CASE("softmax_channels: sums to one and is shift-invariant") {
    std::mt19937 rng(21);
    const auto x = oracle::random_tensor<float>(rng, 2, 3, 5, 5, -4.0f, 4.0f);
    const auto y = uncd::softmax_channels(x);
    auto shifted = x;
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t c = 0; c < 3; ++c) {
            float* p = shifted.plane(n, c);
            for (std::size_t i = 0; i < 25; ++i) p[i] += 11.25f;
        }
    const auto y2 = uncd::softmax_channels(shifted);
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t i = 0; i < 25; ++i) {
            double total = 0.0;
            for (std::size_t c = 0; c < 3; ++c) total += y.plane(n, c)[i];
            REQUIRE_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-5));
        }
    for (std::size_t i = 0; i < y.size(); ++i) {
        REQUIRE_THAT(y2.data[i], Catch::Matchers::WithinAbs(y.data[i], 1e-5));
    }
}

TEST_CASE("cross_entropy_loss: perfect prediction has zero loss") {
    Tensor<float> probs(1, 3, 2, 2);
    uncd::ClassMap t(1, 2, 2);
    t.v = {0, 1, 2, 0};
    for (std::size_t i = 0; i < 4; ++i) probs.plane(0, t.v[i])[i] = 1.0f;
    const auto r = uncd::cross_entropy_loss(probs, t);
    REQUIRE_THAT(r.loss, Catch::Matchers::WithinAbs(0.0, 1e-9));
}

TEST_CASE("cross_entropy_loss: uniform prediction over 3 classes is ln 3") {
    Tensor<float> probs(2, 3, 3, 3);
    for (auto& v : probs.data) v = 1.0f / 3.0f;
    uncd::ClassMap t(2, 3, 3);
    const auto r = uncd::cross_entropy_loss(probs, t);
    REQUIRE_THAT(r.loss, Catch::Matchers::WithinAbs(std::log(3.0), 1e-6));
}

TEST_CASE("cross_entropy_loss: out-of-range class index") {
    Tensor<float> probs(1, 3, 1, 1);
    probs.data = {0.2f, 0.3f, 0.5f};
    uncd::ClassMap t(1, 1, 1);
    t.v = {3};
    REQUIRE_THROWS_AS(uncd::cross_entropy_loss(probs, t), uncd::DataError);
}

TEST_CASE("cross_entropy_loss and softmax compose to correct gradients") {
    std::mt19937 rng(22);
    const auto logits_f = oracle::random_tensor<float>(rng, 1, 3, 3, 3, -1.5f, 1.5f);
    uncd::ClassMap t(1, 3, 3);
    std::uniform_int_distribution<int> cd(0, 2);
    for (auto& v : t.v) v = static_cast<std::uint8_t>(cd(rng));

    const auto probs_f = uncd::softmax_channels(logits_f);
    const auto ce = uncd::cross_entropy_loss(probs_f, t);
    const auto dlogits = uncd::softmax_channels_grad(probs_f, ce.probs_grad);

    auto logits_d = uncd::tensor_cast<double>(logits_f);
    auto loss = [&]() {
        const auto p = uncd::softmax_channels(logits_d);
        return uncd::cross_entropy_loss(p, t).loss;
    };
    for (std::size_t i = 0; i < logits_d.size(); ++i) {
        const double num = oracle::central_diff(&logits_d.data[i], loss);
        REQUIRE(oracle::grad_close(dlogits.data[i], num, 1e-3));
    }
}

TEST_CASE("cross_entropy_loss: probability-space gradient matches finite differences") {
    std::mt19937 rng(23);
    const auto probs_f = oracle::random_tensor<float>(rng, 1, 3, 2, 2, 0.05f, 1.0f);
    uncd::ClassMap t(1, 2, 2);
    t.v = {2, 0, 1, 1};
    const auto ce = uncd::cross_entropy_loss(probs_f, t);

    auto probs_d = uncd::tensor_cast<double>(probs_f);
    auto loss = [&]() { return uncd::cross_entropy_loss(probs_d, t).loss; };
    for (std::size_t i = 0; i < probs_d.size(); ++i) {
        const double num = oracle::central_diff(&probs_d.data[i], loss);
        REQUIRE(oracle::grad_close(ce.probs_grad.data[i], num, 1e-3));
    }
}
