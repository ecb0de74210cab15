#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "oracle.hpp"
#include "uncd/batchnorm.hpp"

using uncd::BatchNormCache;
using uncd::BatchNormState;
using uncd::Mode;
using uncd::Tensor;

TEST_CASE("batchnorm eval: identity configuration passes input through (up to epsilon)") {
    std::mt19937 rng(12);
    const auto x = oracle::random_tensor<float>(rng, 2, 3, 4, 4);
    BatchNormState<float> st(3);  // gamma 1, beta 0, mean 0, var 1
    auto st_copy = st;
    const auto y = uncd::batchnorm(x, st_copy, Mode::eval);
    for (std::size_t i = 0; i < x.size(); ++i) {
        REQUIRE_THAT(y.data[i], Catch::Matchers::WithinAbs(x.data[i], 1e-5));
    }
    // eval mode must not touch the running statistics
    REQUIRE(st_copy.running_mean == st.running_mean);
    REQUIRE(st_copy.running_var == st.running_var);
}

TEST_CASE("batchnorm train: per-channel output statistics are 0/1 before scale-shift") {
    std::mt19937 rng(13);
    auto x = oracle::random_tensor<float>(rng, 4, 3, 16, 16, -2.0f, 3.0f);
    BatchNormState<float> st(3);
    const auto y = uncd::batchnorm(x, st, Mode::train);
    const std::size_t m = 4 * 16 * 16;
    for (std::size_t c = 0; c < 3; ++c) {
        double sum = 0.0, sq = 0.0;
        for (std::size_t n = 0; n < 4; ++n) {
            const float* p = y.plane(n, c);
            for (std::size_t i = 0; i < 256; ++i) sum += p[i];
        }
        const double mean = sum / m;
        for (std::size_t n = 0; n < 4; ++n) {
            const float* p = y.plane(n, c);
            for (std::size_t i = 0; i < 256; ++i) sq += (p[i] - mean) * (p[i] - mean);
        }
        const double var = sq / m;
        REQUIRE_THAT(mean, Catch::Matchers::WithinAbs(0.0, 1e-5));
        REQUIRE_THAT(var, Catch::Matchers::WithinAbs(1.0, 1e-3));
    }
}

TEST_CASE("batchnorm train: running statistics move toward batch statistics") {
    std::mt19937 rng(14);
    auto x = oracle::random_tensor<float>(rng, 2, 1, 8, 8, 1.0f, 3.0f);
    BatchNormState<float> st(1);
    uncd::batchnorm(x, st, Mode::train);
    REQUIRE(st.running_mean[0] > 0.0f);   // moved from 0 toward ~2
    REQUIRE(st.running_mean[0] < 1.0f);   // momentum 0.1 keeps it close to 0
    REQUIRE(st.running_var[0] > 0.0f);
}

TEST_CASE("batchnorm train: constant channel stays finite") {
    Tensor<float> x(2, 2, 4, 4);
    for (auto& v : x.data) v = 3.5f;
    BatchNormState<float> st(2);
    const auto y = uncd::batchnorm(x, st, Mode::train);
    REQUIRE(uncd::all_finite(y));
    for (float v : st.running_var) REQUIRE(v > 0.0f);
}

TEST_CASE("batchnorm: degenerate and mismatched inputs") {
    BatchNormState<float> st(2);
    Tensor<float> empty(0, 2, 4, 4);
    REQUIRE_THROWS_AS(uncd::batchnorm(empty, st, Mode::train), uncd::DataError);
    Tensor<float> wrong(1, 3, 4, 4);
    REQUIRE_THROWS_AS(uncd::batchnorm(wrong, st, Mode::train), uncd::DimensionError);
}

TEST_CASE("batchnorm_grad: zero upstream gives zero gradients") {
    std::mt19937 rng(15);
    auto x = oracle::random_tensor<float>(rng, 2, 2, 4, 4);
    BatchNormState<float> st(2);
    BatchNormCache<float> cache;
    uncd::batchnorm(x, st, Mode::train, &cache);
    Tensor<float> up(x.shape);
    const auto g = uncd::batchnorm_grad(cache, st, up);
    for (float v : g.input.data) REQUIRE(v == 0.0f);
    for (float v : g.gamma) REQUIRE(v == 0.0f);
    for (float v : g.beta) REQUIRE(v == 0.0f);
}

TEST_CASE("batchnorm_grad: beta gradient is the channel sum of upstream") {
    std::mt19937 rng(16);
    auto x = oracle::random_tensor<float>(rng, 2, 3, 5, 5);
    const auto up = oracle::random_tensor<float>(rng, 2, 3, 5, 5);
    BatchNormState<float> st(3);
    BatchNormCache<float> cache;
    uncd::batchnorm(x, st, Mode::train, &cache);
    const auto g = uncd::batchnorm_grad(cache, st, up);
    for (std::size_t c = 0; c < 3; ++c) {
        double expect = 0.0;
        for (std::size_t n = 0; n < 2; ++n) {
            const float* u = up.plane(n, c);
            for (std::size_t i = 0; i < 25; ++i) expect += u[i];
        }
        REQUIRE_THAT(double(g.beta[c]), Catch::Matchers::WithinAbs(expect, 1e-4));
    }
}

TEST_CASE("batchnorm_grad: finite differences through batch statistics") {
    std::mt19937 rng(161);
    const auto xf = oracle::random_tensor<float>(rng, 2, 2, 4, 3);
    const auto upf = oracle::random_tensor<float>(rng, 2, 2, 4, 3);
    BatchNormState<float> stf(2);
    stf.gamma = {1.3f, 0.8f};
    stf.beta = {-0.2f, 0.4f};
    BatchNormCache<float> cache;
    uncd::batchnorm(xf, stf, Mode::train, &cache);
    const auto g = uncd::batchnorm_grad(cache, stf, upf);

    auto xd = uncd::tensor_cast<double>(xf);
    const auto upd = uncd::tensor_cast<double>(upf);
    BatchNormState<double> std_;
    std_.gamma = {1.3, 0.8};
    std_.beta = {-0.2, 0.4};
    std_.running_mean = {0.0, 0.0};
    std_.running_var = {1.0, 1.0};
    std_.momentum = 0.1;
    std_.epsilon = 1e-5;
    auto loss = [&]() {
        auto st_local = std_;
        const auto y = uncd::batchnorm(xd, st_local, Mode::train);
        double acc = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) acc += y.data[i] * upd.data[i];
        return acc;
    };
    for (std::size_t i = 0; i < xd.size(); i += 2) {
        const double num = oracle::central_diff(&xd.data[i], loss);
        REQUIRE(oracle::grad_close(g.input.data[i], num, 1e-3));
    }
    for (std::size_t c = 0; c < 2; ++c) {
        const double num_g = oracle::central_diff(&std_.gamma[c], loss);
        REQUIRE(oracle::grad_close(g.gamma[c], num_g, 1e-3));
        const double num_b = oracle::central_diff(&std_.beta[c], loss);
        REQUIRE(oracle::grad_close(g.beta[c], num_b, 1e-3));
    }
}
