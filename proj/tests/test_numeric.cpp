#include "pianotimbre/layers.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>
#include <numeric>
#include <random>

using namespace pt;
using pt::test::code_of;
using pt::test::max_relative_error;
using pt::test::layer_gradcheck;
using pt::test::random_tensor;
using pt::test::randomize;


TEST_CASE("linear_forward: identity, hand product and zero weights")
{
    Tensor<float> x({2, 2}, {1, 2, 3, 4});
    Tensor<float> eye({2, 2}, {1, 0, 0, 1});
    Tensor<float> zero_b({2}, 0.0f);
    CHECK(linear_forward(x, eye, zero_b) == x);

    Tensor<double> x1({1, 2}, {1, 2});
    Tensor<double> w({2, 2}, {1, 1, 0, 1});
    const auto y = linear_forward(x1, w, Tensor<double>({2}, 0.0));
    // Hand product: [1*1 + 2*1, 1*0 + 2*1].
    CHECK(y.storage() == std::vector<double>{3, 2});

    Tensor<float> b({2}, {0.5f, -1.5f});
    const auto yb = linear_forward(x, Tensor<float>({2, 2}, 0.0f), b);
    CHECK(yb.storage() == std::vector<float>{0.5f, -1.5f, 0.5f, -1.5f});

    CHECK(code_of([&] { linear_forward(Tensor<float>({1, 3}), eye, zero_b); }) == ErrorCode::DimMismatch);
}

TEST_CASE("conv1d_forward: delta kernel, direct oracle and zero kernel")
{
    std::mt19937_64 rng(1);
    const auto x = random_tensor<double>({1, 9}, rng);
    CHECK(conv1d_forward(x, Tensor<double>({1, 1, 1}, 1.0), Tensor<double>{}, 1, 0) == x);

    Tensor<double> pulse({1, 4}, {0, 1, 0, 0});
    const auto y = conv1d_forward(pulse, Tensor<double>({1, 1, 3}, 1.0), Tensor<double>{}, 1, 1);
    CHECK(y.storage() == std::vector<double>{1, 1, 1, 0});

    const auto z = conv1d_forward(x, Tensor<double>({2, 1, 3}, 0.0), Tensor<double>{}, 1, 1);
    for (double v : z.values())
        CHECK(v == 0.0);

    // Strided, padded, multi-channel against a direct loop.
    const auto xi = random_tensor<double>({3, 11}, rng);
    const auto k = random_tensor<double>({4, 3, 5}, rng);
    const auto b = random_tensor<double>({4}, rng);
    const std::size_t stride = 2, pad = 2;
    const auto out = conv1d_forward(xi, k, b, stride, pad);
    const std::size_t lo = (11 + 2 * pad - 5) / stride + 1;
    REQUIRE(out.dims() == Dims{4, lo});
    for (std::size_t o = 0; o < 4; ++o)
        for (std::size_t t = 0; t < lo; ++t) {
            double acc = b[o];
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t j = 0; j < 5; ++j) {
                    const long pos = static_cast<long>(t * stride + j) - static_cast<long>(pad);
                    if (pos >= 0 && pos < 11)
                        acc += k[(o * 3 + c) * 5 + j] * xi(c, static_cast<std::size_t>(pos));
                }
            CHECK(out(o, t) == doctest::Approx(acc).epsilon(1e-12));
        }

    CHECK(code_of([&] { conv1d_forward(random_tensor<double>({2, 9}, rng), k, b, 1, 1); }) == ErrorCode::DimMismatch);
}

TEST_CASE("self attention: single position, equivariance, softmax rows")
{
    std::mt19937_64 rng(2);
    SelfAttention<double> att("att", 8, 2, 4);
    att.init(rng);

    SUBCASE("L = 1 reduces to x + proj(value)")
    {
        const auto x = random_tensor<double>({8, 1}, rng);
        const auto y = att.forward(x);
        for (const auto& a : att.attention_weights())
            CHECK(a[0] == doctest::Approx(1.0));

        GroupNorm<double> norm("n", 8, 4);
        const auto qkv = conv1d_forward(norm.forward(x), att.qkv.weight.value, att.qkv.bias.value, 1, 0);
        Tensor<double> value({8, 1});
        for (std::size_t c = 0; c < 8; ++c)
            value[c] = qkv[16 + c];
        const auto expect = conv1d_forward(value, att.proj.weight.value, att.proj.bias.value, 1, 0);
        for (std::size_t c = 0; c < 8; ++c)
            CHECK(y[c] == doctest::Approx(x[c] + expect[c]).epsilon(1e-12));
    }

    SUBCASE("permuting time permutes outputs")
    {
        const std::size_t L = 7;
        const auto x = random_tensor<double>({8, L}, rng);
        std::vector<std::size_t> perm(L);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        Tensor<double> xp({8, L});
        for (std::size_t c = 0; c < 8; ++c)
            for (std::size_t t = 0; t < L; ++t)
                xp(c, t) = x(c, perm[t]);
        const auto y = att.forward(x);
        const auto yp = att.forward(xp);
        for (std::size_t c = 0; c < 8; ++c)
            for (std::size_t t = 0; t < L; ++t)
                CHECK(yp(c, t) == doctest::Approx(y(c, perm[t])).epsilon(1e-10));
    }

    SUBCASE("attention rows sum to one")
    {
        att.forward(random_tensor<double>({8, 13}, rng, 3.0));
        for (const auto& a : att.attention_weights())
            for (std::size_t i = 0; i < 13; ++i) {
                double s = 0;
                for (std::size_t j = 0; j < 13; ++j)
                    s += a(i, j);
                CHECK(std::abs(s - 1.0) < 1e-6);
            }
    }

    CHECK(code_of([] { SelfAttention<float>("bad", 6, 4, 2); }) == ErrorCode::DimMismatch);
}

TEST_CASE("group norm: per-group moments before affine")
{
    std::mt19937_64 rng(3);
    GroupNorm<double> gn("gn", 12, 3);
    auto x = random_tensor<double>({12, 50}, rng, 4.0);
    for (std::size_t i = 0; i < x.size(); ++i)
        x[i] += static_cast<double>(i % 7);
    gn.gamma.value = random_tensor<double>({12}, rng);
    gn.beta.value = random_tensor<double>({12}, rng);
    gn.forward(x);
    const auto& xhat = gn.normalized();
    for (std::size_t g = 0; g < 3; ++g) {
        double sum = 0, sq = 0;
        const std::size_t n = 4 * 50;
        for (std::size_t c = g * 4; c < g * 4 + 4; ++c)
            for (std::size_t t = 0; t < 50; ++t)
                sum += xhat(c, t);
        const double mean = sum / n;
        for (std::size_t c = g * 4; c < g * 4 + 4; ++c)
            for (std::size_t t = 0; t < 50; ++t)
                sq += (xhat(c, t) - mean) * (xhat(c, t) - mean);
        CHECK(std::abs(mean) < 1e-4);
        CHECK(std::abs(sq / n - 1.0) < 1e-4);
    }
}

TEST_CASE("gradient check: each layer in 64-bit mode")
{
    std::mt19937_64 rng(4);

    SUBCASE("linear")
    {
        Linear<double> l("lin", 5, 3);
        l.init(rng);
        ParamRefs<double> p;
        l.collect(p);
        CHECK(layer_gradcheck(l, random_tensor<double>({4, 5}, rng), p, rng) < 1e-6);
    }
    SUBCASE("conv1d, same padding")
    {
        Conv1d<double> c("conv", 3, 4, 3, 1, 1);
        c.init(rng);
        ParamRefs<double> p;
        c.collect(p);
        CHECK(layer_gradcheck(c, random_tensor<double>({3, 10}, rng), p, rng) < 1e-6);
    }
    SUBCASE("conv1d, strided")
    {
        Conv1d<double> c("down", 2, 3, 4, 2, 1);
        c.init(rng);
        ParamRefs<double> p;
        c.collect(p);
        CHECK(layer_gradcheck(c, random_tensor<double>({2, 12}, rng), p, rng) < 1e-6);
    }
    SUBCASE("group norm")
    {
        GroupNorm<double> gn("gn", 6, 2);
        ParamRefs<double> p;
        gn.collect(p);
        randomize(p, rng);
        CHECK(layer_gradcheck(gn, random_tensor<double>({6, 9}, rng, 2.0), p, rng) < 1e-6);
    }
    SUBCASE("SiLU")
    {
        SiLU<double> s;
        CHECK(layer_gradcheck(s, random_tensor<double>({3, 8}, rng, 2.0), {}, rng) < 1e-6);
    }
    SUBCASE("self attention")
    {
        SelfAttention<double> a("att", 4, 2, 2);
        a.init(rng);
        ParamRefs<double> p;
        a.collect(p);
        randomize(p, rng);
        CHECK(layer_gradcheck(a, random_tensor<double>({4, 6}, rng), p, rng) < 1e-6);
    }
}

TEST_CASE("backward before forward reports GraphNotRecorded")
{
    Linear<double> l("l", 2, 2);
    Conv1d<double> c("c", 1, 1, 3, 1, 1);
    GroupNorm<double> g("g", 2, 1);
    SiLU<double> s;
    SelfAttention<double> a("a", 2, 1, 1);
    CHECK(code_of([&] { l.backward(Tensor<double>({1, 2})); }) == ErrorCode::GraphNotRecorded);
    CHECK(code_of([&] { c.backward(Tensor<double>({1, 4})); }) == ErrorCode::GraphNotRecorded);
    CHECK(code_of([&] { g.backward(Tensor<double>({2, 4})); }) == ErrorCode::GraphNotRecorded);
    CHECK(code_of([&] { s.backward(Tensor<double>({2, 4})); }) == ErrorCode::GraphNotRecorded);
    CHECK(code_of([&] { a.backward(Tensor<double>({2, 4})); }) == ErrorCode::GraphNotRecorded);
}

TEST_CASE("adam: zero gradient, first step, scalar recurrence")
{
    AdamConfig cfg;
    cfg.learning_rate = 0.01;

    Parameter<double> p("p", {3});
    p.value = Tensor<double>({3}, {0.5, -1.0, 2.0});
    const auto before = p.value;
    adam_step<double>({&p}, cfg);
    CHECK(p.value == before);
    CHECK(p.step_count == 1);

    Parameter<double> q("q", {2});
    q.grad = Tensor<double>({2}, {3.0, -0.25});
    adam_step<double>({&q}, cfg);
    CHECK(q.value[0] == doctest::Approx(-cfg.learning_rate).epsilon(1e-6));
    CHECK(q.value[1] == doctest::Approx(cfg.learning_rate).epsilon(1e-6));

    // Two steps of constant g, followed by hand.
    const double g = 0.7, lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double x = 1.0, m = 0, v = 0;
    for (int t = 1; t <= 2; ++t) {
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        x -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    }
    Parameter<double> s("s", {1});
    s.value[0] = 1.0;
    AdamConfig c2;
    c2.learning_rate = lr;
    for (int t = 0; t < 2; ++t) {
        s.grad[0] = g;
        adam_step<double>({&s}, c2);
    }
    CHECK(s.value[0] == doctest::Approx(x).epsilon(1e-14));
    CHECK(s.step_count == 2);
}

TEST_CASE("forward passes are bit-identical on repeat")
{
    std::mt19937_64 rng(5);
    SelfAttention<float> a("a", 8, 2, 4);
    a.init(rng);
    Conv1d<float> c("c", 8, 8, 3, 1, 1);
    c.init(rng);
    const auto x = random_tensor<float>({8, 33}, rng);
    const auto y1 = c.forward(a.forward(x));
    const auto y2 = c.forward(a.forward(x));
    CHECK(y1 == y2);
}

TEST_CASE("finite-check mode throws on NaN")
{
    set_finite_checks(true);
    Linear<float> l("l", 1, 1);
    l.weight.value[0] = 1.0f;
    const auto code = code_of([&] { l.forward(Tensor<float>({1, 1}, std::nanf(""))); });
    set_finite_checks(false);
    CHECK(code == ErrorCode::NonFiniteLoss);
    CHECK_NOTHROW(l.forward(Tensor<float>({1, 1}, std::nanf(""))));
}
