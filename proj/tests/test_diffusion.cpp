#include "pianotimbre/diffusion.hpp"
#include "pianotimbre/model.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace pt;
using pt::test::exact_v;
using pt::test::code_of;
using pt::test::random_tensor;

namespace {

// Velocity that a perfect model would return if the clean signal were `x0`.
double rms_diff(const Tensor<double>& a, const Tensor<double>& b)
{
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s / static_cast<double>(a.size()));
}

ModelConfig tiny_model()
{
    ModelConfig m;
    m.unet.input_length = 256;
    m.unet.base_channels = 8;
    m.unet.channel_multipliers = {1, 2};
    m.unet.downsample_factors = {4};
    m.unet.attention_levels = {1};
    m.unet.attention_heads = 2;
    m.unet.time_embedding_dim = 8;
    m.unet.norm_groups = 4;
    m.pitch_dim = 4;
    m.loudness_dim = 4;
    m.codebook_size = 4;
    m.hop_samples = 32;
    m.sync_derived();
    return m;
}

ConditionIndices some_condition(std::size_t frames)
{
    ConditionIndices c;
    for (std::size_t f = 0; f < frames; ++f) {
        c.pitch.push_back(static_cast<int>((f * 7) % 37));
        c.loudness.push_back(static_cast<int>(f % 4));
    }
    return c;
}

} // namespace

TEST_CASE("cosine schedule")
{
    CHECK(alpha_sigma(0.0).alpha == 1.0);
    CHECK(alpha_sigma(0.0).sigma == 0.0);
    CHECK(std::abs(alpha_sigma(1.0).alpha) < 1e-15);
    CHECK(alpha_sigma(1.0).sigma == 1.0);
    CHECK(alpha_sigma(0.5).alpha == doctest::Approx(0.70710678).epsilon(1e-8));
    CHECK(alpha_sigma(0.5).sigma == doctest::Approx(0.70710678).epsilon(1e-8));

    std::mt19937_64 rng(20);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
        const auto n = alpha_sigma(u(rng));
        CHECK(std::abs(n.alpha * n.alpha + n.sigma * n.sigma - 1.0) < 1e-12);
    }
    CHECK(code_of([] { alpha_sigma(-0.01); }) == ErrorCode::TOutOfRange);
    CHECK(code_of([] { alpha_sigma(1.01); }) == ErrorCode::TOutOfRange);
}

TEST_CASE("q_sample and v_target")
{
    std::mt19937_64 rng(21);
    const auto x0 = random_tensor<double>({1, 32}, rng);
    const auto eps = random_tensor<double>({1, 32}, rng);
    CHECK(q_sample(x0, eps, 0.0) == x0);
    const auto x1 = q_sample(x0, eps, 1.0);
    for (std::size_t i = 0; i < 32; ++i)
        CHECK(x1[i] == doctest::Approx(eps[i]).epsilon(1e-14));

    const auto half = q_sample(Tensor<double>({1, 1}, 1.0), Tensor<double>({1, 1}, -1.0), 0.5);
    CHECK(std::abs(half[0]) < 1e-15);

    CHECK(v_target(x0, eps, 0.0) == eps);
    const auto v1 = v_target(x0, eps, 1.0);
    for (std::size_t i = 0; i < 32; ++i)
        CHECK(v1[i] == doctest::Approx(-x0[i]).epsilon(1e-14));

    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const double t = u(rng);
        const auto xt = q_sample(x0, eps, t);
        const auto v = v_target(x0, eps, t);
        const auto [x0_back, eps_back] = split_prediction(xt, v, t);
        for (std::size_t i = 0; i < 32; ++i) {
            CHECK(std::abs(x0_back[i] - x0[i]) < 1e-6);
            CHECK(std::abs(eps_back[i] - eps[i]) < 1e-6);
        }
    }

    CHECK(code_of([&] { q_sample(x0, Tensor<double>({1, 31}), 0.3); }) == ErrorCode::DimMismatch);
    CHECK(code_of([&] { v_target(x0, Tensor<double>({2, 16}), 0.3); }) == ErrorCode::DimMismatch);
}

TEST_CASE("ddim with an exact-velocity oracle returns the oracle signal")
{
    std::mt19937_64 rng(22);
    const auto x0 = random_tensor<double>({1, 64}, rng, 0.3);
    const auto model = exact_v(x0);
    for (int steps : {1, 5, 50}) {
        const auto out = ddim_sample<double>(model, {1, 64}, steps, 7);
        for (std::size_t i = 0; i < 64; ++i)
            CHECK(std::abs(out[i] - x0[i]) < 1e-4);
    }
    const auto one = ddim_sample<double>(model, {1, 64}, 1, 3);
    for (std::size_t i = 0; i < 64; ++i)
        CHECK(one[i] == doctest::Approx(x0[i]).epsilon(1e-12));

    CHECK(ddim_sample<double>(model, {1, 64}, 10, 9) == ddim_sample<double>(model, {1, 64}, 10, 9));
}

TEST_CASE("ddpm: seeded, degenerate to ddim, converges with an exact oracle")
{
    std::mt19937_64 rng(23);
    const auto x0 = random_tensor<double>({1, 64}, rng, 0.3);
    const auto model = exact_v(x0);
    CHECK(ddpm_sample<double>(model, {1, 64}, 20, 4) == ddpm_sample<double>(model, {1, 64}, 20, 4));
    CHECK(ddpm_sample<double>(model, {1, 64}, 20, 4) != ddpm_sample<double>(model, {1, 64}, 20, 5));
    CHECK(ddpm_sample<double>(model, {1, 64}, 20, 4, 0.0) == ddim_sample<double>(model, {1, 64}, 20, 4));
    CHECK(rms_diff(ddpm_sample<double>(model, {1, 64}, 200, 11), x0) < 0.05);

    // A model that ignores its input: sampling still terminates and stays finite.
    VelocityFn<double> zero = [](const Tensor<double>& x, double) { return Tensor<double>(x.dims()); };
    CHECK(ddpm_sample<double>(zero, {1, 16}, 10, 1).all_finite());
}

TEST_CASE("standard_normal draws follow the seed")
{
    std::mt19937_64 a(5), b(5);
    CHECK(standard_normal<float>({2, 100}, a) == standard_normal<float>({2, 100}, b));
    std::mt19937_64 c(6);
    const auto n = standard_normal<double>({1, 20000}, c);
    double mean = 0, sq = 0;
    for (double v : n.values())
        mean += v;
    mean /= 20000;
    for (double v : n.values())
        sq += (v - mean) * (v - mean);
    CHECK(std::abs(mean) < 0.03);
    CHECK(std::abs(sq / 20000 - 1.0) < 0.05);
}

TEST_CASE("loss_v: zero target, zero model, batch average")
{
    const auto cfg = tiny_model();
    DiffusionModel<double> model(cfg);
    model.init(3);
    const auto cond = some_condition(cfg.unet.condition_frames);
    const Dims dims{1, cfg.unet.input_length};

    const Tensor<double> zeros(dims);
    CHECK(loss_v_fixed(model, zeros, cond, 0.4, zeros, false) == 0.0);

    std::mt19937_64 rng(24);
    const auto x0 = random_tensor<double>(dims, rng, 0.5);
    const auto eps = random_tensor<double>(dims, rng);
    const double t = 0.37;
    const auto v = v_target(x0, eps, t);
    double mean_sq = 0;
    for (double x : v.values())
        mean_sq += x * x;
    mean_sq /= static_cast<double>(v.size());
    CHECK(loss_v_fixed(model, x0, cond, t, eps, false) == doctest::Approx(mean_sq).epsilon(1e-12));

    const auto x1 = random_tensor<double>(dims, rng, 0.5);
    std::mt19937_64 r1(99), r2(99);
    const double both = loss_v(model, {x0, x1}, {cond, cond}, r1, false);
    const double a = loss_v(model, {x0}, {cond}, r2, false);
    const double b = loss_v(model, {x1}, {cond}, r2, false);
    CHECK(both == doctest::Approx((a + b) / 2).epsilon(1e-12));

    CHECK(code_of([&] { loss_v(model, {x0}, {cond, cond}, r1, false); }) == ErrorCode::DimMismatch);
}
