#pragma once

#include "pianotimbre/diffusion.hpp"
#include "pianotimbre/layers.hpp"
#include "pianotimbre/model.hpp"
#include "test_support.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace pt::test {

constexpr double kGradStep = 1e-5;
// Gradients smaller than this are judged on absolute error.
constexpr double kGradFloor = 1e-3;

inline double weighted_sum(const Tensor<double>& y, const Tensor<double>& w)
{
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
        s += y[i] * w[i];
    return s;
}

inline std::vector<double> central_differences(std::span<double> values, const std::function<double()>& loss)
{
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double keep = values[i];
        values[i] = keep + kGradStep;
        const double up = loss();
        values[i] = keep - kGradStep;
        const double down = loss();
        values[i] = keep;
        out[i] = (up - down) / (2 * kGradStep);
    }
    return out;
}

inline std::vector<double> to_vec(const Tensor<double>& t) { return {t.values().begin(), t.values().end()}; }

/// Worst relative error over the input gradient and every parameter gradient of
/// loss = sum(w * layer(x)) for a random w.
template <typename Layer>
double layer_gradcheck(Layer& layer, Tensor<double> x, ParamRefs<double> params, std::mt19937_64& rng)
{
    const auto y0 = layer.forward(x);
    const auto w = random_tensor<double>(y0.dims(), rng);
    zero_grads(params);
    const auto dx = layer.backward(w);

    auto loss = [&] { return weighted_sum(layer.forward(x), w); };
    double worst = max_relative_error(to_vec(dx), central_differences(x.values(), loss), kGradFloor);
    for (auto* p : params)
        worst = std::max(worst,
                         max_relative_error(to_vec(p->grad), central_differences(p->value.values(), loss), kGradFloor));
    return worst;
}

inline void randomize(ParamRefs<double>& params, std::mt19937_64& rng)
{
    for (auto* p : params)
        p->value = random_tensor<double>(p->value.dims(), rng, 0.5);
}

/// Worst error of each layer type's 64-bit gradient check.
inline std::vector<std::pair<std::string, double>> all_layer_gradchecks(std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::vector<std::pair<std::string, double>> out;
    {
        Linear<double> l("lin", 5, 3);
        l.init(rng);
        ParamRefs<double> p;
        l.collect(p);
        out.emplace_back("linear", layer_gradcheck(l, random_tensor<double>({4, 5}, rng), p, rng));
    }
    {
        Conv1d<double> c("conv", 3, 4, 3, 1, 1);
        c.init(rng);
        ParamRefs<double> p;
        c.collect(p);
        out.emplace_back("conv1d", layer_gradcheck(c, random_tensor<double>({3, 10}, rng), p, rng));
    }
    {
        Conv1d<double> c("down", 2, 3, 4, 2, 1);
        c.init(rng);
        ParamRefs<double> p;
        c.collect(p);
        out.emplace_back("conv1d strided", layer_gradcheck(c, random_tensor<double>({2, 12}, rng), p, rng));
    }
    {
        GroupNorm<double> gn("gn", 6, 2);
        ParamRefs<double> p;
        gn.collect(p);
        randomize(p, rng);
        out.emplace_back("group norm", layer_gradcheck(gn, random_tensor<double>({6, 9}, rng, 2.0), p, rng));
    }
    {
        SiLU<double> s;
        out.emplace_back("silu", layer_gradcheck(s, random_tensor<double>({3, 8}, rng, 2.0), {}, rng));
    }
    {
        SelfAttention<double> a("att", 4, 2, 2);
        a.init(rng);
        ParamRefs<double> p;
        a.collect(p);
        randomize(p, rng);
        out.emplace_back("self attention", layer_gradcheck(a, random_tensor<double>({4, 6}, rng), p, rng));
    }
    return out;
}

/// L=256 three-level network used by the composed gradient check.
inline ModelConfig tiny_unet_model()
{
    ModelConfig m;
    m.unet.input_length = 256;
    m.unet.base_channels = 8;
    m.unet.channel_multipliers = {1, 2, 2};
    m.unet.downsample_factors = {4, 2};
    m.unet.attention_levels = {1, 2};
    m.unet.attention_heads = 2;
    m.unet.time_embedding_dim = 8;
    m.unet.norm_groups = 4;
    m.pitch_dim = 4;
    m.loudness_dim = 4;
    m.codebook_size = 5;
    m.hop_samples = 32;
    m.sync_derived();
    return m;
}

inline ConditionIndices cyclic_condition(std::size_t frames)
{
    ConditionIndices c;
    for (std::size_t f = 0; f < frames; ++f) {
        c.pitch.push_back(static_cast<int>((f * 5 + 3) % 37));
        c.loudness.push_back(static_cast<int>(f % 5));
    }
    return c;
}

struct ModelGradcheck {
    double worst = 0;
    std::string worst_parameter;
};

/// Directional central differences on the v-loss, one random unit direction per
/// parameter tensor, step h in 32-bit arithmetic.
inline ModelGradcheck model_gradcheck(const ModelConfig& cfg, std::uint64_t seed, double h = 1e-2)
{
    DiffusionModel<float> model(cfg);
    model.init(5);
    std::mt19937_64 rng(seed);
    auto& head = model.unet().output_conv().weight.value;
    head = random_tensor<float>(head.dims(), rng, 0.2);

    const auto cond = cyclic_condition(cfg.unet.condition_frames);
    const auto x0 = random_tensor<float>({1, cfg.unet.input_length}, rng, 0.5);
    const auto eps = random_tensor<float>({1, cfg.unet.input_length}, rng);
    const double t = 0.4;

    auto params = model.parameters();
    zero_grads(params);
    loss_v_fixed(model, x0, cond, t, eps, true);

    ModelGradcheck out;
    for (auto* p : params) {
        auto dir = random_tensor<float>(p->value.dims(), rng);
        double dnorm = 0;
        for (float d : dir.values())
            dnorm += static_cast<double>(d) * d;
        dnorm = std::sqrt(dnorm);
        for (auto& d : dir.values())
            d = static_cast<float>(d / dnorm);
        double analytic = 0;
        for (std::size_t i = 0; i < dir.size(); ++i)
            analytic += static_cast<double>(p->grad[i]) * dir[i];

        const auto keep = p->value;
        auto shifted = [&](double s) {
            for (std::size_t i = 0; i < dir.size(); ++i)
                p->value[i] = static_cast<float>(keep[i] + s * dir[i]);
            const double l = loss_v_fixed(model, x0, cond, t, eps, false);
            p->value = keep;
            return l;
        };
        const double numeric = (shifted(h) - shifted(-h)) / (2 * h);
        const double err = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-3});
        if (err > out.worst) {
            out.worst = err;
            out.worst_parameter = p->name;
        }
    }
    return out;
}

struct HistogramRow {
    const char* name;
    int count;
};

// Corpus pitch histogram, highest count G5.
inline const std::vector<HistogramRow> kPitchCounts{
    {"E4", 2},    {"G4", 178},  {"A4", 429}, {"B4", 20},  {"C5", 987},  {"D5", 1337}, {"E5", 1763},
    {"F5", 24},   {"G5", 2465}, {"A5", 1887}, {"B5", 54}, {"C6", 1591}, {"D6", 1027}, {"E6", 758},
    {"F6", 10},   {"G6", 485},  {"A6", 141}, {"B6", 4},   {"C7", 49},   {"D7", 5}};

// Corpus duration histogram in ticks at 960 per second.
inline const std::map<std::int64_t, int> kDurationCounts{{180, 75},  {240, 4813}, {360, 531}, {480, 1017},
                                                          {720, 209}, {960, 572},  {1440, 20}, {1920, 16},
                                                          {3840, 70}, {160, 8}};

/// Velocity a perfect denoiser of x0 would predict.
inline VelocityFn<double> exact_v(const Tensor<double>& x0)
{
    return [x0](const Tensor<double>& x_t, double t) {
        const double a = std::cos(std::numbers::pi * t / 2);
        const double s = std::sin(std::numbers::pi * t / 2);
        Tensor<double> v(x_t.dims());
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double eps = (x_t[i] - a * x0[i]) / s;
            v[i] = a * eps - s * x0[i];
        }
        return v;
    };
}

/// Smallest within-cluster squared error over every split of sorted values
/// into k contiguous non-empty groups.
inline double best_contiguous_partition_cost(const std::vector<double>& sorted, int k)
{
    const std::size_t n = sorted.size();
    auto group_cost = [&](std::size_t b, std::size_t e) {
        double mean = 0;
        for (std::size_t i = b; i < e; ++i)
            mean += sorted[i];
        mean /= static_cast<double>(e - b);
        double c = 0;
        for (std::size_t i = b; i < e; ++i)
            c += (sorted[i] - mean) * (sorted[i] - mean);
        return c;
    };
    double best = INFINITY;
    std::function<void(std::size_t, int, double)> rec = [&](std::size_t start, int left, double acc) {
        if (left == 1) {
            best = std::min(best, acc + group_cost(start, n));
            return;
        }
        for (std::size_t cut = start + 1; cut + static_cast<std::size_t>(left - 1) <= n; ++cut)
            rec(cut, left - 1, acc + group_cost(start, cut));
    };
    rec(0, k, 0.0);
    return best;
}

} // namespace pt::test
