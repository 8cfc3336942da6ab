#include "pianotimbre/diffusion.hpp"

#include <cmath>
#include <numbers>

namespace pt {

NoiseLevel alpha_sigma(double t)
{
    require(t >= 0.0 && t <= 1.0, ErrorCode::TOutOfRange, "diffusion time " + std::to_string(t) + " outside [0, 1]");
    // Exact endpoints; cos(pi/2) is not exactly zero in floating point.
    if (t == 0.0)
        return {1.0, 0.0};
    if (t == 1.0)
        return {0.0, 1.0};
    const double angle = 0.5 * std::numbers::pi * t;
    return {std::cos(angle), std::sin(angle)};
}

namespace {

template <typename T>
Tensor<T> combine(const Tensor<T>& a, double wa, const Tensor<T>& b, double wb)
{
    require(a.dims() == b.dims(), ErrorCode::DimMismatch,
            "shape mismatch " + dims_to_string(a.dims()) + " vs " + dims_to_string(b.dims()));
    Tensor<T> out(a.dims());
    for (std::size_t i = 0; i < a.size(); ++i)
        out[i] = static_cast<T>(wa * a[i] + wb * b[i]);
    return out;
}

template <typename T>
Tensor<T> run_sampler(const VelocityFn<T>& model, const Dims& dims, int steps, std::uint64_t seed, double eta)
{
    require(steps >= 1, ErrorCode::InvalidArgument, "sampler needs at least one step");
    std::mt19937_64 rng(seed);
    Tensor<T> x = standard_normal<T>(dims, rng);
    std::normal_distribution<double> normal(0.0, 1.0);

    for (int k = steps; k >= 1; --k) {
        const double t = static_cast<double>(k) / steps;
        const double s = static_cast<double>(k - 1) / steps;
        const auto now = alpha_sigma(t);
        const auto next = alpha_sigma(s);
        const Tensor<T> v = model(x, t);
        require(v.dims() == x.dims(), ErrorCode::DimMismatch, "velocity model changed the sample shape");

        // Ancestral noise level; zero at s = 0 and whenever eta = 0.
        double c = 0.0;
        if (eta > 0.0 && next.sigma > 0.0 && now.sigma > 0.0 && next.alpha > 0.0) {
            const double ratio = (now.alpha * now.alpha) / (next.alpha * next.alpha);
            c = eta * (next.sigma / now.sigma) * std::sqrt(std::max(0.0, 1.0 - ratio));
        }
        const double eps_weight = std::sqrt(std::max(0.0, next.sigma * next.sigma - c * c));

        for (std::size_t i = 0; i < x.size(); ++i) {
            const double x0_hat = now.alpha * x[i] - now.sigma * v[i];
            const double eps_hat = now.sigma * x[i] + now.alpha * v[i];
            x[i] = static_cast<T>(next.alpha * x0_hat + eps_weight * eps_hat);
        }
        if (c > 0.0)
            for (std::size_t i = 0; i < x.size(); ++i)
                x[i] = static_cast<T>(x[i] + c * normal(rng));
    }
    return x;
}

} // namespace

template <typename T>
Tensor<T> q_sample(const Tensor<T>& x0, const Tensor<T>& noise, double t)
{
    const auto lv = alpha_sigma(t);
    return combine(x0, lv.alpha, noise, lv.sigma);
}

template <typename T>
Tensor<T> v_target(const Tensor<T>& x0, const Tensor<T>& noise, double t)
{
    const auto lv = alpha_sigma(t);
    return combine(noise, lv.alpha, x0, -lv.sigma);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_prediction(const Tensor<T>& x_t, const Tensor<T>& v, double t)
{
    const auto lv = alpha_sigma(t);
    return {combine(x_t, lv.alpha, v, -lv.sigma), combine(x_t, lv.sigma, v, lv.alpha)};
}

template <typename T>
double mean_squared_error(const Tensor<T>& a, const Tensor<T>& b)
{
    require(a.dims() == b.dims(), ErrorCode::DimMismatch, "MSE shape mismatch");
    require(!a.empty(), ErrorCode::EmptyInput, "MSE of empty tensors");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

template <typename T>
Tensor<T> standard_normal(const Dims& dims, std::mt19937_64& rng)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor<T> out(dims);
    for (auto& v : out.values())
        v = static_cast<T>(normal(rng));
    return out;
}

template <typename T>
Tensor<T> ddim_sample(const VelocityFn<T>& model, const Dims& dims, int steps, std::uint64_t seed)
{
    return run_sampler(model, dims, steps, seed, 0.0);
}

template <typename T>
Tensor<T> ddpm_sample(const VelocityFn<T>& model, const Dims& dims, int steps, std::uint64_t seed, double noise_scale)
{
    require(noise_scale >= 0.0, ErrorCode::InvalidArgument, "noise scale must be non-negative");
    return run_sampler(model, dims, steps, seed, noise_scale);
}

#define PT_INSTANTIATE_DIFFUSION(T)                                                                                  \
    template Tensor<T> q_sample(const Tensor<T>&, const Tensor<T>&, double);                                         \
    template Tensor<T> v_target(const Tensor<T>&, const Tensor<T>&, double);                                         \
    template std::pair<Tensor<T>, Tensor<T>> split_prediction(const Tensor<T>&, const Tensor<T>&, double);           \
    template double mean_squared_error(const Tensor<T>&, const Tensor<T>&);                                          \
    template Tensor<T> standard_normal(const Dims&, std::mt19937_64&);                                               \
    template Tensor<T> ddim_sample(const VelocityFn<T>&, const Dims&, int, std::uint64_t);                           \
    template Tensor<T> ddpm_sample(const VelocityFn<T>&, const Dims&, int, std::uint64_t, double);

PT_INSTANTIATE_DIFFUSION(float)
PT_INSTANTIATE_DIFFUSION(double)

} // namespace pt
