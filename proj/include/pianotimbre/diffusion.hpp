#pragma once

#include "pianotimbre/tensor.hpp"

#include <cstdint>
#include <functional>
#include <random>

namespace pt {

/// Cosine schedule: alpha = cos(pi t / 2), sigma = sin(pi t / 2), t in [0, 1].
struct NoiseLevel {
    double alpha;
    double sigma;
};

NoiseLevel alpha_sigma(double t);

/// x_t = alpha x0 + sigma noise.
template <typename T>
Tensor<T> q_sample(const Tensor<T>& x0, const Tensor<T>& noise, double t);

/// v = alpha noise - sigma x0.
template <typename T>
Tensor<T> v_target(const Tensor<T>& x0, const Tensor<T>& noise, double t);

/// Inverts (x_t, v) back to (x0, noise): x0 = alpha x_t - sigma v, noise = sigma x_t + alpha v.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_prediction(const Tensor<T>& x_t, const Tensor<T>& v, double t);

/// Mean squared error between two equally shaped tensors, accumulated in double.
template <typename T>
double mean_squared_error(const Tensor<T>& a, const Tensor<T>& b);

/// Anything that maps (x_t, t) to a velocity estimate. Conditioning is bound
/// inside the callable.
template <typename T>
using VelocityFn = std::function<Tensor<T>(const Tensor<T>& x_t, double t)>;

/// Standard-normal tensor from the given generator.
template <typename T>
Tensor<T> standard_normal(const Dims& dims, std::mt19937_64& rng);

/// Deterministic DDIM (eta = 0) from pure noise at t = 1 down to t = 0 over
/// `steps` uniformly spaced levels. The starting noise comes from `seed`.
template <typename T>
Tensor<T> ddim_sample(const VelocityFn<T>& model, const Dims& dims, int steps, std::uint64_t seed);

/// Ancestral sampler: DDIM update plus the DDPM posterior noise, scaled by
/// `noise_scale` (1 = DDPM, 0 = identical to ddim_sample).
template <typename T>
Tensor<T> ddpm_sample(const VelocityFn<T>& model, const Dims& dims, int steps, std::uint64_t seed,
                      double noise_scale = 1.0);

} // namespace pt
