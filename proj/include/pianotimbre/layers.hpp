#pragma once

#include "pianotimbre/tensor.hpp"

#include <optional>
#include <random>

namespace pt {

// Stateless forward passes. The layer classes below wrap these and add the
// cached state needed for backward.

/// y = x W^T + b for x [N, in], W [out, in], b [out].
template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// Cross-correlation of x [C_in, L] with kernel [C_out, C_in, K]. bias may be empty.
template <typename T>
Tensor<T> conv1d_forward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                         std::size_t stride, std::size_t padding);

inline std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                                        std::size_t padding)
{
    require(length + 2 * padding >= kernel, ErrorCode::DimMismatch, "conv input shorter than kernel");
    return (length + 2 * padding - kernel) / stride + 1;
}

/// Largest divisor of `channels` not exceeding `preferred`.
std::size_t group_count_for(std::size_t channels, std::size_t preferred);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual default for linear and conv layers.
template <typename T>
void init_uniform_fan_in(Tensor<T>& t, std::size_t fan_in, std::mt19937_64& rng);

template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(std::string name, std::size_t in, std::size_t out);

    void init(std::mt19937_64& rng);
    Tensor<T> forward(const Tensor<T>& x);
    Tensor<T> backward(const Tensor<T>& dy);
    void collect(ParamRefs<T>& out) { out.push_back(&weight); out.push_back(&bias); }

    Parameter<T> weight; // [out, in]
    Parameter<T> bias;   // [out]

private:
    std::optional<Tensor<T>> input_;
};

template <typename T>
class Conv1d {
public:
    Conv1d() = default;
    Conv1d(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
           std::size_t stride = 1, std::size_t padding = 0);

    void init(std::mt19937_64& rng);
    Tensor<T> forward(const Tensor<T>& x);
    Tensor<T> backward(const Tensor<T>& dy);
    void collect(ParamRefs<T>& out) { out.push_back(&weight); out.push_back(&bias); }

    std::size_t in_channels() const { return in_; }
    std::size_t out_channels() const { return out_; }

    Parameter<T> weight; // [out, in, K]
    Parameter<T> bias;   // [out]

private:
    std::size_t in_ = 0, out_ = 0, kernel_ = 1, stride_ = 1, padding_ = 0;
    std::size_t input_length_ = 0;
    std::optional<Tensor<T>> columns_; // im2col of the input, [in*K, L_out]
};

template <typename T>
class GroupNorm {
public:
    GroupNorm() = default;
    GroupNorm(std::string name, std::size_t channels, std::size_t groups, double eps = 1e-5);

    Tensor<T> forward(const Tensor<T>& x);
    Tensor<T> backward(const Tensor<T>& dy);
    void collect(ParamRefs<T>& out) { out.push_back(&gamma); out.push_back(&beta); }

    /// Normalized values before the affine transform, from the last forward.
    const Tensor<T>& normalized() const;
    std::size_t groups() const { return groups_; }

    Parameter<T> gamma;
    Parameter<T> beta;

private:
    std::size_t channels_ = 0, groups_ = 1;
    double eps_ = 1e-5;
    std::optional<Tensor<T>> xhat_;
    std::vector<T> inv_std_;
};

template <typename T>
class SiLU {
public:
    Tensor<T> forward(const Tensor<T>& x);
    Tensor<T> backward(const Tensor<T>& dy);

private:
    std::optional<Tensor<T>> sigmoid_;
    std::optional<Tensor<T>> output_;
};

/// Pre-norm multi-head self-attention over the time axis with a residual
/// connection: y = x + proj(attn(qkv(norm(x)))). No positional encoding.
template <typename T>
class SelfAttention {
public:
    SelfAttention() = default;
    SelfAttention(std::string name, std::size_t channels, std::size_t heads, std::size_t groups);

    void init(std::mt19937_64& rng);
    Tensor<T> forward(const Tensor<T>& x);
    Tensor<T> backward(const Tensor<T>& dy);
    void collect(ParamRefs<T>& out);

    /// Softmax weights of the last forward, one [L, L] matrix per head.
    const std::vector<Tensor<T>>& attention_weights() const { return weights_; }

    GroupNorm<T> norm;
    Conv1d<T> qkv;
    Conv1d<T> proj;

private:
    std::size_t channels_ = 0, heads_ = 1;
    bool recorded_ = false;
    Tensor<T> qkv_out_;
    Tensor<T> attended_;
    std::vector<Tensor<T>> weights_;
};

/// Bias-corrected Adam.
struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

template <typename T>
void adam_step(const ParamRefs<T>& params, const AdamConfig& cfg);

template <typename T>
void zero_grads(const ParamRefs<T>& params)
{
    for (auto* p : params)
        p->zero_grad();
}

} // namespace pt
