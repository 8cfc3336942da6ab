#pragma once

#include "pianotimbre/layers.hpp"

#include <nlohmann/json_fwd.hpp>

#include <optional>
#include <vector>

namespace pt {

struct UNetConfig {
    std::size_t input_length = 16384;
    std::size_t base_channels = 32;
    std::vector<std::size_t> channel_multipliers{1, 2, 4, 4};
    /// Resolution reduction between level i and i+1; one entry per level transition.
    std::vector<std::size_t> downsample_factors{4, 4, 4};
    std::vector<std::size_t> attention_levels{2, 3};
    std::size_t attention_heads = 4;
    std::size_t condition_width = 128;
    std::size_t condition_frames = 32;
    std::size_t time_embedding_dim = 64;
    std::size_t norm_groups = 8;
    /// Width of the residual-block convolutions; odd.
    std::size_t kernel_size = 3;
    bool zero_init_output = true;

    std::size_t levels() const noexcept { return channel_multipliers.size(); }
    std::size_t channels(std::size_t level) const { return base_channels * channel_multipliers.at(level); }
    std::size_t level_length(std::size_t level) const;
    bool has_attention(std::size_t level) const;

    /// Throws DimMismatch/InvalidArgument when the configuration cannot be built.
    void validate() const;

    bool operator==(const UNetConfig&) const = default;
};

void to_json(nlohmann::json& j, const UNetConfig& c);
void from_json(const nlohmann::json& j, UNetConfig& c);

template <typename T>
class ResBlock {
public:
    ResBlock() = default;
    ResBlock(const std::string& name, std::size_t in, std::size_t out, std::size_t temb_width, std::size_t groups,
             std::size_t kernel = 3);

    void init(std::mt19937_64& rng);
    Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& temb);
    /// Returns (d input, d time embedding).
    std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& dy);
    void collect(ParamRefs<T>& out);

private:
    GroupNorm<T> norm1_;
    SiLU<T> act1_;
    Conv1d<T> conv1_;
    SiLU<T> temb_act_;
    Linear<T> temb_proj_;
    GroupNorm<T> norm2_;
    SiLU<T> act2_;
    Conv1d<T> conv2_;
    std::optional<Conv1d<T>> skip_;
};

/// 1-D U-Net predicting the diffusion velocity. The conditioning matrix
/// [condition_width, condition_frames] is nearest-resampled to every encoder
/// level and concatenated with the features before that level's res-block.
template <typename T>
class UNet {
public:
    UNet() = default;
    explicit UNet(const UNetConfig& cfg);

    void init(std::uint64_t seed);

    /// x [1, L], cond [condition_width, condition_frames] -> v [1, L].
    Tensor<T> forward(const Tensor<T>& x, double t, const Tensor<T>& cond);

    /// Accumulates parameter gradients and returns d cond.
    Tensor<T> backward(const Tensor<T>& dy);

    ParamRefs<T> parameters();
    const UNetConfig& config() const noexcept { return cfg_; }

    /// Output head; zero at initialization when cfg.zero_init_output is set.
    Conv1d<T>& output_conv() { return out_conv_; }

private:
    struct Level {
        ResBlock<T> enc;
        std::optional<SelfAttention<T>> enc_attn;
        std::optional<Conv1d<T>> down;
        ResBlock<T> dec;
        std::optional<SelfAttention<T>> dec_attn;
        std::optional<Conv1d<T>> up;
    };

    UNetConfig cfg_;
    Conv1d<T> in_conv_;
    Linear<T> time_fc1_;
    SiLU<T> time_act_;
    Linear<T> time_fc2_;
    std::vector<Level> levels_;
    ResBlock<T> mid1_;
    std::optional<SelfAttention<T>> mid_attn_;
    ResBlock<T> mid2_;
    GroupNorm<T> out_norm_;
    SiLU<T> out_act_;
    Conv1d<T> out_conv_;

    bool recorded_ = false;
};

/// Sinusoidal features of t in [0, 1], [1, dim].
template <typename T>
Tensor<T> timestep_features(double t, std::size_t dim);

/// Nearest-neighbour resampling along time: out[:, p] = in[:, floor(p * F / length)].
template <typename T>
Tensor<T> resample_nearest(const Tensor<T>& in, std::size_t length);

/// Adjoint of resample_nearest.
template <typename T>
Tensor<T> resample_nearest_backward(const Tensor<T>& grad, std::size_t frames);

} // namespace pt
