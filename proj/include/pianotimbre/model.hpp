#pragma once

#include "pianotimbre/audio_io.hpp"
#include "pianotimbre/diffusion.hpp"
#include "pianotimbre/pitch_encoder.hpp"
#include "pianotimbre/unet.hpp"
#include "pianotimbre/vector_quantizer.hpp"

#include <nlohmann/json_fwd.hpp>

namespace pt {

/// Everything needed to rebuild a model: U-Net shape plus the encoder widths.
struct ModelConfig {
    UNetConfig unet;
    std::size_t pitch_dim = 64;
    std::size_t loudness_dim = 64;
    std::size_t codebook_size = 32;
    int sample_rate = 16000;
    int hop_samples = 512;
    int f0_window = 2048;
    OutOfRangePolicy out_of_range = OutOfRangePolicy::Clamp;
    std::uint64_t init_seed = 0;

    /// Fills the derived U-Net fields (condition width and frame count).
    void sync_derived();
    void validate() const;
    F0EstimatorConfig f0_config() const;

    bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Token-level conditioning for one segment; both tracks share the pitch timeline.
struct ConditionIndices {
    std::vector<int> pitch;
    std::vector<int> loudness;

    std::size_t frames() const noexcept { return pitch.size(); }
    bool operator==(const ConditionIndices&) const = default;
};

/// Pitch track (estimate -> tokenize) and loudness track (segment -> encode ->
/// align) of a segment whose length equals the model input length.
ConditionIndices build_condition_indices(const AudioClip& segment, const Codebook& codebook, const ModelConfig& cfg);

/// The U-Net plus the two learned embedding tables.
template <typename T>
class DiffusionModel {
public:
    DiffusionModel() = default;
    explicit DiffusionModel(const ModelConfig& cfg);

    void init(std::uint64_t seed);

    /// ConditioningBundle: [frames, pitch_dim + loudness_dim], pitch columns first.
    Tensor<T> bundle(const ConditionIndices& cond) const;

    /// Records the graph so backward() can follow.
    Tensor<T> forward(const Tensor<T>& x_t, double t, const ConditionIndices& cond);

    /// Velocity from an already embedded bundle.
    Tensor<T> forward_bundle(const Tensor<T>& x_t, double t, const Tensor<T>& bundle);

    /// Accumulates gradients for every parameter including the embedding tables.
    void backward(const Tensor<T>& dv);

    ParamRefs<T> parameters();
    const ModelConfig& config() const noexcept { return cfg_; }
    UNet<T>& unet() noexcept { return unet_; }

    Parameter<T>& pitch_table() noexcept { return pitch_table_; }
    Parameter<T>& loudness_table() noexcept { return loudness_table_; }

    VelocityFn<T> velocity(const ConditionIndices& cond);

private:
    ModelConfig cfg_;
    UNet<T> unet_;
    Parameter<T> pitch_table_;    // [pitch_dim, 37]
    Parameter<T> loudness_table_; // [loudness_dim, K]
    std::optional<ConditionIndices> recorded_;
};

/// Per-element MSE between predicted and target velocity, averaged over the batch.
/// Draws t ~ U[0,1) and standard-normal noise per element from rng. When
/// `accumulate` is set, gradients of the returned loss are added to the model.
template <typename T>
double loss_v(DiffusionModel<T>& model, const std::vector<Tensor<T>>& x0_batch,
              const std::vector<ConditionIndices>& cond_batch, std::mt19937_64& rng, bool accumulate);

/// Same loss with explicit t and noise for one element.
template <typename T>
double loss_v_fixed(DiffusionModel<T>& model, const Tensor<T>& x0, const ConditionIndices& cond, double t,
                    const Tensor<T>& noise, bool accumulate, double grad_scale = 1.0);

} // namespace pt
