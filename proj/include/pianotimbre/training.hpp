#pragma once

#include "pianotimbre/dataset_index.hpp"
#include "pianotimbre/model.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <optional>

namespace pt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainConfig {
    int sample_rate = 16000;
    std::size_t segment_length = 16384;
    std::size_t batch_size = 8;
    int epochs = 10;
    long max_steps = 0; // 0: epochs decide
    double learning_rate = 1e-4;
    std::uint64_t seed = 0;
    std::string codebook_path;
    int checkpoint_every = 0; // steps between checkpoints, 0: only the final one
    ModelConfig model;

    /// Copies sample_rate and segment_length into the model config.
    void sync_model();
    void validate() const;
    AdamConfig adam() const;

    bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Uniformly random window of n samples, or the whole clip zero-padded at the tail.
Tensor<float> crop_segment(const AudioClip& clip, std::size_t n, std::mt19937_64& rng);

/// Same as crop_segment, also reporting the chosen offset.
Tensor<float> crop_segment(const AudioClip& clip, std::size_t n, std::mt19937_64& rng, std::size_t& offset);

/// [frames, pitch_dim + loudness_dim] bundle of a segment.
Tensor<float> build_conditioning(const DiffusionModel<float>& model, const AudioClip& segment,
                                 const Codebook& codebook);

/// Conditions each element on itself, applies Adam and returns the batch loss.
/// NonFiniteLoss leaves the parameters untouched.
double train_step(DiffusionModel<float>& model, const std::vector<Tensor<float>>& batch,
                  const std::vector<ConditionIndices>& conditions, const AdamConfig& adam, std::mt19937_64& rng);
double train_step(DiffusionModel<float>& model, const std::vector<AudioClip>& batch, const Codebook& codebook,
                  const AdamConfig& adam, std::mt19937_64& rng);

struct CheckpointInfo {
    TrainConfig config;
    long step = 0;
};

void save_checkpoint(const DiffusionModel<float>& model, const CheckpointInfo& info,
                     const std::filesystem::path& path);
std::vector<unsigned char> checkpoint_bytes(const DiffusionModel<float>& model, const CheckpointInfo& info);

struct LoadedCheckpoint {
    CheckpointInfo info;
    DiffusionModel<float> model;
};

/// Rebuilds the model from the embedded config.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);
LoadedCheckpoint checkpoint_from_bytes(std::span<const unsigned char> bytes);

/// Loads tensors into an existing model; TensorDimMismatch when shapes differ.
CheckpointInfo load_checkpoint_into(DiffusionModel<float>& model, const std::filesystem::path& path);

/// Segments per clip used for codebook fitting: max(1, floor(samples / segment_length)).
std::size_t segments_per_clip(std::size_t samples, std::size_t segment_length);

/// The 16 per-segment loudness readings of every segment of every clip.
std::vector<double> loudness_pool(const DatasetIndex& index, std::size_t segment_length);

Codebook fit_codebook_from_corpus(const DatasetIndex& index, int k, std::size_t segment_length,
                                  const CodebookFitOptions& opts = {});

/// Epoch-based loop over a corpus: every epoch takes one random crop of every
/// clip in shuffled order, grouped into batches of batch_size.
class Trainer {
public:
    Trainer(TrainConfig cfg, DatasetIndex index, Codebook codebook);

    /// Continues from a checkpoint (parameters, Adam moments, step counter).
    void resume(const std::filesystem::path& checkpoint);

    long step() const noexcept { return step_; }
    long steps_per_epoch() const noexcept;
    long total_steps() const noexcept;
    bool done() const noexcept { return step_ >= total_steps(); }

    /// Runs one optimizer step and returns its loss.
    double run_step();

    /// Runs to completion, appending "step,loss" rows to loss.csv and writing
    /// checkpoints into out_dir. on_step may return false to stop early.
    void run(const std::filesystem::path& out_dir, const std::function<bool(long, double)>& on_step = {});

    DiffusionModel<float>& model() noexcept { return model_; }
    const TrainConfig& config() const noexcept { return cfg_; }
    CheckpointInfo info() const { return {cfg_, step_}; }

private:
    void load_clips();
    void plan_epoch(long epoch);

    TrainConfig cfg_;
    DatasetIndex index_;
    Codebook codebook_;
    DiffusionModel<float> model_;
    std::vector<AudioClip> clips_;
    std::vector<std::size_t> order_;
    long planned_epoch_ = -1;
    long step_ = 0;
    std::mt19937_64 rng_;
    std::map<std::pair<std::size_t, std::size_t>, ConditionIndices> cond_cache_;
};

} // namespace pt
