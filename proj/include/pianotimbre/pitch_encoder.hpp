#pragma once

#include "pianotimbre/audio_io.hpp"
#include "pianotimbre/tensor.hpp"

#include <array>
#include <string_view>
#include <vector>

namespace pt {

inline constexpr int kPitchTokens = 37; // index 0 = unvoiced, 1..36 = C4..B6

struct PitchEntry {
    int index;
    std::string_view name;
    double f0_hz;
};

/// The 37-row pitch reference table, C4 (261.63 Hz) through B6 (1975.53 Hz).
const std::array<PitchEntry, kPitchTokens>& pitch_table();

/// Table rows as a JSON array of {index, name, f0} objects.
std::string pitch_table_json();

struct F0Track {
    std::vector<double> f0_hz;      // 0 = unvoiced
    std::vector<double> confidence; // [0, 1]
    int hop_samples = 512;
    int frame_window_samples = 2048;
    int sample_rate = 0;

    std::size_t frames() const noexcept { return f0_hz.size(); }
};

struct PitchTrack {
    std::vector<int> indices; // each in [0, 36]
    int hop_samples = 512;

    std::size_t frames() const noexcept { return indices.size(); }
};

struct F0EstimatorConfig {
    int hop_samples = 512;
    int window_samples = 2048;
    double min_hz = 60.0;
    double max_hz = 2100.0;
    double threshold = 0.2; // CMND dip threshold; frames without a dip are unvoiced
    int integration_samples = 512; // span of the difference sum, centred on the frame; capped by the window
};

/// Frame count for a clip of `length` samples: ceil(length / hop).
inline std::size_t pitch_frame_count(std::size_t length, int hop)
{
    return (length + static_cast<std::size_t>(hop) - 1) / static_cast<std::size_t>(hop);
}

/// Per-frame F0 by the cumulative-mean-normalized difference function with
/// parabolic refinement. Frame i is centred on sample i*hop + hop/2 and is
/// zero-padded where it runs past the clip.
F0Track estimate_f0(const AudioClip& clip, const F0EstimatorConfig& cfg = {});

enum class OutOfRangePolicy {
    Clamp,    // voiced f0 outside C4..B6 maps to the nearest end of the table
    Unvoiced, // voiced f0 more than half a semitone outside the table maps to 0
};

/// Nearest table row in cents; ties go to the lower index; 0 Hz maps to 0.
int tokenize_f0(double f0_hz, OutOfRangePolicy policy = OutOfRangePolicy::Clamp);

PitchTrack tokenize_track(const F0Track& track, OutOfRangePolicy policy = OutOfRangePolicy::Clamp);

/// estimate_f0 followed by tokenize_track.
PitchTrack pitch_track(const AudioClip& clip, const F0EstimatorConfig& cfg = {},
                       OutOfRangePolicy policy = OutOfRangePolicy::Clamp);

std::array<float, kPitchTokens> one_hot(int index);

/// Row t is W * one_hot(indices[t]), i.e. column indices[t] of W [D, 37].
/// Result is [frames, D].
template <typename T>
Tensor<T> embed_pitch(const PitchTrack& track, const Tensor<T>& weight);

} // namespace pt
