#pragma once

#include "pianotimbre/audio_io.hpp"
#include "pianotimbre/tensor.hpp"
#include "pianotimbre/vector_quantizer.hpp"

#include <array>
#include <span>
#include <vector>

namespace pt {

inline constexpr int kLoudnessSegments = 16;
inline constexpr double kLoudnessFloor = -70.0;
inline constexpr int kLoudnessRate = 48000;

/// One second-order section, a0 normalized to 1.
struct Biquad {
    double b0, b1, b2, a1, a2;
};

/// ITU-R BS.1770-4 K-weighting at 48 kHz: a high shelf followed by the
/// RLB high-pass. Coefficients are the published 48 kHz values.
struct KWeightingFilter {
    static constexpr Biquad shelf{1.53512485958697, -2.69169618940638, 1.19839281085285, -1.69065929318241,
                                  0.73248077421585};
    static constexpr Biquad highpass{1.0, -2.0, 1.0, -1.99004745483398, 0.99007225036621};

    /// Runs the cascade over the samples from a zero initial state.
    static std::vector<double> apply(std::span<const float> samples);
};

/// Resamples to 48 kHz when needed, then K-weights.
std::vector<double> k_weight_resampled(const AudioClip& clip);

/// K-weights a 48 kHz clip.
std::vector<double> k_weight(const AudioClip& clip);

/// -0.691 + 10 log10(mean square) of already K-weighted samples, floored at -70.
double loudness_of_weighted(std::span<const double> weighted);

/// Ungated mono loudness of a clip in LKFS. Clips not at 48 kHz are resampled first.
double integrated_loudness(const AudioClip& clip);

struct LoudnessVector {
    std::array<double, kLoudnessSegments> values{};
};

/// Sample boundaries of the 16 segments: floor(N/16) each, remainder to the last.
std::array<std::size_t, kLoudnessSegments + 1> segment_bounds(std::size_t length);

/// Loudness of 16 contiguous equal segments. The clip is K-weighted once at
/// 48 kHz and segment boundaries are mapped onto that timeline.
LoudnessVector segment_loudness(const AudioClip& clip);

std::array<int, kLoudnessSegments> encode_loudness(const LoudnessVector& vec, const Codebook& codebook);

/// aligned[t] = indices[floor(t * 16 / target_len)].
std::vector<int> align_to_timeline(std::span<const int> indices, std::size_t target_len);

struct LoudnessTrack {
    std::array<int, kLoudnessSegments> segment_indices{};
    std::vector<int> aligned_indices;
};

LoudnessTrack loudness_track(const AudioClip& clip, const Codebook& codebook, std::size_t target_len);

/// Row t is column aligned[t] of W [D, K]; result is [frames, D].
template <typename T>
Tensor<T> embed_loudness(std::span<const int> aligned, const Tensor<T>& weight);

} // namespace pt
