#pragma once

#include "pianotimbre/model.hpp"

namespace pt {

struct ConvertOptions {
    int steps = 50;
    std::uint64_t seed = 0;
    double eta = 0.0;            // 0: DDIM; > 0: ancestral sampling with this noise scale
    std::size_t overlap = 0;     // samples shared by consecutive chunks, linearly cross-faded
};

/// Resamples to the model rate, splits into input_length chunks (tail zero
/// padded), samples each chunk conditioned on itself with seed + chunk index,
/// and trims the concatenation back to the input duration.
AudioClip convert_clip(DiffusionModel<float>& model, const Codebook& codebook, const AudioClip& input,
                       const ConvertOptions& opts = {});

} // namespace pt
