#include "pianotimbre/convert.hpp"

#include <cmath>

namespace pt {

AudioClip convert_clip(DiffusionModel<float>& model, const Codebook& codebook, const AudioClip& input,
                       const ConvertOptions& opts)
{
    const ModelConfig& cfg = model.config();
    const std::size_t len = cfg.unet.input_length;
    require(!input.empty(), ErrorCode::EmptyClip, "nothing to convert");
    require(opts.steps >= 1, ErrorCode::InvalidArgument, "sampler needs at least one step");
    require(opts.overlap < len, ErrorCode::InvalidArgument, "overlap must be shorter than the model input");

    const AudioClip src = input.sample_rate == cfg.sample_rate ? input : resample(input, cfg.sample_rate);
    const std::size_t hop = len - opts.overlap;
    const std::size_t chunks = src.size() <= len ? 1 : 1 + (src.size() - len + hop - 1) / hop;

    AudioClip out;
    out.sample_rate = cfg.sample_rate;
    out.samples.assign((chunks - 1) * hop + len, 0.0f);
    std::vector<double> acc(out.size(), 0.0), weight(out.size(), 0.0);

    for (std::size_t c = 0; c < chunks; ++c) {
        const std::size_t begin = c * hop;
        AudioClip seg{std::vector<float>(len, 0.0f), cfg.sample_rate};
        const std::size_t avail = begin < src.size() ? std::min(len, src.size() - begin) : 0;
        std::copy_n(src.samples.begin() + static_cast<std::ptrdiff_t>(begin), avail, seg.samples.begin());

        const ConditionIndices cond = build_condition_indices(seg, codebook, cfg);
        const auto velocity = model.velocity(cond);
        const std::uint64_t seed = opts.seed + c;
        const Tensor<float> y = opts.eta > 0.0 ? ddpm_sample(velocity, {1, len}, opts.steps, seed, opts.eta)
                                               : ddim_sample(velocity, {1, len}, opts.steps, seed);
        for (std::size_t i = 0; i < len; ++i) {
            double w = 1.0;
            if (opts.overlap > 0) {
                const double ramp = static_cast<double>(opts.overlap + 1);
                if (c > 0 && i < opts.overlap)
                    w = static_cast<double>(i + 1) / ramp;
                if (c + 1 < chunks && i >= len - opts.overlap)
                    w = std::min(w, static_cast<double>(len - i) / ramp);
            }
            acc[begin + i] += w * y[i];
            weight[begin + i] += w;
        }
    }
    for (std::size_t i = 0; i < out.size(); ++i)
        out.samples[i] = weight[i] > 0.0 ? static_cast<float>(acc[i] / weight[i]) : 0.0f;
    out.samples.resize(src.size());
    return out;
}

} // namespace pt
