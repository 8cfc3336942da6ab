#include "pianotimbre/loudness_encoder.hpp"

#include "pianotimbre/error.hpp"

#include <cmath>

namespace pt {

namespace {

void run_biquad(const Biquad& q, std::vector<double>& x)
{
    double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
    for (double& s : x) {
        const double y = q.b0 * s + q.b1 * x1 + q.b2 * x2 - q.a1 * y1 - q.a2 * y2;
        x2 = x1;
        x1 = s;
        y2 = y1;
        y1 = y;
        s = y;
    }
}

double mean_square(std::span<const double> x)
{
    double acc = 0.0;
    for (double v : x)
        acc += v * v;
    return acc / static_cast<double>(x.size());
}

} // namespace

std::vector<double> KWeightingFilter::apply(std::span<const float> samples)
{
    std::vector<double> x(samples.begin(), samples.end());
    run_biquad(shelf, x);
    run_biquad(highpass, x);
    return x;
}

std::vector<double> k_weight_resampled(const AudioClip& clip)
{
    if (clip.sample_rate == kLoudnessRate)
        return KWeightingFilter::apply(clip.samples);
    return KWeightingFilter::apply(resample(clip, kLoudnessRate).samples);
}

std::vector<double> k_weight(const AudioClip& clip)
{
    require(clip.sample_rate == kLoudnessRate, ErrorCode::WrongSampleRate,
            "K-weighting coefficients are defined at 48000 Hz, clip is at " + std::to_string(clip.sample_rate));
    return KWeightingFilter::apply(clip.samples);
}

double loudness_of_weighted(std::span<const double> weighted)
{
    require(!weighted.empty(), ErrorCode::EmptyInput, "loudness of an empty signal");
    const double ms = mean_square(weighted);
    if (!(ms > 0.0))
        return kLoudnessFloor;
    return std::max(kLoudnessFloor, -0.691 + 10.0 * std::log10(ms));
}

double integrated_loudness(const AudioClip& clip)
{
    require(!clip.empty(), ErrorCode::EmptyInput, "loudness of an empty clip");
    return loudness_of_weighted(k_weight_resampled(clip));
}

std::array<std::size_t, kLoudnessSegments + 1> segment_bounds(std::size_t length)
{
    std::array<std::size_t, kLoudnessSegments + 1> b{};
    const std::size_t seg = length / kLoudnessSegments;
    for (int k = 0; k < kLoudnessSegments; ++k)
        b[static_cast<std::size_t>(k)] = static_cast<std::size_t>(k) * seg;
    b[kLoudnessSegments] = length;
    return b;
}

LoudnessVector segment_loudness(const AudioClip& clip)
{
    require(clip.size() >= kLoudnessSegments, ErrorCode::ClipTooShort,
            "need at least 16 samples for segment loudness, have " + std::to_string(clip.size()));
    const auto weighted = k_weight_resampled(clip);
    const auto bounds = segment_bounds(clip.size());
    const double scale = static_cast<double>(kLoudnessRate) / clip.sample_rate;

    auto mapped = [&](std::size_t b) {
        if (clip.sample_rate == kLoudnessRate)
            return b;
        return std::min(weighted.size(), static_cast<std::size_t>(std::llround(static_cast<double>(b) * scale)));
    };

    LoudnessVector out;
    for (int k = 0; k < kLoudnessSegments; ++k) {
        const std::size_t lo = mapped(bounds[static_cast<std::size_t>(k)]);
        const std::size_t hi = k == kLoudnessSegments - 1 ? weighted.size() : mapped(bounds[static_cast<std::size_t>(k) + 1]);
        out.values[static_cast<std::size_t>(k)] =
            hi > lo ? loudness_of_weighted(std::span<const double>(weighted).subspan(lo, hi - lo)) : kLoudnessFloor;
    }
    return out;
}

std::array<int, kLoudnessSegments> encode_loudness(const LoudnessVector& vec, const Codebook& codebook)
{
    require(!codebook.empty(), ErrorCode::EmptyCodebook, "loudness codebook is empty");
    std::array<int, kLoudnessSegments> idx{};
    for (std::size_t k = 0; k < idx.size(); ++k)
        idx[k] = encode(vec.values[k], codebook);
    return idx;
}

std::vector<int> align_to_timeline(std::span<const int> indices, std::size_t target_len)
{
    require(target_len >= 1, ErrorCode::InvalidArgument, "target length must be >= 1");
    require(!indices.empty(), ErrorCode::EmptyInput, "nothing to align");
    std::vector<int> out(target_len);
    const std::size_t n = indices.size();
    for (std::size_t t = 0; t < target_len; ++t)
        out[t] = indices[t * n / target_len];
    return out;
}

LoudnessTrack loudness_track(const AudioClip& clip, const Codebook& codebook, std::size_t target_len)
{
    LoudnessTrack track;
    track.segment_indices = encode_loudness(segment_loudness(clip), codebook);
    track.aligned_indices = align_to_timeline(track.segment_indices, target_len);
    return track;
}

template <typename T>
Tensor<T> embed_loudness(std::span<const int> aligned, const Tensor<T>& weight)
{
    require(weight.rank() == 2, ErrorCode::DimMismatch, "loudness embedding weight must be rank 2");
    require(!aligned.empty(), ErrorCode::DimMismatch, "empty loudness track");
    const std::size_t width = weight.dim(0);
    const std::size_t k = weight.dim(1);
    Tensor<T> out({aligned.size(), width});
    for (std::size_t t = 0; t < aligned.size(); ++t) {
        const int idx = aligned[t];
        require(idx >= 0 && static_cast<std::size_t>(idx) < k, ErrorCode::IndexOutOfRange,
                "loudness index " + std::to_string(idx) + " outside codebook of size " + std::to_string(k));
        for (std::size_t d = 0; d < width; ++d)
            out(t, d) = weight(d, static_cast<std::size_t>(idx));
    }
    return out;
}

template Tensor<float> embed_loudness(std::span<const int>, const Tensor<float>&);
template Tensor<double> embed_loudness(std::span<const int>, const Tensor<double>&);

} // namespace pt
