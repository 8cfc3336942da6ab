#include "pianotimbre/pitch_encoder.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <limits>

namespace pt {

const std::array<PitchEntry, kPitchTokens>& pitch_table()
{
    static constexpr std::array<PitchEntry, kPitchTokens> table{{
        {0, "None", 0.0},        {1, "C4", 261.63},       {2, "C#4/Db4", 277.18},  {3, "D4", 293.66},
        {4, "D#4/Eb4", 311.13},  {5, "E4", 329.63},       {6, "F4", 349.23},       {7, "F#4/Gb4", 369.99},
        {8, "G4", 392.00},       {9, "G#4/Ab4", 415.30},  {10, "A4", 440.00},      {11, "A#4/Bb4", 466.16},
        {12, "B4", 493.88},      {13, "C5", 523.25},      {14, "C#5/Db5", 554.37}, {15, "D5", 587.33},
        {16, "D#5/Eb5", 622.25}, {17, "E5", 659.25},      {18, "F5", 698.46},      {19, "F#5/Gb5", 739.99},
        {20, "G5", 783.99},      {21, "G#5/Ab5", 830.61}, {22, "A5", 880.00},      {23, "A#5/Bb5", 932.33},
        {24, "B5", 987.77},      {25, "C6", 1046.50},     {26, "C#6/Db6", 1108.73}, {27, "D6", 1174.66},
        {28, "D#6/Eb6", 1244.51}, {29, "E6", 1318.51},    {30, "F6", 1396.91},     {31, "F#6/Gb6", 1479.98},
        {32, "G6", 1567.98},     {33, "G#6/Ab6", 1661.22}, {34, "A6", 1760.00},    {35, "A#6/Bb6", 1864.66},
        {36, "B6", 1975.53},
    }};
    return table;
}

std::string pitch_table_json()
{
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& e : pitch_table())
        rows.push_back({{"index", e.index}, {"name", std::string(e.name)}, {"f0", e.f0_hz}});
    return rows.dump(2);
}

namespace {

// Cumulative-mean-normalized difference for one frame, lags 0..max_lag.
// Difference function over an integration span centred in the frame; the two
// compared stretches sit symmetrically about the centre for every lag.
void cmnd(const std::vector<double>& frame, int max_lag, int integration, std::vector<double>& out)
{
    const int centre = static_cast<int>(frame.size()) / 2;
    out.assign(static_cast<std::size_t>(max_lag) + 1, 1.0);
    double running = 0.0;
    for (int tau = 1; tau <= max_lag; ++tau) {
        double d = 0.0;
        const double* a = frame.data() + (centre - (integration + tau) / 2);
        const double* b = a + tau;
        for (int j = 0; j < integration; ++j) {
            const double diff = a[j] - b[j];
            d += diff * diff;
        }
        running += d;
        out[tau] = running > 0.0 ? d * tau / running : 1.0;
    }
}

} // namespace

F0Track estimate_f0(const AudioClip& clip, const F0EstimatorConfig& cfg)
{
    require(cfg.hop_samples >= 1 && cfg.window_samples >= 4, ErrorCode::InvalidArgument, "bad F0 frame geometry");
    require(clip.sample_rate > 0, ErrorCode::InvalidArgument, "clip has no sample rate");
    require(clip.size() >= static_cast<std::size_t>(cfg.window_samples), ErrorCode::ClipTooShort,
            "clip of " + std::to_string(clip.size()) + " samples is shorter than the " +
                std::to_string(cfg.window_samples) + "-sample analysis window");

    const double sr = clip.sample_rate;
    const int max_lag = std::min(static_cast<int>(std::floor(sr / cfg.min_hz)), cfg.window_samples / 2);
    const int min_lag = std::max(2, static_cast<int>(std::floor(sr / cfg.max_hz)));
    require(min_lag < max_lag, ErrorCode::InvalidArgument, "F0 search band is empty at this sample rate");
    const int integration = std::min(cfg.integration_samples, cfg.window_samples - max_lag);
    require(integration >= 1, ErrorCode::InvalidArgument, "F0 integration span must be positive");

    F0Track track;
    track.hop_samples = cfg.hop_samples;
    track.frame_window_samples = cfg.window_samples;
    track.sample_rate = clip.sample_rate;
    const std::size_t n_frames = pitch_frame_count(clip.size(), cfg.hop_samples);
    track.f0_hz.assign(n_frames, 0.0);
    track.confidence.assign(n_frames, 0.0);

    std::vector<double> frame(static_cast<std::size_t>(cfg.window_samples));
    std::vector<double> d;
    const auto n = static_cast<std::ptrdiff_t>(clip.size());

    for (std::size_t f = 0; f < n_frames; ++f) {
        const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(f) * cfg.hop_samples + cfg.hop_samples / 2 -
                                     cfg.window_samples / 2;
        for (int j = 0; j < cfg.window_samples; ++j) {
            const std::ptrdiff_t idx = start + j;
            frame[j] = (idx >= 0 && idx < n) ? clip.samples[static_cast<std::size_t>(idx)] : 0.0;
        }
        cmnd(frame, max_lag, integration, d);

        int best = -1;
        for (int tau = min_lag; tau <= max_lag; ++tau) {
            if (d[tau] < cfg.threshold) {
                while (tau + 1 <= max_lag && d[tau + 1] < d[tau])
                    ++tau;
                best = tau;
                break;
            }
        }
        if (best < 0)
            continue;

        double period = best;
        if (best > 1 && best < max_lag) {
            const double a = d[best - 1], b = d[best], c = d[best + 1];
            const double denom = a - 2.0 * b + c;
            if (denom > 0.0) {
                const double shift = 0.5 * (a - c) / denom;
                if (std::abs(shift) < 1.0)
                    period += shift;
            }
        }
        track.f0_hz[f] = sr / period;
        track.confidence[f] = std::clamp(1.0 - d[best], 0.0, 1.0);
    }
    return track;
}

int tokenize_f0(double f0_hz, OutOfRangePolicy policy)
{
    require(f0_hz >= 0.0, ErrorCode::NegativeFrequency, "f0 must be non-negative, got " + std::to_string(f0_hz));
    if (f0_hz == 0.0)
        return 0;

    const auto& table = pitch_table();
    if (policy == OutOfRangePolicy::Unvoiced) {
        const double below = 1200.0 * std::log2(f0_hz / table[1].f0_hz);
        const double above = 1200.0 * std::log2(f0_hz / table[kPitchTokens - 1].f0_hz);
        if (below < -50.0 || above > 50.0)
            return 0;
    }

    int best = 1;
    double best_cents = std::numeric_limits<double>::infinity();
    for (int i = 1; i < kPitchTokens; ++i) {
        const double cents = std::abs(1200.0 * std::log2(f0_hz / table[i].f0_hz));
        if (cents < best_cents) {
            best_cents = cents;
            best = i;
        }
    }
    return best;
}

PitchTrack tokenize_track(const F0Track& track, OutOfRangePolicy policy)
{
    PitchTrack out;
    out.hop_samples = track.hop_samples;
    out.indices.reserve(track.frames());
    for (double f : track.f0_hz)
        out.indices.push_back(tokenize_f0(f, policy));
    return out;
}

PitchTrack pitch_track(const AudioClip& clip, const F0EstimatorConfig& cfg, OutOfRangePolicy policy)
{
    return tokenize_track(estimate_f0(clip, cfg), policy);
}

std::array<float, kPitchTokens> one_hot(int index)
{
    require(index >= 0 && index < kPitchTokens, ErrorCode::IndexOutOfRange,
            "pitch index " + std::to_string(index) + " outside [0, 36]");
    std::array<float, kPitchTokens> v{};
    v[static_cast<std::size_t>(index)] = 1.0f;
    return v;
}

template <typename T>
Tensor<T> embed_pitch(const PitchTrack& track, const Tensor<T>& weight)
{
    require(weight.rank() == 2 && weight.dim(1) == kPitchTokens, ErrorCode::DimMismatch,
            "pitch embedding weight must be [D, 37], got " + dims_to_string(weight.dims()));
    require(!track.indices.empty(), ErrorCode::DimMismatch, "empty pitch track");
    const std::size_t width = weight.dim(0);
    Tensor<T> out({track.frames(), width});
    for (std::size_t t = 0; t < track.frames(); ++t) {
        const int idx = track.indices[t];
        require(idx >= 0 && idx < kPitchTokens, ErrorCode::IndexOutOfRange, "pitch index out of range");
        for (std::size_t d = 0; d < width; ++d)
            out(t, d) = weight(d, static_cast<std::size_t>(idx));
    }
    return out;
}

template Tensor<float> embed_pitch(const PitchTrack&, const Tensor<float>&);
template Tensor<double> embed_pitch(const PitchTrack&, const Tensor<double>&);

} // namespace pt
