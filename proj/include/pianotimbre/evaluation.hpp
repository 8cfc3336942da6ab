#pragma once

#include "pianotimbre/audio_io.hpp"
#include "pianotimbre/pitch_encoder.hpp"

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace pt {

inline constexpr int kReportSchemaVersion = 1;

struct LoudnessCurve {
    std::vector<double> times;  // window centres, seconds
    std::vector<double> values; // LKFS
    double window_s = 0.4;
    double hop_s = 0.1;

    std::size_t size() const noexcept { return values.size(); }
};

/// Sliding-window loudness; the clip is K-weighted once at 48 kHz.
/// Window count is floor((N - W) / H) + 1 with W, H rounded to samples.
LoudnessCurve loudness_curve(const AudioClip& clip, double window_s = 0.4, double hop_s = 0.1);

/// Elementwise a - b; GridMismatch unless both share the same time grid.
std::vector<double> loudness_difference(const LoudnessCurve& a, const LoudnessCurve& b);

struct Spectrogram {
    std::size_t frames = 0;
    std::size_t bins = 0;
    int nfft = 0;
    int hop = 0;
    int sample_rate = 0;
    std::vector<float> magnitude; // frames x bins, row-major

    float at(std::size_t frame, std::size_t bin) const { return magnitude[frame * bins + bin]; }
    double bin_hz(std::size_t bin) const { return static_cast<double>(bin) * sample_rate / nfft; }
};

/// Hann-windowed STFT magnitudes, frames = floor((N - nfft) / hop) + 1.
Spectrogram spectrogram(const AudioClip& clip, int nfft = 2048, int hop = 512);

/// Fraction of frames whose pitch tokens agree; DurationMismatch unless both
/// clips share sample rate and length.
double pitch_accuracy(const AudioClip& source, const AudioClip& converted, const F0EstimatorConfig& cfg = {},
                      OutOfRangePolicy policy = OutOfRangePolicy::Clamp);

struct SpectrumSummary {
    std::size_t frames = 0;
    std::size_t bins = 0;
    double mean_centroid_hz = 0.0;
    double peak_frequency_hz = 0.0; // bin with the largest time-averaged magnitude
};

SpectrumSummary summarize(const Spectrogram& s);

struct EvalReport {
    double pitch_accuracy = 0.0;
    double mean_abs_difference_lu = 0.0;
    double max_abs_difference_lu = 0.0;
    LoudnessCurve source_curve;
    LoudnessCurve converted_curve;
    std::vector<double> difference;
    SpectrumSummary source_spectrum;
    SpectrumSummary converted_spectrum;
    std::string source_file;
    std::string converted_file;
    std::string checkpoint_id;
    int sample_rate = 0;
    double duration_s = 0.0;
};

struct EvalOptions {
    double window_s = 0.4;
    double hop_s = 0.1;
    int nfft = 2048;
    int stft_hop = 512;
    F0EstimatorConfig f0;
};

EvalReport evaluate(const AudioClip& source, const AudioClip& converted, const EvalOptions& opts = {});

void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

std::string curves_csv(const EvalReport& report);
/// Three polylines: source (red), converted (green), difference (blue).
std::string curves_svg(const EvalReport& report);

/// report.json, curves.csv and curves.svg.
void write_report(const EvalReport& report, const std::filesystem::path& out_dir);

} // namespace pt
