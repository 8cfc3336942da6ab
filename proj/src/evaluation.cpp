#include "pianotimbre/evaluation.hpp"

#include "fileutil.hpp"
#include "pianotimbre/error.hpp"
#include "pianotimbre/loudness_encoder.hpp"

#include <fftw3.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <iomanip>
#include <memory>
#include <mutex>
#include <numbers>
#include <sstream>

namespace pt {

LoudnessCurve loudness_curve(const AudioClip& clip, double window_s, double hop_s)
{
    require(clip.sample_rate > 0, ErrorCode::InvalidArgument, "clip has no sample rate");
    require(window_s > 0.0 && hop_s > 0.0, ErrorCode::InvalidArgument, "window and hop must be positive");
    const auto win = static_cast<std::size_t>(std::llround(window_s * clip.sample_rate));
    const auto hop = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(hop_s * clip.sample_rate)));
    require(win >= 1 && clip.size() >= win, ErrorCode::ClipTooShort,
            "clip of " + std::to_string(clip.size()) + " samples is shorter than the " + std::to_string(win) +
                "-sample loudness window");

    const auto weighted = k_weight_resampled(clip);
    const double scale = static_cast<double>(weighted.size()) / static_cast<double>(clip.size());
    const auto mapped = [&](std::size_t b) {
        return std::min(weighted.size(), static_cast<std::size_t>(std::llround(static_cast<double>(b) * scale)));
    };

    LoudnessCurve curve;
    curve.window_s = window_s;
    curve.hop_s = hop_s;
    const std::size_t count = (clip.size() - win) / hop + 1;
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t lo = mapped(i * hop);
        const std::size_t hi = std::max(lo + 1, mapped(i * hop + win));
        curve.times.push_back((static_cast<double>(i * hop) + 0.5 * static_cast<double>(win)) / clip.sample_rate);
        curve.values.push_back(loudness_of_weighted(std::span<const double>(weighted).subspan(lo, hi - lo)));
    }
    return curve;
}

std::vector<double> loudness_difference(const LoudnessCurve& a, const LoudnessCurve& b)
{
    require(a.times == b.times && a.values.size() == b.values.size(), ErrorCode::GridMismatch,
            "loudness curves have different time grids (" + std::to_string(a.size()) + " vs " +
                std::to_string(b.size()) + " windows)");
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < d.size(); ++i)
        d[i] = a.values[i] - b.values[i];
    return d;
}

namespace {

std::mutex& fftw_mutex()
{
    static std::mutex m;
    return m;
}

} // namespace

Spectrogram spectrogram(const AudioClip& clip, int nfft, int hop)
{
    require(nfft >= 2 && hop >= 1, ErrorCode::InvalidArgument, "nfft must be >= 2 and hop >= 1");
    const auto n = static_cast<std::size_t>(nfft);
    require(clip.size() >= n, ErrorCode::ClipTooShort,
            "clip of " + std::to_string(clip.size()) + " samples is shorter than nfft " + std::to_string(nfft));

    Spectrogram s;
    s.nfft = nfft;
    s.hop = hop;
    s.sample_rate = clip.sample_rate;
    s.bins = n / 2 + 1;
    s.frames = (clip.size() - n) / static_cast<std::size_t>(hop) + 1;
    s.magnitude.resize(s.frames * s.bins);

    std::vector<double> window(n);
    for (std::size_t i = 0; i < n; ++i)
        window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));

    std::unique_ptr<double, decltype(&fftw_free)> in(fftw_alloc_real(n), &fftw_free);
    std::unique_ptr<fftw_complex, decltype(&fftw_free)> out(fftw_alloc_complex(s.bins), &fftw_free);
    fftw_plan plan;
    {
        std::lock_guard lock(fftw_mutex());
        plan = fftw_plan_dft_r2c_1d(nfft, in.get(), out.get(), FFTW_ESTIMATE);
    }
    require(plan != nullptr, ErrorCode::InvalidArgument, "FFTW could not plan a transform of size " +
                                                             std::to_string(nfft));
    for (std::size_t f = 0; f < s.frames; ++f) {
        const std::size_t start = f * static_cast<std::size_t>(hop);
        for (std::size_t i = 0; i < n; ++i)
            in.get()[i] = window[i] * clip.samples[start + i];
        fftw_execute(plan);
        for (std::size_t b = 0; b < s.bins; ++b)
            s.magnitude[f * s.bins + b] = static_cast<float>(std::hypot(out.get()[b][0], out.get()[b][1]));
    }
    {
        std::lock_guard lock(fftw_mutex());
        fftw_destroy_plan(plan);
    }
    return s;
}

double pitch_accuracy(const AudioClip& source, const AudioClip& converted, const F0EstimatorConfig& cfg,
                      OutOfRangePolicy policy)
{
    require(source.sample_rate == converted.sample_rate && source.size() == converted.size(),
            ErrorCode::DurationMismatch,
            "source has " + std::to_string(source.size()) + " samples at " + std::to_string(source.sample_rate) +
                " Hz, converted has " + std::to_string(converted.size()) + " at " +
                std::to_string(converted.sample_rate) + " Hz");
    require(!source.empty(), ErrorCode::EmptyClip, "pitch accuracy of empty clips");
    const auto a = pitch_track(source, cfg, policy);
    const auto b = pitch_track(converted, cfg, policy);
    std::size_t same = 0;
    for (std::size_t i = 0; i < a.frames(); ++i)
        same += a.indices[i] == b.indices[i] ? 1 : 0;
    return static_cast<double>(same) / static_cast<double>(a.frames());
}

SpectrumSummary summarize(const Spectrogram& s)
{
    SpectrumSummary out;
    out.frames = s.frames;
    out.bins = s.bins;
    std::vector<double> mean(s.bins, 0.0);
    double centroid_sum = 0.0;
    std::size_t voiced = 0;
    for (std::size_t f = 0; f < s.frames; ++f) {
        double num = 0.0, den = 0.0;
        for (std::size_t b = 0; b < s.bins; ++b) {
            const double m = s.at(f, b);
            mean[b] += m;
            num += m * s.bin_hz(b);
            den += m;
        }
        if (den > 0.0) {
            centroid_sum += num / den;
            ++voiced;
        }
    }
    out.mean_centroid_hz = voiced > 0 ? centroid_sum / static_cast<double>(voiced) : 0.0;
    const auto peak = std::max_element(mean.begin(), mean.end());
    out.peak_frequency_hz = *peak > 0.0 ? s.bin_hz(static_cast<std::size_t>(peak - mean.begin())) : 0.0;
    return out;
}

EvalReport evaluate(const AudioClip& source, const AudioClip& converted, const EvalOptions& opts)
{
    AudioClip conv = converted;
    if (conv.sample_rate != source.sample_rate && conv.sample_rate > 0)
        conv = resample(conv, source.sample_rate);
    require(conv.size() == source.size(), ErrorCode::DurationMismatch,
            "source lasts " + std::to_string(source.duration_seconds()) + " s, converted " +
                std::to_string(converted.duration_seconds()) + " s");

    EvalReport r;
    r.sample_rate = source.sample_rate;
    r.duration_s = source.duration_seconds();
    r.pitch_accuracy = pitch_accuracy(source, conv, opts.f0);
    r.source_curve = loudness_curve(source, opts.window_s, opts.hop_s);
    r.converted_curve = loudness_curve(conv, opts.window_s, opts.hop_s);
    r.difference = loudness_difference(r.source_curve, r.converted_curve);
    double sum = 0.0, mx = 0.0;
    for (double d : r.difference) {
        sum += std::abs(d);
        mx = std::max(mx, std::abs(d));
    }
    r.mean_abs_difference_lu = sum / static_cast<double>(r.difference.size());
    r.max_abs_difference_lu = mx;
    if (source.size() >= static_cast<std::size_t>(opts.nfft)) {
        r.source_spectrum = summarize(spectrogram(source, opts.nfft, opts.stft_hop));
        r.converted_spectrum = summarize(spectrogram(conv, opts.nfft, opts.stft_hop));
    }
    return r;
}

namespace {

nlohmann::json spectrum_json(const SpectrumSummary& s)
{
    return {{"frames", s.frames},
            {"bins", s.bins},
            {"mean_centroid_hz", s.mean_centroid_hz},
            {"peak_frequency_hz", s.peak_frequency_hz}};
}

SpectrumSummary spectrum_from(const nlohmann::json& j)
{
    SpectrumSummary s;
    s.frames = j.at("frames").get<std::size_t>();
    s.bins = j.at("bins").get<std::size_t>();
    s.mean_centroid_hz = j.at("mean_centroid_hz").get<double>();
    s.peak_frequency_hz = j.at("peak_frequency_hz").get<double>();
    return s;
}

} // namespace

void to_json(nlohmann::json& j, const EvalReport& r)
{
    j = nlohmann::json{
        {"schema_version", kReportSchemaVersion},
        {"metadata",
         {{"source_file", r.source_file},
          {"converted_file", r.converted_file},
          {"checkpoint_id", r.checkpoint_id},
          {"sample_rate", r.sample_rate},
          {"duration_s", r.duration_s}}},
        {"pitch_accuracy", r.pitch_accuracy},
        {"loudness",
         {{"window_s", r.source_curve.window_s},
          {"hop_s", r.source_curve.hop_s},
          {"mean_abs_difference_lu", r.mean_abs_difference_lu},
          {"max_abs_difference_lu", r.max_abs_difference_lu}}},
        {"curves",
         {{"time_s", r.source_curve.times},
          {"source_lkfs", r.source_curve.values},
          {"converted_lkfs", r.converted_curve.values},
          {"difference_lu", r.difference}}},
        {"spectrogram",
         {{"source", spectrum_json(r.source_spectrum)}, {"converted", spectrum_json(r.converted_spectrum)}}}};
}

void from_json(const nlohmann::json& j, EvalReport& r)
{
    try {
        require(j.at("schema_version").get<int>() == kReportSchemaVersion, ErrorCode::SchemaVersionMismatch,
                "unsupported report schema version");
        const auto& m = j.at("metadata");
        r.source_file = m.at("source_file").get<std::string>();
        r.converted_file = m.at("converted_file").get<std::string>();
        r.checkpoint_id = m.at("checkpoint_id").get<std::string>();
        r.sample_rate = m.at("sample_rate").get<int>();
        r.duration_s = m.at("duration_s").get<double>();
        r.pitch_accuracy = j.at("pitch_accuracy").get<double>();
        const auto& l = j.at("loudness");
        r.mean_abs_difference_lu = l.at("mean_abs_difference_lu").get<double>();
        r.max_abs_difference_lu = l.at("max_abs_difference_lu").get<double>();
        const auto& c = j.at("curves");
        r.source_curve.times = c.at("time_s").get<std::vector<double>>();
        r.source_curve.values = c.at("source_lkfs").get<std::vector<double>>();
        r.converted_curve.times = r.source_curve.times;
        r.converted_curve.values = c.at("converted_lkfs").get<std::vector<double>>();
        r.difference = c.at("difference_lu").get<std::vector<double>>();
        r.source_curve.window_s = r.converted_curve.window_s = l.at("window_s").get<double>();
        r.source_curve.hop_s = r.converted_curve.hop_s = l.at("hop_s").get<double>();
        r.source_spectrum = spectrum_from(j.at("spectrogram").at("source"));
        r.converted_spectrum = spectrum_from(j.at("spectrogram").at("converted"));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::MalformedHeader, std::string("malformed report: ") + e.what());
    }
}

std::string curves_csv(const EvalReport& r)
{
    std::ostringstream out;
    out << std::setprecision(10) << "time_s,source_lkfs,converted_lkfs,difference_lu\n";
    for (std::size_t i = 0; i < r.difference.size(); ++i)
        out << r.source_curve.times[i] << ',' << r.source_curve.values[i] << ',' << r.converted_curve.values[i]
            << ',' << r.difference[i] << '\n';
    return out.str();
}

std::string curves_svg(const EvalReport& r)
{
    constexpr double width = 800, height = 400, margin = 40;
    const double t_end = r.source_curve.times.empty() ? 1.0 : std::max(1e-9, r.source_curve.times.back());
    double lo = kLoudnessFloor, hi = 0.0;
    for (const auto* series : {&r.source_curve.values, &r.converted_curve.values, &r.difference})
        for (double v : *series) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    const auto x_of = [&](double t) { return margin + (width - 2 * margin) * t / t_end; };
    const auto y_of = [&](double v) { return height - margin - (height - 2 * margin) * (v - lo) / (hi - lo); };

    std::ostringstream out;
    out << std::fixed << std::setprecision(2);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
    out << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    out << "<line x1=\"" << margin << "\" y1=\"" << y_of(0.0) << "\" x2=\"" << width - margin << "\" y2=\""
        << y_of(0.0) << "\" stroke=\"#999\" stroke-dasharray=\"4 4\"/>\n";
    const auto polyline = [&](const std::vector<double>& v, const char* colour, const char* label) {
        out << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" data-series=\"" << label
            << "\" points=\"";
        for (std::size_t i = 0; i < v.size(); ++i)
            out << (i ? " " : "") << x_of(r.source_curve.times[i]) << ',' << y_of(v[i]);
        out << "\"/>\n";
    };
    polyline(r.source_curve.values, "red", "source");
    polyline(r.converted_curve.values, "green", "converted");
    polyline(r.difference, "blue", "difference");
    out << "<text x=\"" << margin << "\" y=\"" << margin / 2 << "\" font-size=\"12\">loudness (LKFS) vs time (s), "
        << "range " << lo << " to " << hi << "</text>\n";
    out << "</svg>\n";
    return out.str();
}

void write_report(const EvalReport& report, const std::filesystem::path& out_dir)
{
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec)
        fail(ErrorCode::IoFailure, "cannot create " + out_dir.string() + ": " + ec.message());
    detail::write_text(out_dir / "report.json", nlohmann::json(report).dump(2) + "\n");
    detail::write_text(out_dir / "curves.csv", curves_csv(report));
    detail::write_text(out_dir / "curves.svg", curves_svg(report));
}

} // namespace pt
