#include "pianotimbre/synthetic_dataset.hpp"

#include "fileutil.hpp"
#include "pianotimbre/error.hpp"
#include "pianotimbre/log.hpp"
#include "pianotimbre/pitch_encoder.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

namespace pt {

const std::array<PitchStatistic, 20>& pitch_statistics()
{
    static const std::array<PitchStatistic, 20> rows{{
        {"E4", 5, 5, 2},       {"G4", 8, 8, 178},     {"A4", 10, 10, 429},  {"B4", 12, 12, 20},
        {"C5", 13, 13, 987},   {"D5", 15, 15, 1337},  {"E5", 17, 17, 1763}, {"F5", 18, 18, 24},
        {"G5", 20, 20, 2465},  {"A5", 22, 22, 1887},  {"B5", 24, 24, 54},   {"C6", 25, 25, 1591},
        {"D6", 27, 27, 1027},  {"E6", 29, 29, 758},   {"F6", 30, 30, 10},   {"G6", 32, 32, 485},
        {"A6", 34, 34, 141},   {"B6", 36, 36, 4},     {"C7", 37, 36, 49},   {"D7", 39, 36, 5},
    }};
    return rows;
}

const std::array<DurationStatistic, 10>& duration_statistics()
{
    static const std::array<DurationStatistic, 10> rows{{
        {180, "dotted sixteenth", 75},
        {240, "eighth", 4813},
        {360, "dotted eighth", 531},
        {480, "quarter", 1017},
        {720, "dotted quarter", 209},
        {960, "half", 572},
        {1440, "dotted half", 20},
        {1920, "whole", 16},
        {3840, "double whole", 70},
        {160, "quarter triplet", 8},
    }};
    return rows;
}

double ticks_to_seconds(std::int64_t ticks)
{
    require(ticks >= 0, ErrorCode::InvalidArgument, "negative tick count");
    return static_cast<double>(ticks) / static_cast<double>(kTicksPerSecond);
}

Score sample_score(std::mt19937_64& rng, std::int64_t total_ticks)
{
    require(total_ticks >= kMinScoreTicks, ErrorCode::InvalidArgument,
            "score needs at least " + std::to_string(kMinScoreTicks) + " ticks");
    std::vector<double> pitch_w, dur_w;
    for (const auto& r : pitch_statistics())
        pitch_w.push_back(r.count);
    for (const auto& r : duration_statistics())
        dur_w.push_back(r.count);
    std::discrete_distribution<int> pitch_dist(pitch_w.begin(), pitch_w.end());
    std::discrete_distribution<int> dur_dist(dur_w.begin(), dur_w.end());

    Score score;
    score.total_ticks = total_ticks;
    std::int64_t t = 0;
    while (t < total_ticks) {
        const int row = pitch_dist(rng);
        const auto& stat = pitch_statistics()[static_cast<std::size_t>(row)];
        const std::int64_t dur = duration_statistics()[static_cast<std::size_t>(dur_dist(rng))].ticks;
        Note n;
        n.pitch_index = stat.pitch_index;
        n.statistic_row = row;
        n.start_tick = t;
        n.duration_tick = std::min(dur, total_ticks - t);
        if (stat.table_index != stat.pitch_index)
            ++score.clamped_notes;
        score.notes.push_back(n);
        t += n.duration_tick;
    }
    return score;
}

TimbrePreset preset_piano()
{
    TimbrePreset p;
    p.name = "piano";
    for (int k = 1; k <= 12; ++k)
        p.harmonics.push_back(1.0 / k);
    p.attack_s = 0.005;
    p.decay_tau_s = 0.4;
    return p;
}

TimbrePreset preset_violin()
{
    TimbrePreset p;
    p.name = "violin";
    for (int k = 1; k <= 20; ++k)
        p.harmonics.push_back(1.0 / k);
    p.attack_s = 0.08;
    return p;
}

TimbrePreset preset_flute()
{
    TimbrePreset p;
    p.name = "flute";
    p.harmonics = {1.0, 0.3, 0.12, 0.05, 0.02};
    p.attack_s = 0.05;
    p.noise_level = 0.03;
    return p;
}

TimbrePreset preset_by_name(const std::string& name)
{
    if (name == "piano")
        return preset_piano();
    if (name == "violin")
        return preset_violin();
    if (name == "flute")
        return preset_flute();
    fail(ErrorCode::InvalidArgument, "unknown preset '" + name + "' (piano, violin, flute)");
}

std::vector<std::string> preset_names()
{
    return {"piano", "violin", "flute"};
}

std::pair<std::size_t, std::size_t> note_sample_range(const Note& note, int sample_rate)
{
    const auto at = [&](std::int64_t tick) {
        return static_cast<std::size_t>(
            std::llround(static_cast<double>(tick) * sample_rate / static_cast<double>(kTicksPerSecond)));
    };
    return {at(note.start_tick), at(note.end_tick())};
}

AudioClip render_score(const Score& score, const TimbrePreset& preset, int sample_rate, const RenderOptions& opts)
{
    require(sample_rate > 0, ErrorCode::InvalidArgument, "sample rate must be positive");
    require(!preset.harmonics.empty(), ErrorCode::InvalidArgument, "preset has no harmonics");
    for (double a : preset.harmonics)
        require(a >= 0.0, ErrorCode::InvalidArgument, "negative harmonic amplitude in preset " + preset.name);
    require(preset.peak_limit > 0.0 && preset.peak_limit <= 1.0 && preset.noise_level >= 0.0,
            ErrorCode::InvalidArgument, "preset peak limit or noise level out of range");

    const std::int64_t end_tick = std::max<std::int64_t>(
        score.total_ticks, score.notes.empty() ? 0 : score.notes.back().end_tick());
    AudioClip out;
    out.sample_rate = sample_rate;
    out.samples.assign(static_cast<std::size_t>(std::llround(static_cast<double>(end_tick) * sample_rate /
                                                             static_cast<double>(kTicksPerSecond))),
                       0.0f);

    std::mt19937_64 noise_rng(opts.noise_seed);
    std::uniform_real_distribution<double> uniform(-1.0, 1.0);
    const double nyquist = 0.5 * sample_rate;
    const double fade_n = opts.fade_s * sample_rate;
    const double two_pi = 2.0 * std::numbers::pi;

    for (const Note& note : score.notes) {
        if (note.pitch_index == 0)
            fail(ErrorCode::PitchIndexZeroInScore, "note at tick " + std::to_string(note.start_tick) +
                                                        " uses the rest index 0");
        require(note.pitch_index >= 1 && note.pitch_index < kPitchTokens, ErrorCode::IndexOutOfRange,
                "note pitch index " + std::to_string(note.pitch_index));
        double f0 = pitch_table()[static_cast<std::size_t>(note.pitch_index)].f0_hz;
        if (opts.octave_down)
            f0 *= 0.5;

        std::vector<double> amps;
        for (std::size_t k = 0; k < preset.harmonics.size() && (k + 1) * f0 < nyquist; ++k)
            amps.push_back(preset.harmonics[k]);
        double amp_sum = 0.0;
        for (double a : amps)
            amp_sum += a;
        if (amp_sum <= 0.0)
            continue;
        const double gain = preset.peak_limit / (amp_sum * (1.0 + preset.noise_level));

        const auto [begin, stop] = note_sample_range(note, sample_rate);
        const std::size_t end = std::min(stop, out.size());
        if (begin >= end)
            continue;
        const double len = static_cast<double>(end - begin);
        for (std::size_t i = begin; i < end; ++i) {
            const double n = static_cast<double>(i - begin);
            const double t = n / sample_rate;
            double env = preset.attack_s > 0.0 ? std::min(1.0, t / preset.attack_s) : 1.0;
            if (preset.decay_tau_s > 0.0)
                env *= std::exp(-t / preset.decay_tau_s);
            if (fade_n > 0.0) {
                const double edge = std::min(n, len - 1.0 - n);
                if (edge < fade_n)
                    env *= 0.5 - 0.5 * std::cos(std::numbers::pi * std::max(0.0, edge) / fade_n);
            }
            double s = 0.0;
            for (std::size_t k = 0; k < amps.size(); ++k)
                s += amps[k] * std::sin(two_pi * static_cast<double>(k + 1) * f0 * t);
            if (preset.noise_level > 0.0)
                s += preset.noise_level * amp_sum * uniform(noise_rng);
            out.samples[i] = static_cast<float>(gain * env * s);
        }
    }
    return out;
}

DatasetIndex generate_corpus(int n_clips, const TimbrePreset& preset, std::uint64_t seed,
                             const std::filesystem::path& out_dir, const CorpusOptions& opts)
{
    require(n_clips >= 1, ErrorCode::InvalidArgument, "corpus needs at least one clip");
    require(opts.clip_seconds > 0.0 && opts.sample_rate > 0, ErrorCode::InvalidArgument,
            "clip duration and sample rate must be positive");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec)
        fail(ErrorCode::IoFailure, "cannot create " + out_dir.string() + ": " + ec.message());

    const auto ticks = std::max<std::int64_t>(
        kMinScoreTicks, std::llround(opts.clip_seconds * static_cast<double>(kTicksPerSecond)));
    const auto samples = static_cast<std::size_t>(std::llround(opts.clip_seconds * opts.sample_rate));

    DatasetIndex index;
    index.root = out_dir;
    index.sample_rate = opts.sample_rate;
    index.preset = preset.name;
    index.seed = seed;
    for (int i = 0; i < n_clips; ++i) {
        const std::uint64_t clip_seed = seed + static_cast<std::uint64_t>(i);
        std::mt19937_64 rng(clip_seed);
        const Score score = sample_score(rng, ticks);
        if (score.clamped_notes > 0)
            log_message(LogLevel::Warning, "clip " + std::to_string(i) + ": " + std::to_string(score.clamped_notes) +
                                               " note(s) above B6 clamped to B6");
        RenderOptions ro;
        ro.octave_down = opts.octave_down;
        ro.noise_seed = clip_seed;
        AudioClip clip = render_score(score, preset, opts.sample_rate, ro);
        clip.samples.resize(samples, 0.0f);

        char name[64];
        std::snprintf(name, sizeof name, "%s_%04d.wav", opts.file_prefix.c_str(), i);
        const auto bytes = encode_wav(clip, WavEncoding::Pcm16);
        std::ofstream out(out_dir / name, std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out)
            fail(ErrorCode::IoFailure, "cannot write " + (out_dir / name).string());
        index.entries.push_back({name, clip.size(), sha256_hex(bytes)});
    }
    save_manifest(index, out_dir / "manifest.json");
    return index;
}

} // namespace pt
