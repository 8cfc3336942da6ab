#pragma once

#include "pianotimbre/audio_io.hpp"
#include "pianotimbre/dataset_index.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace pt {

inline constexpr std::int64_t kTicksPerSecond = 960;
inline constexpr std::int64_t kTicksPerQuarter = 480;
inline constexpr std::int64_t kTicksPerMeasure = 1920;
inline constexpr std::int64_t kMinScoreTicks = 240;

/// One row of the corpus pitch histogram. `pitch_index` is the tokenizer index
/// the generator emits; rows above B6 clamp to 36.
struct PitchStatistic {
    std::string_view name;
    int table_index; // 1..36, or 37/38 for C7/D7 (beyond the tokenizer)
    int pitch_index;
    int count;
};
const std::array<PitchStatistic, 20>& pitch_statistics();

struct DurationStatistic {
    std::int64_t ticks;
    std::string_view name;
    int count;
};
const std::array<DurationStatistic, 10>& duration_statistics();

struct Note {
    int pitch_index = 0; // 1..36
    std::int64_t start_tick = 0;
    std::int64_t duration_tick = 0;
    int statistic_row = -1; // row of pitch_statistics() it was drawn from, -1 if hand-written

    std::int64_t end_tick() const noexcept { return start_tick + duration_tick; }
    bool operator==(const Note&) const = default;
};

struct Score {
    std::vector<Note> notes;
    std::int64_t total_ticks = 0;
    int clamped_notes = 0; // notes drawn above B6 and clamped to index 36

    bool operator==(const Score&) const = default;
};

double ticks_to_seconds(std::int64_t ticks);

/// Back-to-back notes with i.i.d. pitch and duration drawn from the two
/// histograms until total_ticks is covered; the last note is truncated.
Score sample_score(std::mt19937_64& rng, std::int64_t total_ticks);

struct TimbrePreset {
    std::string name;
    std::vector<double> harmonics; // amplitude of harmonic k+1
    double attack_s = 0.005;
    double decay_tau_s = 0.0; // exponential decay time constant; 0 sustains
    double noise_level = 0.0; // uniform noise amplitude relative to the harmonic sum
    double peak_limit = 0.9;  // bound on |sample| before fades
};

TimbrePreset preset_piano();
TimbrePreset preset_violin();
TimbrePreset preset_flute();
/// "piano", "violin" or "flute"; InvalidArgument otherwise.
TimbrePreset preset_by_name(const std::string& name);
std::vector<std::string> preset_names();

struct RenderOptions {
    bool octave_down = false;   // fundamental halved at render time
    std::uint64_t noise_seed = 0;
    double fade_s = 0.005;
};

/// Additive rendering of a monophonic score. Output length is
/// round(total_ticks * sample_rate / 960).
AudioClip render_score(const Score& score, const TimbrePreset& preset, int sample_rate,
                       const RenderOptions& opts = {});

struct CorpusOptions {
    double clip_seconds = 6.0;
    int sample_rate = 16000;
    bool octave_down = false;
    std::string file_prefix = "clip";
};

/// Writes n WAV files and manifest.json into out_dir. Clip i uses seed + i.
DatasetIndex generate_corpus(int n_clips, const TimbrePreset& preset, std::uint64_t seed,
                             const std::filesystem::path& out_dir, const CorpusOptions& opts = {});

/// Sample ranges [begin, end) covered by each note at the given rate.
std::pair<std::size_t, std::size_t> note_sample_range(const Note& note, int sample_rate);

} // namespace pt
