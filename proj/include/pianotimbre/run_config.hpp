#pragma once

#include "pianotimbre/convert.hpp"
#include "pianotimbre/evaluation.hpp"
#include "pianotimbre/training.hpp"

#include <nlohmann/json_fwd.hpp>

#include <string>

namespace pt {

struct SynthSettings {
    int clips = 8;
    double seconds = 6.0;
    std::string preset = "piano";
    std::uint64_t seed = 0;
    int sample_rate = 16000;
    bool octave_down = false;

    bool operator==(const SynthSettings&) const = default;
};

struct CodebookSettings {
    int k = 32;
    int max_iters = 100;
    double tol = 1e-6;
    std::string init = "optimal"; // or "quantile"
    std::uint64_t seed = 0;

    bool operator==(const CodebookSettings&) const = default;
};

struct EvaluateSettings {
    double window_s = 0.4;
    double hop_s = 0.1;
    int nfft = 2048;
    int stft_hop = 512;

    bool operator==(const EvaluateSettings&) const = default;
};

/// Every tunable of every command; each field has a default and unknown keys
/// are rejected at every level.
struct RunConfig {
    SynthSettings synth;
    CodebookSettings codebook;
    TrainConfig train;
    ConvertOptions convert;
    EvaluateSettings evaluate;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

/// Parses (empty text: defaults), validates and re-serialises with every field present.
RunConfig parse_run_config(const std::string& text);
std::string run_config_to_string(const RunConfig& c);

CodebookFitOptions codebook_fit_options(const CodebookSettings& s);
EvalOptions eval_options(const EvaluateSettings& s);

} // namespace pt
