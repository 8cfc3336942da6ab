#include "pianotimbre/run_config.hpp"

#include <nlohmann/json.hpp>

#include <set>

namespace pt {

namespace {

void check_keys(const nlohmann::json& j, const std::string& section, const std::set<std::string>& known)
{
    require(j.is_object(), ErrorCode::InvalidArgument, section + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        require(known.count(it.key()) > 0, ErrorCode::UnknownConfigKey, section + "." + it.key());
}

} // namespace

void to_json(nlohmann::json& j, const RunConfig& c)
{
    j = nlohmann::json{
        {"synth",
         {{"clips", c.synth.clips},
          {"seconds", c.synth.seconds},
          {"preset", c.synth.preset},
          {"seed", c.synth.seed},
          {"sample_rate", c.synth.sample_rate},
          {"octave_down", c.synth.octave_down}}},
        {"codebook",
         {{"k", c.codebook.k},
          {"max_iters", c.codebook.max_iters},
          {"tol", c.codebook.tol},
          {"init", c.codebook.init},
          {"seed", c.codebook.seed}}},
        {"train", c.train},
        {"convert",
         {{"steps", c.convert.steps}, {"seed", c.convert.seed}, {"eta", c.convert.eta}, {"overlap", c.convert.overlap}}},
        {"evaluate",
         {{"window_s", c.evaluate.window_s},
          {"hop_s", c.evaluate.hop_s},
          {"nfft", c.evaluate.nfft},
          {"stft_hop", c.evaluate.stft_hop}}}};
}

void from_json(const nlohmann::json& j, RunConfig& c)
{
    check_keys(j, "config", {"synth", "codebook", "train", "convert", "evaluate"});
    if (j.contains("synth")) {
        const auto& s = j["synth"];
        check_keys(s, "synth", {"clips", "seconds", "preset", "seed", "sample_rate", "octave_down"});
        c.synth.clips = s.value("clips", c.synth.clips);
        c.synth.seconds = s.value("seconds", c.synth.seconds);
        c.synth.preset = s.value("preset", c.synth.preset);
        c.synth.seed = s.value("seed", c.synth.seed);
        c.synth.sample_rate = s.value("sample_rate", c.synth.sample_rate);
        c.synth.octave_down = s.value("octave_down", c.synth.octave_down);
    }
    if (j.contains("codebook")) {
        const auto& s = j["codebook"];
        check_keys(s, "codebook", {"k", "max_iters", "tol", "init", "seed"});
        c.codebook.k = s.value("k", c.codebook.k);
        c.codebook.max_iters = s.value("max_iters", c.codebook.max_iters);
        c.codebook.tol = s.value("tol", c.codebook.tol);
        c.codebook.init = s.value("init", c.codebook.init);
        c.codebook.seed = s.value("seed", c.codebook.seed);
    }
    if (j.contains("train"))
        from_json(j["train"], c.train);
    if (j.contains("convert")) {
        const auto& s = j["convert"];
        check_keys(s, "convert", {"steps", "seed", "eta", "overlap"});
        c.convert.steps = s.value("steps", c.convert.steps);
        c.convert.seed = s.value("seed", c.convert.seed);
        c.convert.eta = s.value("eta", c.convert.eta);
        c.convert.overlap = s.value("overlap", c.convert.overlap);
    }
    if (j.contains("evaluate")) {
        const auto& s = j["evaluate"];
        check_keys(s, "evaluate", {"window_s", "hop_s", "nfft", "stft_hop"});
        c.evaluate.window_s = s.value("window_s", c.evaluate.window_s);
        c.evaluate.hop_s = s.value("hop_s", c.evaluate.hop_s);
        c.evaluate.nfft = s.value("nfft", c.evaluate.nfft);
        c.evaluate.stft_hop = s.value("stft_hop", c.evaluate.stft_hop);
    }
}

RunConfig parse_run_config(const std::string& text)
{
    RunConfig c;
    if (text.find_first_not_of(" \t\r\n") == std::string::npos)
        return c;
    try {
        from_json(nlohmann::json::parse(text), c);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::InvalidArgument, std::string("config: ") + e.what());
    }
    require(c.synth.clips >= 1 && c.synth.seconds > 0.0 && c.synth.sample_rate > 0, ErrorCode::InvalidArgument,
            "synth: clips, seconds and sample_rate must be positive");
    require(c.codebook.k >= 1 && c.codebook.max_iters >= 1, ErrorCode::InvalidArgument,
            "codebook: k and max_iters must be >= 1");
    require(c.codebook.init == "optimal" || c.codebook.init == "quantile", ErrorCode::InvalidArgument,
            "codebook.init must be optimal|quantile");
    require(c.convert.steps >= 1 && c.convert.eta >= 0.0, ErrorCode::InvalidArgument,
            "convert: steps must be >= 1 and eta >= 0");
    c.train.validate();
    return c;
}

std::string run_config_to_string(const RunConfig& c)
{
    return nlohmann::json(c).dump(2) + "\n";
}

CodebookFitOptions codebook_fit_options(const CodebookSettings& s)
{
    CodebookFitOptions o;
    o.max_iters = s.max_iters;
    o.tol = s.tol;
    o.seed = s.seed;
    o.init = s.init == "quantile" ? CodebookInit::Quantile : CodebookInit::Optimal;
    return o;
}

EvalOptions eval_options(const EvaluateSettings& s)
{
    EvalOptions o;
    o.window_s = s.window_s;
    o.hop_s = s.hop_s;
    o.nfft = s.nfft;
    o.stft_hop = s.stft_hop;
    return o;
}

} // namespace pt
