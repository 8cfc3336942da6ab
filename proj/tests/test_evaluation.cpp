#include "pianotimbre/evaluation.hpp"
#include "test_support.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <regex>

using namespace pt;
using pt::test::code_of;
using pt::test::sine;
using pt::test::TempDir;

#ifndef PT_FIXTURE_DIR
#error "PT_FIXTURE_DIR must point at tests/fixtures"
#endif

namespace {

// Checks the subset of JSON Schema used by the fixture: type, required,
// properties, items, minimum, maximum.
bool conforms(const nlohmann::json& value, const nlohmann::json& schema, std::string& why, const std::string& at = "$")
{
    const std::string type = schema.value("type", "");
    const bool type_ok = type.empty() || (type == "object" && value.is_object()) ||
                         (type == "array" && value.is_array()) || (type == "string" && value.is_string()) ||
                         (type == "integer" && value.is_number_integer()) ||
                         (type == "number" && value.is_number());
    if (!type_ok) {
        why = at + ": expected " + type;
        return false;
    }
    if (value.is_number()) {
        if (schema.contains("minimum") && value.get<double>() < schema["minimum"].get<double>()) {
            why = at + ": below minimum";
            return false;
        }
        if (schema.contains("maximum") && value.get<double>() > schema["maximum"].get<double>()) {
            why = at + ": above maximum";
            return false;
        }
    }
    for (const auto& key : schema.value("required", nlohmann::json::array()))
        if (!value.contains(key.get<std::string>())) {
            why = at + ": missing " + key.get<std::string>();
            return false;
        }
    if (schema.contains("properties"))
        for (const auto& [key, sub] : schema["properties"].items())
            if (value.contains(key) && !conforms(value[key], sub, why, at + "." + key))
                return false;
    if (schema.contains("items") && value.is_array())
        for (std::size_t i = 0; i < value.size(); ++i)
            if (!conforms(value[i], schema["items"], why, at + "[" + std::to_string(i) + "]"))
                return false;
    return true;
}

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p);
    return {std::istreambuf_iterator<char>(in), {}};
}

} // namespace

TEST_CASE("loudness curve: counts, silence, stationarity")
{
    const int sr = 16000;
    for (std::size_t n : {6400u, 16000u, 32000u, 96000u, 7777u}) {
        const auto c = loudness_curve(AudioClip{std::vector<float>(n, 0.0f), sr});
        const std::size_t expect = (n - 6400) / 1600 + 1;
        CHECK(c.size() == expect);
        for (double v : c.values)
            CHECK(v == -70.0);
        for (std::size_t i = 1; i < c.times.size(); ++i)
            CHECK(c.times[i] > c.times[i - 1]);
    }

    const auto s = loudness_curve(sine(700.0, 0.4, 48000, sr));
    for (double v : s.values)
        CHECK(std::abs(v - s.values[0]) < 0.1);
    CHECK(s.times[0] == doctest::Approx(0.2));

    CHECK(code_of([] { loudness_curve(AudioClip{std::vector<float>(1000), 16000}); }) == ErrorCode::ClipTooShort);
}

TEST_CASE("loudness difference")
{
    const auto a = sine(700.0, 0.4, 32000, 16000);
    auto half = a;
    for (auto& x : half.samples)
        x *= 0.5f;
    const auto ca = loudness_curve(a);
    for (double d : loudness_difference(ca, ca))
        CHECK(d == 0.0);
    for (double d : loudness_difference(ca, loudness_curve(half)))
        CHECK(std::abs(d - 6.02) < 0.01);

    const auto other = loudness_curve(sine(700.0, 0.4, 40000, 16000));
    CHECK(code_of([&] { loudness_difference(ca, other); }) == ErrorCode::GridMismatch);
    const auto coarse = loudness_curve(a, 0.4, 0.2);
    CHECK(code_of([&] { loudness_difference(ca, coarse); }) == ErrorCode::GridMismatch);
}

TEST_CASE("spectrogram: geometry, bin dominance, energy concentration")
{
    const int sr = 16000;
    const std::size_t n = 16000;
    const auto quiet = spectrogram(AudioClip{std::vector<float>(n, 0.0f), sr});
    CHECK(quiet.bins == 1025);
    CHECK(quiet.frames == (n - 2048) / 512 + 1);
    for (float m : quiet.magnitude)
        CHECK(m == 0.0f);

    // 500 Hz is bin 64 at nfft 2048.
    const auto on_bin = spectrogram(sine(500.0, 0.5, n, sr));
    for (std::size_t f = 0; f < on_bin.frames; ++f) {
        const double peak = on_bin.at(f, 64);
        for (std::size_t b = 0; b < on_bin.bins; ++b) {
            if (b >= 63 && b <= 65)
                continue;
            CHECK(20.0 * std::log10(peak / std::max(1e-12, static_cast<double>(on_bin.at(f, b)))) >= 20.0);
        }
    }

    const double hz = 1234.5;
    const auto off = spectrogram(sine(hz, 0.5, n, sr), 2048, 256);
    CHECK(off.frames == (n - 2048) / 256 + 1);
    const double true_bin = hz * 2048 / sr;
    for (std::size_t f = 0; f < off.frames; ++f) {
        double near = 0, all = 0;
        for (std::size_t b = 0; b < off.bins; ++b) {
            const double e = static_cast<double>(off.at(f, b)) * off.at(f, b);
            all += e;
            if (std::abs(static_cast<double>(b) - true_bin) <= 2.0)
                near += e;
        }
        CHECK(near / all >= 0.9);
    }
    const auto sum = summarize(off);
    CHECK(std::abs(sum.peak_frequency_hz - hz) <= sr / 2048.0);

    CHECK(code_of([] { spectrogram(AudioClip{std::vector<float>(1000), 16000}); }) == ErrorCode::ClipTooShort);
}

TEST_CASE("pitch accuracy")
{
    const int sr = 16000;
    const auto a = sine(440.0, 0.5, 16000, sr);
    const auto b = sine(466.16, 0.5, 16000, sr);
    const AudioClip quiet{std::vector<float>(16000, 0.0f), sr};
    CHECK(pitch_accuracy(a, a) == 1.0);
    CHECK(pitch_accuracy(quiet, quiet) == 1.0);
    CHECK(pitch_accuracy(a, b) == 0.0);
    CHECK(pitch_accuracy(b, a) == 0.0);

    auto mixed = a;
    std::copy(b.samples.begin() + 8000, b.samples.end(), mixed.samples.begin() + 8000);
    const double x = pitch_accuracy(a, mixed);
    CHECK(x == pitch_accuracy(mixed, a));
    CHECK(x > 0.3);
    CHECK(x < 0.7);

    CHECK(code_of([&] { pitch_accuracy(a, sine(440.0, 0.5, 15000, sr)); }) == ErrorCode::DurationMismatch);
    CHECK(code_of([&] { pitch_accuracy(a, sine(440.0, 0.5, 16000, 22050)); }) == ErrorCode::DurationMismatch);
}

TEST_CASE("report: metrics, files, JSON schema, CSV and SVG contracts")
{
    TempDir dir;
    const auto src = sine(440.0, 0.5, 32000, 16000);
    auto conv = src;
    for (auto& s : conv.samples)
        s *= 0.5f;
    auto report = evaluate(src, conv);
    report.source_file = "src.wav";
    report.converted_file = "out.wav";
    report.checkpoint_id = "ck";
    CHECK(report.pitch_accuracy == 1.0);
    CHECK(std::abs(report.mean_abs_difference_lu - 6.02) < 0.01);
    CHECK(report.max_abs_difference_lu >= report.mean_abs_difference_lu);
    CHECK(report.sample_rate == 16000);
    CHECK(report.duration_s == doctest::Approx(2.0));

    write_report(report, dir / "r");
    const auto schema = nlohmann::json::parse(slurp(std::filesystem::path(PT_FIXTURE_DIR) / "report.schema.json"));
    const auto j = nlohmann::json::parse(slurp(dir / "r" / "report.json"));
    std::string why;
    CHECK_MESSAGE(conforms(j, schema, why), why);
    const auto back = j.get<EvalReport>();
    CHECK(back.pitch_accuracy == report.pitch_accuracy);
    CHECK(back.difference == report.difference);
    CHECK(back.source_curve.values == report.source_curve.values);
    CHECK(back.checkpoint_id == "ck");

    auto bad = j;
    bad["schema_version"] = 5;
    CHECK(code_of([&] { (void)bad.get<EvalReport>(); }) == ErrorCode::SchemaVersionMismatch);

    std::ifstream csv(dir / "r" / "curves.csv");
    std::string line;
    std::getline(csv, line);
    CHECK(line == "time_s,source_lkfs,converted_lkfs,difference_lu");
    std::size_t rows = 0;
    while (std::getline(csv, line))
        ++rows;
    CHECK(rows == report.source_curve.size());

    const auto svg = slurp(dir / "r" / "curves.svg");
    const std::regex poly("<polyline");
    CHECK(std::distance(std::sregex_iterator(svg.begin(), svg.end(), poly), std::sregex_iterator()) == 3);

    std::ofstream(dir / "blocker") << "x";
    CHECK(code_of([&] { write_report(report, dir / "blocker" / "sub"); }) == ErrorCode::IoFailure);
}
