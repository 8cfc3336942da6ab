#include "pianotimbre/loudness_encoder.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

using namespace pt;
using pt::test::code_of;
using pt::test::sine;

namespace {

std::complex<double> section_response(const Biquad& s, double hz, double rate)
{
    const auto z1 = std::polar(1.0, -2.0 * std::numbers::pi * hz / rate);
    const auto z2 = z1 * z1;
    return (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
}

double cascade_gain_db(double hz)
{
    const auto h = section_response(KWeightingFilter::shelf, hz, 48000) *
                   section_response(KWeightingFilter::highpass, hz, 48000);
    return 20.0 * std::log10(std::abs(h));
}

double rms_db_steady(const std::vector<double>& y, std::size_t skip)
{
    double s = 0;
    for (std::size_t i = skip; i < y.size(); ++i)
        s += y[i] * y[i];
    return 10.0 * std::log10(s / static_cast<double>(y.size() - skip));
}

} // namespace

TEST_CASE("K-weighting: DC decays and measured gain matches the coefficient response")
{
    const auto dc = KWeightingFilter::apply(std::vector<float>(48000, 0.5f));
    CHECK(std::abs(dc.back()) < 1e-3);
    CHECK(std::abs(cascade_gain_db(1e-6)) > 100.0);

    for (double hz : {997.0, 10000.0}) {
        const auto x = sine(hz, 0.5, 48000, 48000);
        const auto y = KWeightingFilter::apply(x.samples);
        const double measured = rms_db_steady(y, 4800) - 10.0 * std::log10(0.125);
        CHECK(std::abs(measured - cascade_gain_db(hz)) < 0.02);
    }
    // The published coefficients put about +0.69 dB at 997 Hz.
    CHECK(std::abs(cascade_gain_db(997.0) - 0.69) < 0.1);
    CHECK(std::abs(cascade_gain_db(10000.0) - 4.0) < 0.5);

    CHECK(code_of([] { k_weight(AudioClip{std::vector<float>(100), 16000}); }) == ErrorCode::WrongSampleRate);
    CHECK(k_weight_resampled(AudioClip{std::vector<float>(16000), 16000}).size() == 48000);
}

TEST_CASE("integrated loudness: floor, conformance tone, amplitude law")
{
    CHECK(integrated_loudness(AudioClip{std::vector<float>(48000, 0.0f), 48000}) == -70.0);

    const auto tone = sine(997.0, 1.0, 48000 * 2, 48000);
    const double lk = integrated_loudness(tone);
    const double oracle = -0.691 + 10.0 * std::log10(0.5 * std::pow(10.0, cascade_gain_db(997.0) / 10.0));
    CHECK(std::abs(lk - (-3.01)) < 0.1);
    CHECK(std::abs(lk - oracle) < 0.02);

    const auto tone16 = sine(997.0, 1.0, 16000 * 2, 16000);
    CHECK(std::abs(integrated_loudness(tone16) - (-3.01)) < 0.1);

    std::mt19937_64 rng(9);
    std::normal_distribution<float> n(0.0f, 0.1f);
    AudioClip noise{std::vector<float>(48000), 48000};
    for (auto& s : noise.samples)
        s = n(rng);
    const double base = integrated_loudness(noise);
    for (double k : {0.5, 0.25, 2.0}) {
        AudioClip scaled = noise;
        for (auto& s : scaled.samples)
            s = static_cast<float>(s * k);
        CHECK(std::abs(integrated_loudness(scaled) - base - 20.0 * std::log10(k)) < 0.01);
    }

    AudioClip rotated = noise;
    std::rotate(rotated.samples.begin(), rotated.samples.begin() + 12345, rotated.samples.end());
    CHECK(std::abs(integrated_loudness(rotated) - base) < 0.01);

    CHECK(code_of([] { integrated_loudness(AudioClip{{}, 48000}); }) == ErrorCode::EmptyInput);
    CHECK(code_of([] { loudness_of_weighted(std::vector<double>{}); }) == ErrorCode::EmptyInput);
}

TEST_CASE("segment loudness: bounds, stationarity, silent half")
{
    const auto b = segment_bounds(1u << 18);
    for (int i = 0; i < 16; ++i)
        CHECK(b[i + 1] - b[i] == 16384);

    for (std::size_t n : {16u, 100u, 96000u, 96007u}) {
        const auto bb = segment_bounds(n);
        CHECK(bb.front() == 0);
        CHECK(bb.back() == n);
        for (int i = 0; i < 15; ++i)
            CHECK(bb[i + 1] - bb[i] == n / 16);
    }

    const auto steady = segment_loudness(sine(1000.0, 0.3, 96000, 16000));
    for (double v : steady.values)
        CHECK(std::abs(v - steady.values[8]) < 0.1);

    auto half = sine(1000.0, 0.3, 96000, 16000);
    std::fill(half.samples.begin(), half.samples.begin() + 48000, 0.0f);
    const auto hv = segment_loudness(half);
    for (int i = 0; i < 8; ++i)
        CHECK(hv.values[i] == -70.0);
    for (int i = 9; i < 16; ++i)
        CHECK(hv.values[i] > -20.0);
    for (double v : hv.values)
        CHECK(v >= -70.0);

    CHECK(code_of([] { segment_loudness(AudioClip{std::vector<float>(15), 16000}); }) == ErrorCode::ClipTooShort);
}

TEST_CASE("encode_loudness")
{
    Codebook cb;
    cb.centroids = {-70.0, -30.0, -12.0};
    LoudnessVector v;
    v.values.fill(-70.0);
    for (int i : encode_loudness(v, cb))
        CHECK(i == 0);
    v.values[3] = -12.0;
    v.values[4] = -29.0;
    const auto idx = encode_loudness(v, cb);
    CHECK(idx[3] == 2);
    CHECK(idx[4] == 1);

    Codebook one;
    one.centroids = {-20.0};
    for (int i : encode_loudness(v, one))
        CHECK(i == 0);
    CHECK(code_of([&] { encode_loudness(v, Codebook{}); }) == ErrorCode::EmptyCodebook);
}

TEST_CASE("align_to_timeline")
{
    std::vector<int> idx(16);
    for (int i = 0; i < 16; ++i)
        idx[i] = 100 + i;
    CHECK(align_to_timeline(idx, 16) == idx);

    const auto a512 = align_to_timeline(idx, 512);
    REQUIRE(a512.size() == 512);
    for (std::size_t t = 0; t < 512; ++t)
        CHECK(a512[t] == idx[t / 32]);

    const auto a20 = align_to_timeline(idx, 20);
    REQUIRE(a20.size() == 20);
    CHECK(a20[19] == idx[15]);
    for (std::size_t t = 0; t < 20; ++t)
        CHECK(a20[t] == idx[t * 16 / 20]);

    for (std::size_t len : {16u, 17u, 33u, 100u, 1000u}) {
        const auto a = align_to_timeline(idx, len);
        std::vector<bool> seen(16, false);
        for (std::size_t t = 0; t < len; ++t) {
            if (t > 0)
                CHECK(a[t] >= a[t - 1]);
            seen[static_cast<std::size_t>(a[t] - 100)] = true;
        }
        for (bool s : seen)
            CHECK(s);
    }
}

TEST_CASE("loudness track and embedding")
{
    Codebook cb;
    cb.centroids = {-70.0, -20.0};
    auto half = sine(500.0, 0.3, 32000, 16000);
    std::fill(half.samples.begin(), half.samples.begin() + 16000, 0.0f);
    const auto tr = loudness_track(half, cb, 63);
    CHECK(tr.aligned_indices.size() == 63);
    CHECK(tr.segment_indices[0] == 0);
    CHECK(tr.segment_indices[15] == 1);

    std::mt19937_64 rng(10);
    const auto w = pt::test::random_tensor<float>({4, 2}, rng);
    const auto e = embed_loudness<float>(tr.aligned_indices, w);
    REQUIRE(e.dims() == Dims{63, 4});
    for (std::size_t t = 0; t < 63; ++t)
        for (std::size_t d = 0; d < 4; ++d)
            CHECK(e(t, d) == w(d, static_cast<std::size_t>(tr.aligned_indices[t])));

    const auto z = embed_loudness<float>(tr.aligned_indices, Tensor<float>({4, 2}, 0.0f));
    for (float v : z.values())
        CHECK(v == 0.0f);

    const std::vector<int> bad{0, 2};
    CHECK(code_of([&] { embed_loudness<float>(bad, w); }) == ErrorCode::IndexOutOfRange);
}
