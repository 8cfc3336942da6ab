#include "pianotimbre/audio_io.hpp"

#include "pianotimbre/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>

namespace pt {

namespace {

static_assert(std::endian::native == std::endian::little, "WAV I/O assumes a little-endian host");

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

template <typename T>
T read_le(std::span<const unsigned char> bytes, std::size_t offset)
{
    T v;
    std::memcpy(&v, bytes.data() + offset, sizeof(T));
    return v;
}

template <typename T>
void append_le(std::vector<unsigned char>& out, T v)
{
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
}

void append_tag(std::vector<unsigned char>& out, const char (&tag)[5])
{
    out.insert(out.end(), tag, tag + 4);
}

bool tag_is(std::span<const unsigned char> bytes, std::size_t offset, const char* tag)
{
    return std::memcmp(bytes.data() + offset, tag, 4) == 0;
}

} // namespace

MultiChannelClip decode_wav(std::span<const unsigned char> bytes)
{
    require(bytes.size() >= 12, ErrorCode::MalformedHeader, "file shorter than RIFF header");
    require(tag_is(bytes, 0, "RIFF") && tag_is(bytes, 8, "WAVE"), ErrorCode::MalformedHeader,
            "missing RIFF/WAVE signature");

    bool have_fmt = false;
    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    std::span<const unsigned char> data;
    bool have_data = false;

    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const auto chunk_size = read_le<std::uint32_t>(bytes, pos + 4);
        const std::size_t body = pos + 8;
        if (tag_is(bytes, pos, "fmt ")) {
            require(chunk_size >= 16 && body + chunk_size <= bytes.size(), ErrorCode::MalformedHeader,
                    "truncated fmt chunk");
            format = read_le<std::uint16_t>(bytes, body);
            channels = read_le<std::uint16_t>(bytes, body + 2);
            rate = read_le<std::uint32_t>(bytes, body + 4);
            bits = read_le<std::uint16_t>(bytes, body + 14);
            if (format == kFormatExtensible) {
                require(chunk_size >= 40, ErrorCode::MalformedHeader, "truncated WAVE_FORMAT_EXTENSIBLE");
                // First two bytes of the sub-format GUID carry the real format tag.
                format = read_le<std::uint16_t>(bytes, body + 24);
            }
            have_fmt = true;
        } else if (tag_is(bytes, pos, "data")) {
            // Some writers leave the size at 0 or oversize when streaming; clamp to the file.
            const std::size_t avail = bytes.size() - body;
            data = bytes.subspan(body, std::min<std::size_t>(chunk_size, avail));
            have_data = true;
        }
        pos = body + chunk_size + (chunk_size & 1u);
    }

    require(have_fmt, ErrorCode::MalformedHeader, "no fmt chunk");
    require(have_data, ErrorCode::MalformedHeader, "no data chunk");
    require(channels >= 1, ErrorCode::MalformedHeader, "zero channels");
    require(rate >= 1, ErrorCode::MalformedHeader, "zero sample rate");

    const bool pcm16 = format == kFormatPcm && bits == 16;
    const bool f32 = format == kFormatFloat && bits == 32;
    if (!pcm16 && !f32)
        fail(ErrorCode::UnsupportedEncoding,
             "format tag " + std::to_string(format) + " with " + std::to_string(bits) + " bits");

    const std::size_t bytes_per_sample = bits / 8;
    const std::size_t frames = data.size() / (bytes_per_sample * channels);

    MultiChannelClip clip;
    clip.sample_rate = static_cast<int>(rate);
    clip.channels.assign(channels, std::vector<float>(frames));
    for (std::size_t n = 0; n < frames; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t off = (n * channels + c) * bytes_per_sample;
            if (pcm16)
                clip.channels[c][n] = static_cast<float>(read_le<std::int16_t>(data, off)) / 32768.0f;
            else
                clip.channels[c][n] = read_le<float>(data, off);
        }
    }
    return clip;
}

MultiChannelClip read_wav(const std::filesystem::path& path)
{
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec))
        fail(ErrorCode::MissingFile, path.string());
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorCode::IoFailure, "cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_wav(bytes);
}

AudioClip read_wav_mono(const std::filesystem::path& path) { return to_mono(read_wav(path)); }

AudioClip to_mono(const MultiChannelClip& clip)
{
    require(clip.channel_count() >= 1, ErrorCode::EmptyClip, "clip has no channels");
    AudioClip out;
    out.sample_rate = clip.sample_rate;
    if (clip.channel_count() == 1) {
        out.samples = clip.channels.front();
        return out;
    }
    const std::size_t frames = clip.frames();
    out.samples.resize(frames);
    const double scale = 1.0 / static_cast<double>(clip.channel_count());
    for (std::size_t n = 0; n < frames; ++n) {
        double acc = 0.0;
        for (const auto& ch : clip.channels)
            acc += ch[n];
        out.samples[n] = static_cast<float>(acc * scale);
    }
    return out;
}

AudioClip resample(const AudioClip& clip, int target_rate, int taps)
{
    require(target_rate > 0, ErrorCode::InvalidArgument, "target rate must be positive");
    require(clip.sample_rate > 0, ErrorCode::InvalidArgument, "source rate must be positive");
    require(taps >= 2 && taps % 2 == 0, ErrorCode::InvalidArgument, "tap count must be even");
    if (target_rate == clip.sample_rate)
        return clip;

    // Rational ratio up/down; output sample m sits at input position m*down/up.
    const long g = std::gcd(static_cast<long>(target_rate), static_cast<long>(clip.sample_rate));
    const long up = target_rate / g;
    const long down = clip.sample_rate / g;
    const std::size_t n_in = clip.size();
    const auto n_out = static_cast<std::size_t>(
        std::llround(static_cast<double>(n_in) * target_rate / clip.sample_rate));

    const double cutoff = std::min(1.0, static_cast<double>(target_rate) / clip.sample_rate);
    const int half = taps / 2;

    auto kernel = [&](double u) {
        if (std::abs(u) >= half)
            return 0.0;
        const double window = 0.5 * (1.0 + std::cos(std::numbers::pi * u / half));
        const double arg = std::numbers::pi * cutoff * u;
        const double sinc = arg == 0.0 ? 1.0 : std::sin(arg) / arg;
        return cutoff * sinc * window;
    };

    // One normalized tap table per fractional phase. For the rates used in
    // practice `up` is small (3 for 16k->48k, 160 for 44.1k->48k).
    const bool cache_phases = up <= 4096;
    std::vector<double> table;
    if (cache_phases) {
        table.resize(static_cast<std::size_t>(up) * taps);
        for (long ph = 0; ph < up; ++ph) {
            const double frac = static_cast<double>(ph) / up;
            double sum = 0.0;
            for (int k = 0; k < taps; ++k) {
                const double w = kernel(frac - (k - half + 1));
                table[ph * taps + k] = w;
                sum += w;
            }
            for (int k = 0; k < taps; ++k)
                table[ph * taps + k] /= sum;
        }
    }

    AudioClip out;
    out.sample_rate = target_rate;
    out.samples.resize(n_out);
    std::vector<double> local(taps);
    for (std::size_t m = 0; m < n_out; ++m) {
        const long long num = static_cast<long long>(m) * down;
        const long long base = num / up;
        const long ph = static_cast<long>(num % up);
        const double* w = nullptr;
        if (cache_phases) {
            w = &table[ph * taps];
        } else {
            const double frac = static_cast<double>(ph) / up;
            double sum = 0.0;
            for (int k = 0; k < taps; ++k) {
                local[k] = kernel(frac - (k - half + 1));
                sum += local[k];
            }
            for (auto& v : local)
                v /= sum;
            w = local.data();
        }
        double acc = 0.0;
        for (int k = 0; k < taps; ++k) {
            const long long idx = base + (k - half + 1);
            if (idx >= 0 && idx < static_cast<long long>(n_in))
                acc += w[k] * clip.samples[static_cast<std::size_t>(idx)];
        }
        out.samples[m] = static_cast<float>(acc);
    }
    return out;
}

std::vector<unsigned char> encode_wav(const AudioClip& clip, WavEncoding encoding, std::size_t* clipped)
{
    require(!clip.empty(), ErrorCode::EmptyClip, "refusing to write an empty clip");
    require(clip.sample_rate > 0, ErrorCode::InvalidArgument, "sample rate must be positive");

    const std::uint16_t bits = encoding == WavEncoding::Pcm16 ? 16 : 32;
    const std::uint16_t format = encoding == WavEncoding::Pcm16 ? kFormatPcm : kFormatFloat;
    const std::uint16_t block_align = bits / 8;
    const auto data_bytes = static_cast<std::uint32_t>(clip.size() * block_align);

    std::vector<unsigned char> out;
    out.reserve(44 + data_bytes);
    append_tag(out, "RIFF");
    append_le<std::uint32_t>(out, 36 + data_bytes);
    append_tag(out, "WAVE");
    append_tag(out, "fmt ");
    append_le<std::uint32_t>(out, 16);
    append_le<std::uint16_t>(out, format);
    append_le<std::uint16_t>(out, 1);
    append_le<std::uint32_t>(out, static_cast<std::uint32_t>(clip.sample_rate));
    append_le<std::uint32_t>(out, static_cast<std::uint32_t>(clip.sample_rate) * block_align);
    append_le<std::uint16_t>(out, block_align);
    append_le<std::uint16_t>(out, bits);
    append_tag(out, "data");
    append_le<std::uint32_t>(out, data_bytes);

    std::size_t n_clipped = 0;
    for (float s : clip.samples) {
        float v = s;
        if (!(v >= -1.0f && v <= 1.0f)) {
            ++n_clipped;
            v = std::isnan(v) ? 0.0f : std::clamp(v, -1.0f, 1.0f);
        }
        if (encoding == WavEncoding::Pcm16) {
            const long q = std::lround(static_cast<double>(v) * 32768.0);
            append_le<std::int16_t>(out, static_cast<std::int16_t>(std::clamp(q, -32768L, 32767L)));
        } else {
            append_le<float>(out, v);
        }
    }
    if (clipped)
        *clipped = n_clipped;
    return out;
}

std::size_t write_wav(const AudioClip& clip, const std::filesystem::path& path, WavEncoding encoding)
{
    std::size_t clipped = 0;
    const auto bytes = encode_wav(clip, encoding, &clipped);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        fail(ErrorCode::IoFailure, "write failed for " + path.string());
    return clipped;
}

} // namespace pt
