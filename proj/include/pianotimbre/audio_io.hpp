#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace pt {

/// Mono audio in [-1, 1] with its sample rate. Everything downstream of
/// read_wav works on this type.
struct AudioClip {
    std::vector<float> samples;
    int sample_rate = 0;

    std::size_t size() const noexcept { return samples.size(); }
    bool empty() const noexcept { return samples.empty(); }
    double duration_seconds() const noexcept
    {
        return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
    }
};

/// A clip as stored on disk, before mixdown. channels[c][n].
struct MultiChannelClip {
    std::vector<std::vector<float>> channels;
    int sample_rate = 0;

    std::size_t channel_count() const noexcept { return channels.size(); }
    std::size_t frames() const noexcept { return channels.empty() ? 0 : channels.front().size(); }
};

enum class WavEncoding { Pcm16, Float32 };

/// Reads a RIFF/WAVE file holding PCM16 or IEEE float32 samples.
MultiChannelClip read_wav(const std::filesystem::path& path);

/// read_wav followed by to_mono.
AudioClip read_wav_mono(const std::filesystem::path& path);

/// Per-sample mean across channels.
AudioClip to_mono(const MultiChannelClip& clip);

/// Hann-windowed sinc interpolation, 64 taps by default. Output length is
/// round(N * target_rate / source_rate).
AudioClip resample(const AudioClip& clip, int target_rate, int taps = 64);

/// Writes the clip, hard-clipping anything outside [-1, 1]. Returns the number
/// of samples that had to be clipped.
std::size_t write_wav(const AudioClip& clip, const std::filesystem::path& path,
                      WavEncoding encoding = WavEncoding::Pcm16);

/// Encodes a clip into WAV bytes without touching the filesystem.
std::vector<unsigned char> encode_wav(const AudioClip& clip, WavEncoding encoding,
                                      std::size_t* clipped = nullptr);

/// Decodes WAV bytes; same rules as read_wav.
MultiChannelClip decode_wav(std::span<const unsigned char> bytes);

} // namespace pt
