#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace pt {

inline constexpr int kManifestVersion = 1;

struct DatasetEntry {
    std::string file; // relative to the manifest directory, or absolute
    std::size_t samples = 0;
    std::string sha256;

    bool operator==(const DatasetEntry&) const = default;
};

/// Corpus listing written next to the audio files as manifest.json.
struct DatasetIndex {
    int sample_rate = 0;
    std::string preset;
    std::uint64_t seed = 0;
    std::vector<DatasetEntry> entries;
    std::filesystem::path root; // directory relative entries resolve against

    std::size_t size() const noexcept { return entries.size(); }
    bool empty() const noexcept { return entries.empty(); }
    std::filesystem::path path_of(const DatasetEntry& e) const;

    /// SHA-256 over the entry list (file, samples, digest per line).
    std::string checksum() const;
};

std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Reads every file and fills samples and digests. Throws MissingFile or the
/// WAV decoder's error for unreadable files.
DatasetIndex build_index(const std::vector<std::filesystem::path>& files, const std::filesystem::path& root);

std::string manifest_to_json(const DatasetIndex& index);
/// Validates version and checksum; entries are not reopened.
DatasetIndex manifest_from_json(const std::string& text, const std::filesystem::path& root);

void save_manifest(const DatasetIndex& index, const std::filesystem::path& path);
/// Loads and checks that every listed file exists and is readable.
DatasetIndex load_manifest(const std::filesystem::path& path);

} // namespace pt
