#include "pianotimbre/dataset_index.hpp"

#include "fileutil.hpp"
#include "pianotimbre/audio_io.hpp"
#include "pianotimbre/error.hpp"

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <array>
#include <memory>

namespace pt {

std::string sha256_hex(std::span<const unsigned char> bytes)
{
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), digest.data(), &len) != 1)
        fail(ErrorCode::IoFailure, "SHA-256 computation failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

std::string sha256_file(const std::filesystem::path& path)
{
    return sha256_hex(detail::read_bytes(path));
}

std::filesystem::path DatasetIndex::path_of(const DatasetEntry& e) const
{
    const std::filesystem::path p(e.file);
    return p.is_absolute() ? p : root / p;
}

std::string DatasetIndex::checksum() const
{
    std::string text;
    for (const auto& e : entries)
        text += e.file + '\t' + std::to_string(e.samples) + '\t' + e.sha256 + '\n';
    return sha256_hex({reinterpret_cast<const unsigned char*>(text.data()), text.size()});
}

DatasetIndex build_index(const std::vector<std::filesystem::path>& files, const std::filesystem::path& root)
{
    DatasetIndex index;
    index.root = root;
    for (const auto& f : files) {
        const auto full = f.is_absolute() ? f : root / f;
        const auto bytes = detail::read_bytes(full);
        const auto clip = decode_wav(bytes);
        if (index.sample_rate == 0)
            index.sample_rate = clip.sample_rate;
        require(clip.sample_rate == index.sample_rate, ErrorCode::WrongSampleRate,
                full.string() + " is at " + std::to_string(clip.sample_rate) + " Hz, corpus at " +
                    std::to_string(index.sample_rate));
        index.entries.push_back({f.generic_string(), clip.frames(), sha256_hex(bytes)});
    }
    return index;
}

std::string manifest_to_json(const DatasetIndex& index)
{
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : index.entries)
        entries.push_back({{"file", e.file}, {"samples", e.samples}, {"sha256", e.sha256}});
    const nlohmann::json j{{"version", kManifestVersion}, {"sample_rate", index.sample_rate},
                           {"preset", index.preset},      {"seed", index.seed},
                           {"entries", entries},          {"checksum", index.checksum()}};
    return j.dump(2) + "\n";
}

DatasetIndex manifest_from_json(const std::string& text, const std::filesystem::path& root)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::MalformedHeader, std::string("manifest is not valid JSON: ") + e.what());
    }
    require(j.is_object() && j.value("version", -1) == kManifestVersion, ErrorCode::SchemaVersionMismatch,
            "unsupported manifest version");
    DatasetIndex index;
    index.root = root;
    try {
        index.sample_rate = j.at("sample_rate").get<int>();
        index.preset = j.value("preset", std::string());
        index.seed = j.value("seed", std::uint64_t{0});
        for (const auto& e : j.at("entries"))
            index.entries.push_back(
                {e.at("file").get<std::string>(), e.at("samples").get<std::size_t>(), e.value("sha256", std::string())});
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::MalformedHeader, std::string("malformed manifest: ") + e.what());
    }
    if (j.contains("checksum"))
        require(j["checksum"].get<std::string>() == index.checksum(), ErrorCode::MalformedHeader,
                "manifest checksum does not match its entries");
    return index;
}

void save_manifest(const DatasetIndex& index, const std::filesystem::path& path)
{
    detail::write_text(path, manifest_to_json(index));
}

DatasetIndex load_manifest(const std::filesystem::path& path)
{
    auto index = manifest_from_json(detail::read_text(path), path.parent_path());
    for (const auto& e : index.entries) {
        const auto p = index.path_of(e);
        if (!std::filesystem::is_regular_file(p))
            fail(ErrorCode::MissingFile, "manifest entry " + p.string());
        std::ifstream probe(p, std::ios::binary);
        if (!probe)
            fail(ErrorCode::IoFailure, "cannot read manifest entry " + p.string());
    }
    return index;
}

} // namespace pt
